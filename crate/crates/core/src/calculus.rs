//! Second-order finite-difference operators on [`Grid`]s.
//!
//! Interior nodes use central stencils; boundary nodes use second-order
//! one-sided stencils, so every output is defined on the whole grid. Mixed
//! partials are symmetrized, which makes Hessians exactly symmetric.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::Result;
use crate::fields::{
    same_grid, ComplexField, Grid, MatrixField, OnGrid, ScalarField, TimeSeries, VectorField,
};

/// How boundary nodes enter residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryScheme {
    /// Boundary nodes carry one-sided values and are included.
    OneSided,
    /// A band of `band` nodes per face is excluded.
    DropBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffOpts {
    pub scheme: BoundaryScheme,
    pub band: usize,
}

impl Default for DiffOpts {
    fn default() -> Self {
        DiffOpts {
            scheme: BoundaryScheme::DropBand,
            band: 3,
        }
    }
}

impl DiffOpts {
    pub fn one_sided() -> Self {
        DiffOpts {
            scheme: BoundaryScheme::OneSided,
            band: 0,
        }
    }

    /// Nodes that count towards norms.
    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        match self.scheme {
            BoundaryScheme::OneSided => vec![true; grid.len()],
            BoundaryScheme::DropBand => grid.interior_mask(self.band.max(1)),
        }
    }
}

/// Calls `f(start, stride, len)` for every grid line along `axis`.
fn for_each_line(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let stride = grid.stride(axis);
    let len = grid.points(axis);
    if grid.dim() == 1 {
        f(0, stride, len);
    } else if axis == 0 {
        for start in 0..grid.points(1) {
            f(start, stride, len);
        }
    } else {
        for i in 0..grid.points(0) {
            f(i * grid.points(1), stride, len);
        }
    }
}

/// First derivative along `axis` of raw nodal values.
pub(crate) fn d1(grid: &Grid, u: &[f64], axis: usize) -> Vec<f64> {
    let h = grid.spacing(axis);
    let inv2h = 0.5 / h;
    let mut out = vec![0.0; u.len()];
    for_each_line(grid, axis, |s, st, n| {
        let at = |i: usize| u[s + i * st];
        out[s] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h;
        for i in 1..n - 1 {
            out[s + i * st] = (at(i + 1) - at(i - 1)) * inv2h;
        }
        out[s + (n - 1) * st] = (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h;
    });
    out
}

/// Second derivative along `axis` of raw nodal values.
pub(crate) fn d2(grid: &Grid, u: &[f64], axis: usize) -> Vec<f64> {
    let h = grid.spacing(axis);
    let inv_h2 = 1.0 / (h * h);
    let mut out = vec![0.0; u.len()];
    for_each_line(grid, axis, |s, st, n| {
        let at = |i: usize| u[s + i * st];
        out[s] = (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * inv_h2;
        for i in 1..n - 1 {
            out[s + i * st] = (at(i + 1) - 2.0 * at(i) + at(i - 1)) * inv_h2;
        }
        out[s + (n - 1) * st] =
            (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) * inv_h2;
    });
    out
}

/// Symmetrized mixed derivative, or the pure second derivative when `i == j`.
pub(crate) fn dij(grid: &Grid, u: &[f64], i: usize, j: usize) -> Vec<f64> {
    if i == j {
        return d2(grid, u, i);
    }
    let a = d1(grid, &d1(grid, u, j), i);
    let b = d1(grid, &d1(grid, u, i), j);
    a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
}

fn check_axis(grid: &Grid, axis: usize) {
    assert!(
        axis < grid.dim(),
        "axis {axis} out of range for a {}-D grid",
        grid.dim()
    );
}

pub fn partial(u: &ScalarField, axis: usize) -> ScalarField {
    check_axis(u.grid(), axis);
    ScalarField::raw(*u.grid(), d1(u.grid(), u.values(), axis))
}

pub fn mixed_partial(u: &ScalarField, i: usize, j: usize) -> ScalarField {
    check_axis(u.grid(), i);
    check_axis(u.grid(), j);
    ScalarField::raw(*u.grid(), dij(u.grid(), u.values(), i, j))
}

pub fn gradient(u: &ScalarField) -> VectorField {
    let g = *u.grid();
    VectorField::raw(g, (0..g.dim()).map(|a| d1(&g, u.values(), a)).collect())
}

pub fn hessian(u: &ScalarField) -> MatrixField {
    let g = *u.grid();
    let n = g.dim();
    let mut entries = vec![Vec::new(); n * n];
    for i in 0..n {
        for j in i..n {
            let e = dij(&g, u.values(), i, j);
            if i != j {
                entries[j * n + i] = e.clone();
            }
            entries[i * n + j] = e;
        }
    }
    MatrixField::raw(g, n, entries)
}

pub fn laplacian(u: &ScalarField) -> ScalarField {
    let g = *u.grid();
    let mut out = vec![0.0; g.len()];
    for a in 0..g.dim() {
        for (o, v) in out.iter_mut().zip(d2(&g, u.values(), a)) {
            *o += v;
        }
    }
    ScalarField::raw(g, out)
}

/// `Σ_i ∂_i v_i` for a vector field with one component per axis.
pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    let g = *v.grid();
    if v.len() != g.dim() {
        return Err(crate::Error::ShapeMismatch(format!(
            "divergence of a {}-vector on a {}-D grid",
            v.len(),
            g.dim()
        )));
    }
    let mut out = vec![0.0; g.len()];
    for a in 0..g.dim() {
        for (o, d) in out.iter_mut().zip(d1(&g, v.component(a), a)) {
            *o += d;
        }
    }
    Ok(ScalarField::raw(g, out))
}

/// Row-wise divergence: component `i` is `Σ_j ∂_j Σ_ij`.
pub fn matrix_divergence(sigma: &MatrixField) -> Result<VectorField> {
    let g = *sigma.grid();
    let n = sigma.n();
    if n != g.dim() {
        return Err(crate::Error::ShapeMismatch(format!(
            "{n}x{n} matrix field on a {}-D grid",
            g.dim()
        )));
    }
    let comps = (0..n)
        .map(|i| {
            let mut c = vec![0.0; g.len()];
            for j in 0..n {
                for (o, d) in c.iter_mut().zip(d1(&g, sigma.entry(i, j), j)) {
                    *o += d;
                }
            }
            c
        })
        .collect();
    Ok(VectorField::raw(g, comps))
}

fn weighted_laplacian_raw(grid: &Grid, rho: &[f64], sigma: &MatrixField) -> Vec<f64> {
    let n = sigma.n();
    let mut out = vec![0.0; grid.len()];
    for i in 0..n {
        for j in 0..n {
            let prod: Vec<f64> = sigma
                .entry(i, j)
                .iter()
                .zip(rho)
                .map(|(s, r)| s * r)
                .collect();
            for (o, d) in out.iter_mut().zip(dij(grid, &prod, i, j)) {
                *o += d;
            }
        }
    }
    out
}

/// `Σ_ij ∂_i ∂_j (Σ_ij ρ)`, differentiating the products directly.
pub fn weighted_laplacian(rho: &ScalarField, sigma: &MatrixField) -> Result<ScalarField> {
    same_grid(rho.grid(), sigma.grid())?;
    if sigma.n() != rho.grid().dim() {
        return Err(crate::Error::ShapeMismatch(
            "diffusion tensor size differs from the grid dimension".into(),
        ));
    }
    let g = *rho.grid();
    Ok(ScalarField::raw(
        g,
        weighted_laplacian_raw(&g, rho.values(), sigma),
    ))
}

/// Weighted Laplacian applied to real and imaginary parts separately.
pub fn weighted_laplacian_complex(psi: &ComplexField, sigma: &MatrixField) -> Result<ComplexField> {
    let re = weighted_laplacian(&psi.re(), sigma)?;
    let im = weighted_laplacian(&psi.im(), sigma)?;
    Ok(ComplexField::raw(
        *psi.grid(),
        re.values()
            .iter()
            .zip(im.values())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect(),
    ))
}

pub fn laplacian_complex(psi: &ComplexField) -> ComplexField {
    let re = laplacian(&psi.re());
    let im = laplacian(&psi.im());
    ComplexField::raw(
        *psi.grid(),
        re.values()
            .iter()
            .zip(im.values())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect(),
    )
}

/// `Σ_ij ∂_i ∂_j Σ_ij`, i.e. the weighted Laplacian of the constant one.
pub fn double_divergence(sigma: &MatrixField) -> Result<ScalarField> {
    weighted_laplacian(&ScalarField::constant(*sigma.grid(), 1.0), sigma)
}

/// Second-order time differencing of raw slices.
pub fn time_derivative_raw<T>(slices: &[&[T]], dt: f64) -> Vec<Vec<T>>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let m = slices.len();
    assert!(m >= 3, "time differencing needs at least three slices");
    let inv2 = 0.5 / dt;
    let len = slices[0].len();
    (0..m)
        .map(|j| {
            (0..len)
                .map(|k| {
                    let u = |s: usize| slices[s][k];
                    if j == 0 {
                        (u(1) * 4.0 - u(0) * 3.0 - u(2)) * inv2
                    } else if j == m - 1 {
                        (u(m - 1) * 3.0 - u(m - 2) * 4.0 + u(m - 3)) * inv2
                    } else {
                        (u(j + 1) - u(j - 1)) * inv2
                    }
                })
                .collect()
        })
        .collect()
}

pub fn time_derivative(series: &TimeSeries<ScalarField>) -> TimeSeries<ScalarField> {
    let g = *series.grid();
    let raw: Vec<&[f64]> = series.slices().iter().map(|s| s.values()).collect();
    let slices = time_derivative_raw(&raw, series.time().dt())
        .into_iter()
        .map(|v| ScalarField::raw(g, v))
        .collect();
    TimeSeries::new(*series.time(), slices).expect("shape preserved")
}

pub fn time_derivative_complex(series: &TimeSeries<ComplexField>) -> TimeSeries<ComplexField> {
    let g = *series.grid();
    let raw: Vec<&[Complex64]> = series.slices().iter().map(|s| s.values()).collect();
    let slices = time_derivative_raw(&raw, series.time().dt())
        .into_iter()
        .map(|v| ComplexField::raw(g, v))
        .collect();
    TimeSeries::new(*series.time(), slices).expect("shape preserved")
}
