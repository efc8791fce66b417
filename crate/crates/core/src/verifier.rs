//! Residuals of the optimality system, the wave equation and the identities
//! that connect them, plus grid-refinement order studies.
//!
//! Every check produces a [`Residual`]: a residual value per node and slice
//! together with the size of the largest term that entered it. Norms skip a
//! band of [`BAND`] nodes per face and the first and last slice; the
//! inclusive norms are reported next to them.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{solve_bridge, BridgeSolution, SolverOptions};
use crate::calculus::{
    divergence, double_divergence, gradient, hessian, laplacian, time_derivative,
    time_derivative_complex, weighted_laplacian, weighted_laplacian_complex,
};
use crate::error::{Error, Result};
use crate::fields::{
    same_grid, ComplexField, Grid, MatrixField, OnGrid, ScalarField, TimeGrid, TimeSeries,
    VectorField,
};
use crate::madelung::{to_wave, WaveField};
use crate::manufactured::{build_case, run_case, CaseTag, ManufacturedSolution, PrimalOptions};
use crate::par_collect;
use crate::potentials::{
    potential_series, v_sb_series, PotentialField, PotentialInputs, PotentialKind,
};
use crate::problem::{Brownian, Coefficients, DensitySpec, ProblemData};

/// Boundary nodes per face left out of the interior norms.
pub const BAND: usize = 3;

/// Default relative tolerance for a single-grid residual.
pub const DEFAULT_REL_TOL: f64 = 5e-3;

/// Single-grid tolerance factor of the `R` equation. `R = ½ log ρ` loses
/// relative accuracy towards the edge of the support, so one grid resolves
/// it less well than the other checks even though it converges at the same
/// order.
pub const R_DYNAMICS_TOL_FACTOR: f64 = 10.0;

/// Tolerance of the algebraic Bohm identity.
pub const IDENTITY_REL_TOL: f64 = 1e-10;

/// Relative density level that bounds the support used for unweighted
/// residuals of bridge solutions. Outside it the factors carry the error of
/// truncating the heat kernel at the box faces.
pub const SUPPORT_LEVEL: f64 = 1e-6;

/// Relative residual treated as exact.
pub const ROUNDING_LEVEL: f64 = 1e-10;

/// Accepted range for a second-order refinement slope.
pub const SLOPE_RANGE: (f64, f64) = (1.7, 2.3);

pub mod names {
    pub const PRIMAL: &str = "primal";
    pub const DUAL: &str = "dual";
    pub const SCHRODINGER: &str = "schrodinger";
    pub const R_DYNAMICS: &str = "r_dynamics";
    pub const BOHM_A: &str = "bohm_a";
    pub const BOHM_B: &str = "bohm_b";
    pub const BOHM_C: &str = "bohm_c";
    pub const LOG_DENSITY: &str = "log_density";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub n: usize,
    pub h: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub dt: f64,
}

impl GridInfo {
    pub fn new(grid: &Grid, time: Option<&TimeGrid>) -> Self {
        GridInfo {
            n: grid.points(0),
            h: grid.spacing(0),
            m: time.map_or(0, |t| t.steps()),
            dt: time.map_or(0.0, |t| t.dt()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    Linf,
}

/// What a report has to satisfy to pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// Interior `L∞ ≤ tol · scale`.
    Relative { tol: f64 },
    /// Interior `L∞ ≤ tol`.
    Absolute { tol: f64 },
    /// Refinement slope of the chosen norm inside `[min, max]`.
    Slope { min: f64, max: f64, norm: Norm },
}

impl Criterion {
    pub fn second_order(norm: Norm) -> Self {
        Criterion::Slope {
            min: SLOPE_RANGE.0,
            max: SLOPE_RANGE.1,
            norm,
        }
    }
}

/// Norms of one check on one grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelNorms {
    pub grid: GridInfo,
    pub l2: f64,
    pub linf: f64,
    pub l2_full: f64,
    pub linf_full: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub check: String,
    pub grid: GridInfo,
    pub l2: f64,
    pub linf: f64,
    pub scale: f64,
    /// Least-squares slope of `log L2` against `log h`; needs three levels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_linf: Option<f64>,
    pub pass: bool,
    pub l2_full: f64,
    pub linf_full: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,
    /// Relative density level below which nodes are left out of the norms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<LevelNorms>,
}

impl ResidualReport {
    fn from_level(check: &str, level: LevelNorms) -> Self {
        let mut r = ResidualReport {
            check: check.to_string(),
            grid: level.grid,
            l2: level.l2,
            linf: level.linf,
            scale: level.scale,
            slope: None,
            slope_linf: None,
            pass: false,
            l2_full: level.l2_full,
            linf_full: level.linf_full,
            criterion: None,
            support: None,
            levels: Vec::new(),
        };
        r.judge(single_level_criterion(check, DEFAULT_REL_TOL));
        r
    }

    pub fn level(&self) -> LevelNorms {
        LevelNorms {
            grid: self.grid,
            l2: self.l2,
            linf: self.linf,
            l2_full: self.l2_full,
            linf_full: self.linf_full,
            scale: self.scale,
        }
    }

    /// Re-evaluate `pass` against `c`.
    pub fn judge(&mut self, c: Criterion) -> bool {
        self.pass = match c {
            Criterion::Relative { tol } => self.linf <= tol * self.scale,
            Criterion::Absolute { tol } => self.linf <= tol,
            Criterion::Slope { min, max, norm } => {
                let s = match norm {
                    Norm::L2 => self.slope,
                    Norm::Linf => self.slope_linf,
                };
                s.is_some_and(|s| s >= min && s <= max) || self.exact_to_rounding()
            }
        };
        self.criterion = Some(c);
        self.pass
    }

    /// Every level sits at rounding level relative to its terms, so no
    /// discretization error is left to converge.
    pub fn exact_to_rounding(&self) -> bool {
        let levels = if self.levels.is_empty() {
            vec![self.level()]
        } else {
            self.levels.clone()
        };
        levels.iter().all(|l| l.linf <= ROUNDING_LEVEL * l.scale)
    }

    /// Merge single-level reports of one check, ordered coarse to fine.
    /// The merged report carries the finest level's norms.
    pub fn from_levels(levels: &[ResidualReport]) -> Result<Self> {
        let finest = levels
            .iter()
            .min_by(|a, b| a.grid.h.total_cmp(&b.grid.h))
            .ok_or_else(|| Error::param("levels", "no levels to merge"))?;
        if levels.iter().any(|l| l.check != finest.check) {
            return Err(Error::param("levels", "reports of different checks"));
        }
        let mut all: Vec<LevelNorms> = levels.iter().map(|l| l.level()).collect();
        all.sort_by(|a, b| b.grid.h.total_cmp(&a.grid.h));
        let mut out = ResidualReport::from_level(&finest.check, finest.level());
        out.support = finest.support;
        out.slope = fit_slope(&all, Norm::L2);
        out.slope_linf = fit_slope(&all, Norm::Linf);
        out.levels = all;
        Ok(out)
    }
}

/// Criterion for one grid, with `tol` as the relative tolerance of the PDE
/// checks. The Bohm identity keeps its own tolerance.
pub fn single_level_criterion(check: &str, tol: f64) -> Criterion {
    let tol = match check {
        names::BOHM_C => IDENTITY_REL_TOL,
        names::R_DYNAMICS => R_DYNAMICS_TOL_FACTOR * tol,
        _ => tol,
    };
    Criterion::Relative { tol }
}

/// Least-squares slope of `log norm` against `log h`.
///
/// `None` with fewer than three levels or when a norm is zero.
pub fn fit_slope(levels: &[LevelNorms], norm: Norm) -> Option<f64> {
    if levels.len() < 3 {
        return None;
    }
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .map(|l| {
            let v = match norm {
                Norm::L2 => l.l2,
                Norm::Linf => l.linf,
            };
            (l.grid.h.ln(), v.ln())
        })
        .collect();
    if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// A residual field on every slice (or a single static slice).
#[derive(Debug, Clone)]
pub struct Residual {
    pub check: String,
    pub grid: Grid,
    pub time: Option<TimeGrid>,
    /// Signed residual for real checks, modulus for complex ones.
    pub values: Vec<Vec<f64>>,
    /// Largest term magnitude per node.
    pub term_size: Vec<Vec<f64>>,
    /// Nodes where the density is resolved, per slice; all nodes when unset.
    pub support: Option<Vec<Vec<bool>>>,
    pub support_level: Option<f64>,
}

impl Residual {
    fn interior_slices(&self) -> std::ops::Range<usize> {
        let m = self.values.len();
        match self.time {
            Some(_) if m >= 3 => 1..m - 1,
            _ => 0..m,
        }
    }

    pub fn field(&self, j: usize) -> ScalarField {
        ScalarField::raw(self.grid, self.values[j].clone())
    }

    /// Restrict the interior norms to nodes where `ρ > level · max ρ` on the
    /// same slice.
    pub fn with_support(mut self, rho: &TimeSeries<ScalarField>, level: f64) -> Result<Self> {
        same_grid(&self.grid, rho.grid())?;
        if rho.len() != self.values.len() {
            return Err(Error::ShapeMismatch(
                "density and residual slice counts differ".into(),
            ));
        }
        self.support = Some(
            rho.slices()
                .iter()
                .map(|r| {
                    let cut = level * r.max();
                    r.values().iter().map(|v| *v > cut).collect()
                })
                .collect(),
        );
        self.support_level = Some(level);
        Ok(self)
    }

    pub fn norms(&self) -> LevelNorms {
        let band = self.grid.interior_mask(BAND);
        let w = self.grid.quadrature_weights();
        let m = self.values.len();
        let dt = self.time.map_or(1.0, |t| t.dt());
        let inner = self.interior_slices();
        let (mut l2, mut linf, mut l2f, mut linff) = (0.0, 0.0f64, 0.0, 0.0f64);
        let mut scale = 0.0f64;
        for (j, slice) in self.values.iter().enumerate() {
            let tw_full = match self.time {
                Some(_) if j == 0 || j + 1 == m => 0.5 * dt,
                _ => dt,
            };
            let in_time = inner.contains(&j);
            let support = self.support.as_ref().map(|s| &s[j]);
            for (k, &r) in slice.iter().enumerate() {
                let a = r * r;
                l2f += a * w[k] * tw_full;
                linff = linff.max(r.abs());
                if in_time && band[k] && support.is_none_or(|s| s[k]) {
                    l2 += a * w[k] * dt;
                    linf = linf.max(r.abs());
                    scale = scale.max(self.term_size[j][k]);
                }
            }
        }
        LevelNorms {
            grid: GridInfo::new(&self.grid, self.time.as_ref()),
            l2: l2.sqrt(),
            linf,
            l2_full: l2f.sqrt(),
            linf_full: linff,
            scale,
        }
    }

    pub fn report(&self) -> ResidualReport {
        let mut r = ResidualReport::from_level(&self.check, self.norms());
        r.support = self.support_level;
        r
    }
}

/// A residual slice and the pointwise largest magnitude of its terms.
type SliceTerms = (Vec<f64>, Vec<f64>);

fn real_slice(value: Vec<f64>, terms: &[&[f64]]) -> SliceTerms {
    let size = (0..value.len())
        .map(|k| terms.iter().map(|t| t[k].abs()).fold(0.0, f64::max))
        .collect();
    (value, size)
}

fn assemble(
    check: &str,
    grid: Grid,
    time: Option<TimeGrid>,
    slices: Vec<Result<SliceTerms>>,
) -> Result<Residual> {
    let slices = slices.into_iter().collect::<Result<Vec<_>>>()?;
    let (values, term_size) = slices.into_iter().unzip();
    Ok(Residual {
        check: check.to_string(),
        grid,
        time,
        values,
        term_size,
        support: None,
        support_level: None,
    })
}

fn check_series<T: OnGrid>(a: &TimeSeries<T>, data: &ProblemData) -> Result<()> {
    same_grid(a.grid(), &data.grid)?;
    if *a.time() != data.time {
        return Err(Error::ShapeMismatch(
            "series and problem on different time grids".into(),
        ));
    }
    Ok(())
}

/// `f + g gᵀ∇S`.
fn transport(c: &Coefficients, s: &ScalarField) -> Result<VectorField> {
    c.drift.add(&c.control_metric().apply(&gradient(s))?)
}

fn product(a: &VectorField, s: &ScalarField) -> Result<VectorField> {
    a.scale_by(s)
}

/// `aᵀ M b` per node.
fn quad_form(m: &MatrixField, a: &VectorField, b: &VectorField) -> Result<Vec<f64>> {
    Ok(a.dot(&m.apply(b)?)?.into_values())
}

/// `⟨A, B⟩` per node.
fn frobenius(a: &MatrixField, b: &MatrixField) -> Vec<f64> {
    let n = a.n();
    (0..a.grid().len())
        .map(|k| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += a.entry(i, j)[k] * b.entry(i, j)[k];
                }
            }
            acc
        })
        .collect()
}

/// `∂_tρ + ∇·(ρ(f + g gᵀ∇S)) − ½Δ_Σρ`.
pub fn primal_residual_field(
    rho: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    data: &ProblemData,
) -> Result<Residual> {
    check_series(rho, data)?;
    check_series(s, data)?;
    let coeffs = data.coefficient_series()?;
    let drho = time_derivative(rho);
    let slices = par_collect(rho.len(), |j| {
        let r = rho.slice(j);
        let flux = product(&transport(&coeffs[j], s.slice(j))?, r)?;
        let div = divergence(&flux)?;
        let half_wl = weighted_laplacian(r, &coeffs[j].diffusion)?.map(|v| 0.5 * v);
        let dt = drho.slice(j).values();
        let value = (0..r.values().len())
            .map(|k| dt[k] + div.values()[k] - half_wl.values()[k])
            .collect();
        Ok(real_slice(value, &[dt, div.values(), half_wl.values()]))
    });
    assemble(names::PRIMAL, data.grid, Some(data.time), slices)
}

pub fn primal_residual(
    rho: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    data: &ProblemData,
) -> Result<ResidualReport> {
    Ok(primal_residual_field(rho, s, data)?.report())
}

/// `∂_tS + ⟨∇S, f⟩ + ½⟨∇S, g gᵀ∇S⟩ + ½⟨Σ, Hess S⟩ − q`.
pub fn dual_residual_field(s: &TimeSeries<ScalarField>, data: &ProblemData) -> Result<Residual> {
    check_series(s, data)?;
    let coeffs = data.coefficient_series()?;
    let ds = time_derivative(s);
    let slices = par_collect(s.len(), |j| {
        let c = &coeffs[j];
        let grad = gradient(s.slice(j));
        let adv = grad.dot(&c.drift)?.into_values();
        let ctl: Vec<f64> = quad_form(&c.control_metric(), &grad, &grad)?
            .into_iter()
            .map(|v| 0.5 * v)
            .collect();
        let diff: Vec<f64> = frobenius(&c.diffusion, &hessian(s.slice(j)))
            .into_iter()
            .map(|v| 0.5 * v)
            .collect();
        let dt = ds.slice(j).values();
        let q = c.cost.values();
        let value = (0..dt.len())
            .map(|k| dt[k] + adv[k] + ctl[k] + diff[k] - q[k])
            .collect();
        Ok(real_slice(value, &[dt, &adv, &ctl, &diff, q]))
    });
    assemble(names::DUAL, data.grid, Some(data.time), slices)
}

pub fn dual_residual(s: &TimeSeries<ScalarField>, data: &ProblemData) -> Result<ResidualReport> {
    Ok(dual_residual_field(s, data)?.report())
}

/// `∂_tR + ⟨∇R, b⟩ + ½∇·b − ½Δ_ΣR − ‖∇R‖²_Σ − (¼ − ½R) ddiv Σ` with
/// `b = f + g gᵀ∇S`.
pub fn r_dynamics_residual_field(
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    data: &ProblemData,
) -> Result<Residual> {
    check_series(r, data)?;
    check_series(s, data)?;
    let coeffs = data.coefficient_series()?;
    let dr = time_derivative(r);
    let slices = par_collect(r.len(), |j| {
        let c = &coeffs[j];
        let rj = r.slice(j);
        let b = transport(c, s.slice(j))?;
        let gr = gradient(rj);
        let adv = gr.dot(&b)?.into_values();
        let half_div: Vec<f64> = divergence(&b)?.values().iter().map(|v| 0.5 * v).collect();
        let half_wl: Vec<f64> = weighted_laplacian(rj, &c.diffusion)?
            .values()
            .iter()
            .map(|v| 0.5 * v)
            .collect();
        let norm = quad_form(&c.diffusion, &gr, &gr)?;
        let ddiv = double_divergence(&c.diffusion)?;
        let source: Vec<f64> = rj
            .values()
            .iter()
            .zip(ddiv.values())
            .map(|(r, d)| (0.25 - 0.5 * r) * d)
            .collect();
        let dt = dr.slice(j).values();
        let value = (0..dt.len())
            .map(|k| dt[k] + adv[k] + half_div[k] - half_wl[k] - norm[k] - source[k])
            .collect();
        Ok(real_slice(
            value,
            &[dt, &adv, &half_div, &half_wl, &norm, &source],
        ))
    });
    assemble(names::R_DYNAMICS, data.grid, Some(data.time), slices)
}

pub fn r_dynamics_residual(
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    data: &ProblemData,
) -> Result<ResidualReport> {
    Ok(r_dynamics_residual_field(r, s, data)?.report())
}

/// `iλ∂_tψ + (λ²/2)Δ_Σψ − Vψ`, reported as a modulus.
///
/// `sigma` holds one matrix field per slice, or a single one for all slices.
pub fn schrodinger_residual_field(
    w: &WaveField,
    v: &PotentialField,
    sigma: &[MatrixField],
) -> Result<Residual> {
    let grid = *w.grid();
    let time = *w.psi.time();
    same_grid(&grid, v.values.grid())?;
    if *v.values.time() != time {
        return Err(Error::ShapeMismatch(
            "wave and potential on different time grids".into(),
        ));
    }
    if sigma.len() != 1 && sigma.len() != w.psi.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} diffusion slices for {} wave slices",
            sigma.len(),
            w.psi.len()
        )));
    }
    let lambda = w.lambda;
    let dpsi = time_derivative_complex(&w.psi);
    let slices = par_collect(w.psi.len(), |j| {
        let sig = if sigma.len() == 1 {
            &sigma[0]
        } else {
            &sigma[j]
        };
        same_grid(&grid, sig.grid())?;
        let psi = w.psi.slice(j).values();
        let lap = weighted_laplacian_complex(w.psi.slice(j), sig)?;
        let pot = v.values.slice(j).values();
        let i = Complex64::i();
        let mut value = Vec::with_capacity(psi.len());
        let mut t = [Vec::new(), Vec::new(), Vec::new()];
        for k in 0..psi.len() {
            let a = i * lambda * dpsi.slice(j).values()[k];
            let b = 0.5 * lambda * lambda * lap.values()[k];
            let c = pot[k] * psi[k];
            value.push((a + b - c).norm());
            t[0].push(a.norm());
            t[1].push(b.norm());
            t[2].push(c.norm());
        }
        Ok(real_slice(value, &[&t[0], &t[1], &t[2]]))
    });
    assemble(names::SCHRODINGER, grid, Some(time), slices)
}

pub fn schrodinger_residual(
    w: &WaveField,
    v: &PotentialField,
    sigma: &[MatrixField],
) -> Result<ResidualReport> {
    Ok(schrodinger_residual_field(w, v, sigma)?.report())
}

/// The three Bohm checks in standard units (`Σ = I`, `λ = 1`):
/// `[(a), (b), (c)]`.
pub fn bohm_correspondence_fields(
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    v: &PotentialField,
) -> Result<[Residual; 3]> {
    let grid = *r.grid();
    let time = *r.time();
    same_grid(&grid, s.grid())?;
    same_grid(&grid, v.values.grid())?;
    if *s.time() != time || *v.values.time() != time {
        return Err(Error::ShapeMismatch(
            "R, S and V on different time grids".into(),
        ));
    }
    let dr = time_derivative(r);
    let ds = time_derivative(s);
    let per_slice = par_collect(r.len(), |j| -> Result<[(Vec<f64>, Vec<f64>); 3]> {
        let gs = gradient(s.slice(j));
        let cross = gradient(r.slice(j)).dot(&gs)?.into_values();
        let half_lap_s: Vec<f64> = laplacian(s.slice(j))
            .values()
            .iter()
            .map(|v| 0.5 * v)
            .collect();
        let half_sq: Vec<f64> = gs.dot(&gs)?.values().iter().map(|v| 0.5 * v).collect();
        let im = v.im(j).into_values();
        let (drj, dsj) = (dr.slice(j).values(), ds.slice(j).values());
        let n = drj.len();
        let a: Vec<f64> = (0..n)
            .map(|k| drj[k] + cross[k] + half_lap_s[k] - im[k])
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|k| dsj[k] + half_sq[k] + half_lap_s[k])
            .collect();
        let bohm: Vec<f64> = (0..n).map(|k| drj[k] + half_lap_s[k] + cross[k]).collect();
        let c: Vec<f64> = (0..n).map(|k| bohm[k] - a[k] - im[k]).collect();
        let ta = real_slice(a, &[drj, &cross, &half_lap_s, &im]);
        let tb = real_slice(b, &[dsj, &half_sq, &half_lap_s]);
        let tc = real_slice(c, &[drj, &cross, &half_lap_s, &im]);
        Ok([ta, tb, tc])
    });
    let per_slice = per_slice.into_iter().collect::<Result<Vec<_>>>()?;
    let mut cols: [Vec<Result<SliceTerms>>; 3] = Default::default();
    for [a, b, c] in per_slice {
        cols[0].push(Ok(a));
        cols[1].push(Ok(b));
        cols[2].push(Ok(c));
    }
    let [ca, cb, cc] = cols;
    Ok([
        assemble(names::BOHM_A, grid, Some(time), ca)?,
        assemble(names::BOHM_B, grid, Some(time), cb)?,
        assemble(names::BOHM_C, grid, Some(time), cc)?,
    ])
}

pub fn bohm_correspondence(
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    v: &PotentialField,
) -> Result<[ResidualReport; 3]> {
    let [a, b, c] = bohm_correspondence_fields(r, s, v)?;
    Ok([a.report(), b.report(), c.report()])
}

/// `Δ_Σρ / 4ρ − [½Δ_ΣR + ∇RᵀΣ∇R + (¼ − ½R) ddiv Σ]` with `R = ½ log ρ`.
pub fn log_density_residual_field(rho: &ScalarField, sigma: &MatrixField) -> Result<Residual> {
    let grid = *rho.grid();
    same_grid(&grid, sigma.grid())?;
    if rho.min() <= 0.0 {
        return Err(Error::DegenerateDensity(
            "identity needs a positive density".into(),
        ));
    }
    let r = rho.map(|v| 0.5 * v.ln());
    let lhs: Vec<f64> = weighted_laplacian(rho, sigma)?
        .values()
        .iter()
        .zip(rho.values())
        .map(|(l, p)| l / (4.0 * p))
        .collect();
    let half_wl: Vec<f64> = weighted_laplacian(&r, sigma)?
        .values()
        .iter()
        .map(|v| 0.5 * v)
        .collect();
    let gr = gradient(&r);
    let norm = quad_form(sigma, &gr, &gr)?;
    let ddiv = double_divergence(sigma)?;
    let source: Vec<f64> = r
        .values()
        .iter()
        .zip(ddiv.values())
        .map(|(r, d)| (0.25 - 0.5 * r) * d)
        .collect();
    let value = (0..lhs.len())
        .map(|k| lhs[k] - (half_wl[k] + norm[k] + source[k]))
        .collect();
    let slice = real_slice(value, &[&lhs, &half_wl, &norm, &source]);
    assemble(names::LOG_DENSITY, grid, None, vec![Ok(slice)])
}

pub fn log_density_residual(rho: &ScalarField, sigma: &MatrixField) -> Result<ResidualReport> {
    Ok(log_density_residual_field(rho, sigma)?.report())
}

/// A random smooth positive density and a smooth SPD diffusion on `[-2, 2]^dim`.
#[derive(Debug, Clone)]
pub struct SmoothPair {
    pub rho: ScalarField,
    pub sigma: MatrixField,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    k: [f64; 2],
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        Wave {
            amp: rng.random_range(-amp..amp),
            k: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn at(&self, x: &[f64]) -> f64 {
        let arg: f64 = x.iter().zip(self.k).map(|(x, k)| x * k).sum::<f64>() + self.phase;
        self.amp * arg.sin()
    }
}

pub fn smooth_pair(dim: usize, points: usize, seed: u64) -> Result<SmoothPair> {
    let grid = Grid::new(&vec![-2.0; dim], &vec![2.0; dim], &vec![points; dim])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..1.5)).collect();
    let bumps: Vec<Wave> = (0..3).map(|_| Wave::random(&mut rng, 0.4)).collect();
    let rho = ScalarField::from_fn(grid, |x| {
        let quad: f64 = x.iter().zip(&var).map(|(x, v)| x * x / (2.0 * v)).sum();
        (bumps.iter().map(|b| b.at(x)).sum::<f64>() - quad).exp()
    })?;
    let diag: Vec<(f64, Wave)> = (0..dim)
        .map(|_| (rng.random_range(0.5..1.5), Wave::random(&mut rng, 0.4)))
        .collect();
    let off = Wave::random(&mut rng, 0.3);
    let sigma = MatrixField::from_fn(grid, dim, |x, o| {
        for i in 0..dim {
            let (c, w) = diag[i];
            o[i * dim + i] = c * (1.0 + w.at(x));
        }
        if dim == 2 {
            // |off| < 0.3 keeps the matrix diagonally dominant
            let v = off.at(x) * (o[0] * o[3]).sqrt();
            o[1] = v;
            o[2] = v;
        }
    })?;
    Ok(SmoothPair { rho, sigma })
}

/// Endpoint-constrained Brownian bridge described independently of resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSetup {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub rho0: DensitySpec,
    pub rho1: DensitySpec,
    pub epsilon: f64,
    pub lambda: f64,
    pub solver: SolverOptions,
    /// Points per axis and time steps of the base level; other levels keep
    /// the ratio.
    pub points: usize,
    pub steps: usize,
}

impl BridgeSetup {
    /// `N(−1, 0.25) → N(1, 0.25)` with `ε = 0.5` on `[-5, 5]`.
    pub fn gaussian_benchmark() -> Self {
        BridgeSetup {
            lower: vec![-5.0],
            upper: vec![5.0],
            t0: 0.0,
            t1: 1.0,
            rho0: DensitySpec::gaussian(&[-1.0], 0.25),
            rho1: DensitySpec::gaussian(&[1.0], 0.25),
            epsilon: 0.5,
            lambda: 1.0,
            solver: SolverOptions {
                tol: 1e-10,
                max_iters: 50,
            },
            points: 512,
            steps: 200,
        }
    }

    pub fn steps_for(&self, points: usize) -> usize {
        ((self.steps * points) as f64 / self.points as f64).round() as usize
    }

    pub fn problem(&self, points: usize, steps: usize) -> Result<ProblemData> {
        let dim = self.lower.len();
        let grid = Grid::new(&self.lower, &self.upper, &vec![points; dim])?;
        let time = TimeGrid::new(self.t0, self.t1, steps)?;
        ProblemData::new(
            time,
            std::sync::Arc::new(Brownian {
                dim,
                eps: self.epsilon,
            }),
            self.rho0.evaluate(&grid)?,
            self.rho1.evaluate(&grid)?,
            self.lambda,
            self.epsilon,
        )
    }
}

/// Every check that applies to a bridge solution.
///
/// The wave equation and the Bohm checks are evaluated in standard units.
pub fn bridge_checks(sol: &BridgeSolution, data: &ProblemData) -> Result<Vec<Residual>> {
    let (r, s) = sol.standard_form()?;
    let w = to_wave(&r, &s, 1.0)?;
    let v = v_sb_series(&r, &s)?;
    let eye = [MatrixField::identity(*sol.grid(), sol.grid().dim())];
    let [a, b, c] = bohm_correspondence_fields(&r, &s, &v)?;
    let rho = &sol.rho;
    Ok(vec![
        schrodinger_residual_field(&w, &v, &eye)?,
        primal_residual_field(rho, &sol.s, data)?,
        dual_residual_field(&sol.s, data)?.with_support(rho, SUPPORT_LEVEL)?,
        r_dynamics_residual_field(&sol.r, &sol.s, data)?.with_support(rho, SUPPORT_LEVEL)?,
        a.with_support(rho, SUPPORT_LEVEL)?,
        b.with_support(rho, SUPPORT_LEVEL)?,
        c,
    ])
}

/// The general potential and the wave field of a pair `(R, S)`.
pub fn general_wave(
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    data: &ProblemData,
) -> Result<(WaveField, PotentialField, Vec<MatrixField>)> {
    let coeffs = data.coefficient_series()?;
    let inputs = par_collect(coeffs.len(), |j| {
        PotentialInputs::from_fields(r.slice(j), s.slice(j), &coeffs[j])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let v = potential_series(PotentialKind::CaSb, *r.time(), &inputs, data.lambda)?;
    let w = to_wave(r, s, data.lambda)?;
    let sigma = coeffs.into_iter().map(|c| c.diffusion).collect();
    Ok((w, v, sigma))
}

/// Wave equation, optimality system and `R` dynamics for a general pair.
pub fn general_checks(
    rho: &TimeSeries<ScalarField>,
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    data: &ProblemData,
) -> Result<Vec<Residual>> {
    let (w, v, sigma) = general_wave(r, s, data)?;
    Ok(vec![
        schrodinger_residual_field(&w, &v, &sigma)?,
        primal_residual_field(rho, s, data)?,
        dual_residual_field(s, data)?,
        r_dynamics_residual_field(r, s, data)?.with_support(rho, SUPPORT_LEVEL)?,
    ])
}

pub fn manufactured_checks(sol: &ManufacturedSolution) -> Result<Vec<Residual>> {
    general_checks(&sol.rho, &sol.r, &sol.s, &sol.data)
}

/// A named pipeline that can be rerun at several resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "snake_case")]
pub enum Pipeline {
    Bridge(BridgeSetup),
    Manufactured {
        tag: CaseTag,
        /// Stored slices at 256 points; scaled with the resolution.
        steps: usize,
        horizon: f64,
    },
    LogDensity {
        dim: usize,
        seed: u64,
    },
    /// Constant wave, zero potential: every residual vanishes.
    Constant {
        dim: usize,
    },
}

impl Pipeline {
    pub fn manufactured(tag: CaseTag) -> Self {
        Pipeline::Manufactured {
            tag,
            steps: 200,
            horizon: 1.0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Pipeline::Bridge(_) => "bridge".into(),
            Pipeline::Manufactured { tag, .. } => format!("manufactured-{}", tag.name()),
            Pipeline::LogDensity { dim, seed } => format!("log_density-{dim}d-{seed}"),
            Pipeline::Constant { dim } => format!("constant-{dim}d"),
        }
    }

    /// Residual checks at one resolution.
    pub fn run_level(&self, points: usize) -> Result<Vec<Residual>> {
        match self {
            Pipeline::Bridge(setup) => {
                let data = setup.problem(points, setup.steps_for(points))?;
                let sol = solve_bridge(&data, &setup.solver)?;
                bridge_checks(&sol, &data)
            }
            Pipeline::Manufactured {
                tag,
                steps,
                horizon,
            } => {
                let case = build_case(*tag);
                let grid = crate::manufactured::ManufacturedCase::default_grid(points)?;
                let m = ((steps * points) as f64 / 256.0).round() as usize;
                let time = TimeGrid::new(0.0, *horizon, m)?;
                let sol = run_case(&case, &grid, &time, &PrimalOptions::default())?;
                manufactured_checks(&sol)
            }
            Pipeline::LogDensity { dim, seed } => {
                let pair = smooth_pair(*dim, points, *seed)?;
                Ok(vec![log_density_residual_field(&pair.rho, &pair.sigma)?])
            }
            Pipeline::Constant { dim } => {
                let grid = Grid::new(&vec![-1.0; *dim], &vec![1.0; *dim], &vec![points; *dim])?;
                let time = TimeGrid::new(0.0, 1.0, 16)?;
                let psi = TimeSeries::try_from_fn(time, |_, _| {
                    ComplexField::new(grid, vec![Complex64::new(0.6, -0.3); grid.len()])
                })?;
                let zero = TimeSeries::try_from_fn(time, |_, _| {
                    ComplexField::new(grid, vec![Complex64::new(0.0, 0.0); grid.len()])
                })?;
                let w = WaveField { psi, lambda: 1.0 };
                let v = PotentialField {
                    values: zero,
                    kind: PotentialKind::Sb,
                };
                let eye = [MatrixField::identity(grid, *dim)];
                Ok(vec![schrodinger_residual_field(&w, &v, &eye)?])
            }
        }
    }

    /// Criterion applied to a merged refinement report of `check`.
    pub fn criterion(&self, check: &str) -> Criterion {
        match (self, check) {
            (Pipeline::Constant { .. }, _) => Criterion::Absolute { tol: 1e-14 },
            (Pipeline::LogDensity { .. }, _) => Criterion::second_order(Norm::Linf),
            (_, names::BOHM_C) => Criterion::Relative {
                tol: IDENTITY_REL_TOL,
            },
            _ => Criterion::second_order(Norm::L2),
        }
    }
}

/// Run `pipeline` at every resolution in `levels` and merge the reports per
/// check, with slopes and the pipeline's criteria.
pub fn refinement_study(pipeline: &Pipeline, levels: &[usize]) -> Result<Vec<ResidualReport>> {
    if levels.is_empty() {
        return Err(Error::param("levels", "at least one level is required"));
    }
    let mut per_level: Vec<Vec<ResidualReport>> = Vec::new();
    for &n in levels {
        let reports: Vec<ResidualReport> =
            pipeline.run_level(n)?.iter().map(|r| r.report()).collect();
        per_level.push(reports);
    }
    let checks = per_level[0].len();
    (0..checks)
        .map(|c| {
            let column: Vec<ResidualReport> = per_level.iter().map(|l| l[c].clone()).collect();
            let mut merged = ResidualReport::from_levels(&column)?;
            merged.judge(pipeline.criterion(&merged.check));
            Ok(merged)
        })
        .collect()
}

/// Aligned-column text table of refinement reports.
pub fn format_table(reports: &[ResidualReport]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>6} {:>12} {:>12} {:>12} {:>8} {:>8}",
        "check", "n", "M", "l2", "linf", "scale", "slope", "pass"
    );
    let fmt_slope = |s: Option<f64>| s.map_or("-".to_string(), |s| format!("{s:.3}"));
    for r in reports {
        let levels = if r.levels.is_empty() {
            vec![r.level()]
        } else {
            r.levels.clone()
        };
        for (i, l) in levels.iter().enumerate() {
            let last = i + 1 == levels.len();
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>8} {:>8}",
                if i == 0 { r.check.as_str() } else { "" },
                l.grid.n,
                l.grid.m,
                l.l2,
                l.linf,
                l.scale,
                if last {
                    fmt_slope(r.slope)
                } else {
                    String::new()
                },
                if last {
                    if r.pass {
                        "ok"
                    } else {
                        "FAIL"
                    }
                } else {
                    ""
                },
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn quiet_problem(grid: Grid, time: TimeGrid) -> ProblemData {
        let rho = ScalarField::from_fn(grid, |x| (-x[0] * x[0]).exp()).unwrap();
        ProblemData::new(
            time,
            Arc::new(Brownian { dim: 1, eps: 0.5 }),
            rho.clone(),
            rho,
            1.0,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn zero_value_function_has_zero_dual_residual() {
        let g = Grid::line(-3.0, 3.0, 64).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let data = quiet_problem(g, t);
        let s = TimeSeries::try_from_fn(t, |_, _| Ok(ScalarField::zeros(g))).unwrap();
        let rep = dual_residual(&s, &data).unwrap();
        assert_eq!(rep.linf_full, 0.0);
        assert_eq!(rep.scale, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn constant_density_with_zero_control_is_stationary() {
        let g = Grid::line(-3.0, 3.0, 64).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let data = quiet_problem(g, t);
        let c = TimeSeries::try_from_fn(t, |_, _| Ok(ScalarField::constant(g, 0.2))).unwrap();
        let s = TimeSeries::try_from_fn(t, |_, _| Ok(ScalarField::zeros(g))).unwrap();
        assert!(primal_residual(&c, &s, &data).unwrap().linf_full < 1e-14);
        // R constant in time, no drift, constant Σ
        assert!(r_dynamics_residual(&c, &s, &data).unwrap().linf_full < 1e-14);
    }

    #[test]
    fn slope_needs_three_nonzero_levels() {
        let level = |h: f64, v: f64| LevelNorms {
            grid: GridInfo {
                n: 1,
                h,
                m: 1,
                dt: 1.0,
            },
            l2: v,
            linf: v,
            l2_full: v,
            linf_full: v,
            scale: 1.0,
        };
        let good = [level(0.4, 0.16), level(0.2, 0.04), level(0.1, 0.01)];
        assert!((fit_slope(&good, Norm::L2).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_slope(&good[..2], Norm::L2).is_none());
        let zero = [level(0.4, 0.0), level(0.2, 0.0), level(0.1, 0.0)];
        assert!(fit_slope(&zero, Norm::L2).is_none());
    }

    #[test]
    fn report_json_has_the_documented_keys() {
        let g = Grid::line(-1.0, 1.0, 32).unwrap();
        let rho = ScalarField::from_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
        let rep = log_density_residual(&rho, &MatrixField::identity(g, 1)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        for key in ["check", "grid", "l2", "linf", "scale", "pass"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for key in ["n", "h", "M", "dt"] {
            assert!(v["grid"].get(key).is_some(), "{key}");
        }
        assert!(v.get("slope").is_none());
    }

    #[test]
    fn constant_pipeline_is_exactly_zero() {
        let reps = refinement_study(&Pipeline::Constant { dim: 1 }, &[32, 64, 128]).unwrap();
        assert_eq!(reps.len(), 1);
        assert_eq!(reps[0].linf, 0.0);
        assert!(reps[0].linf_full < 1e-10);
        assert!(reps[0].slope.is_none());
        assert!(reps[0].pass);
    }

    #[test]
    fn smooth_pairs_are_elliptic_and_positive() {
        for seed in 0..4 {
            let p = smooth_pair(2, 40, seed).unwrap();
            assert!(p.sigma.min_eigenvalue() > 0.0);
            assert!(p.rho.min() > 0.0);
        }
    }
}
