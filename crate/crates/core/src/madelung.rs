//! The Madelung map `(R, S) ↦ ψ = exp(R + iS/λ)`, its inverse, and control
//! recovery from the wave function.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::Serialize;

use crate::calculus::d1;
use crate::error::{Error, Result};
use crate::fields::{
    same_grid, ComplexField, GainField, Grid, OnGrid, ScalarField, TimeSeries, VectorField,
};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    pub psi: TimeSeries<ComplexField>,
    pub lambda: f64,
}

impl WaveField {
    pub fn grid(&self) -> &Grid {
        self.psi.grid()
    }

    /// `ψ†`, the pointwise complex conjugate.
    pub fn conjugate(&self) -> TimeSeries<ComplexField> {
        self.psi.try_map(|p| Ok(p.conj())).expect("shape preserved")
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "lambda",
            format!("must be positive, got {lambda}"),
        ))
    }
}

/// `ψ = e^R (cos(S/λ) + i sin(S/λ))` on one slice.
pub fn wave_slice(r: &ScalarField, s: &ScalarField, lambda: f64) -> Result<ComplexField> {
    check_lambda(lambda)?;
    same_grid(r.grid(), s.grid())?;
    let values = r
        .values()
        .iter()
        .zip(s.values())
        .map(|(&r, &s)| Complex64::from_polar(r.exp(), s / lambda))
        .collect();
    ComplexField::new(*r.grid(), values)
}

pub fn to_wave(
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
    lambda: f64,
) -> Result<WaveField> {
    check_lambda(lambda)?;
    if r.len() != s.len() || r.time() != s.time() {
        return Err(Error::ShapeMismatch(
            "R and S on different time grids".into(),
        ));
    }
    let slices = r
        .slices()
        .iter()
        .zip(s.slices())
        .map(|(r, s)| wave_slice(r, s, lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(WaveField {
        psi: TimeSeries::new(*r.time(), slices)?,
        lambda,
    })
}

/// `ψψ†` and the largest imaginary residue of the product.
#[derive(Debug, Clone)]
pub struct BornDensity {
    pub rho: TimeSeries<ScalarField>,
    pub imag_residue: f64,
}

pub fn born_density(w: &WaveField) -> BornDensity {
    let mut imag_residue = 0.0f64;
    let rho = w
        .psi
        .try_map(|p| {
            let values = p
                .values()
                .iter()
                .map(|z| {
                    let prod = z * z.conj();
                    imag_residue = imag_residue.max(prod.im.abs());
                    prod.re
                })
                .collect();
            Ok(ScalarField::raw(*p.grid(), values))
        })
        .expect("shape preserved");
    BornDensity { rho, imag_residue }
}

/// A phase step larger than π between neighbouring nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnwrapWarning {
    pub slice: usize,
    pub node: usize,
    pub jump: f64,
}

/// Keeps the first few warnings and counts the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UnwrapLog {
    pub count: usize,
    pub first: Vec<UnwrapWarning>,
}

impl UnwrapLog {
    const KEEP: usize = 16;

    fn push(&mut self, w: UnwrapWarning) {
        self.count += 1;
        if self.first.len() < Self::KEEP {
            self.first.push(w);
        }
    }

    pub fn is_clean(&self) -> bool {
        self.count == 0
    }
}

/// Continue the phase along a line of flat indices starting at `line[0]`,
/// whose value is already set in `out`.
fn unwrap_line(
    principal: &[f64],
    out: &mut [f64],
    line: &[usize],
    slice: usize,
    log: &mut UnwrapLog,
) {
    for m in 1..line.len() {
        let prev = out[line[m - 1]];
        let pred = if m >= 2 {
            2.0 * prev - out[line[m - 2]]
        } else {
            prev
        };
        let raw = principal[line[m]];
        let v = raw + TAU * ((pred - raw) / TAU).round();
        if (v - prev).abs() > PI {
            log.push(UnwrapWarning {
                slice,
                node: line[m],
                jump: v - prev,
            });
        }
        out[line[m]] = v;
    }
}

/// Unwrap a principal-value phase by axis-aligned sweeps from `anchor`.
pub fn unwrap_phase(
    grid: &Grid,
    principal: &[f64],
    anchor: usize,
    slice: usize,
    log: &mut UnwrapLog,
) -> Vec<f64> {
    let mut out = principal.to_vec();
    let a = grid.multi_index(anchor);
    let sweep = |out: &mut Vec<f64>, log: &mut UnwrapLog, axis: usize, fixed: [usize; 2]| {
        let n = grid.points(axis);
        let at = |i: usize| {
            let mut idx = fixed;
            idx[axis] = i;
            grid.flat_index(idx)
        };
        let c = fixed[axis];
        let up: Vec<usize> = (c..n).map(at).collect();
        let down: Vec<usize> = (0..=c).rev().map(at).collect();
        unwrap_line(principal, out, &up, slice, log);
        unwrap_line(principal, out, &down, slice, log);
    };
    sweep(&mut out, log, 0, a);
    if grid.dim() == 2 {
        for i in 0..grid.points(0) {
            sweep(&mut out, log, 1, [i, a[1]]);
        }
    }
    out
}

fn principal_phase(psi: &ComplexField) -> Vec<f64> {
    psi.values().iter().map(|z| z.im.atan2(z.re)).collect()
}

/// Control recovered from a wave function, with diagnostics.
#[derive(Debug, Clone)]
pub struct RecoveredControl {
    pub control: TimeSeries<VectorField>,
    /// Largest imaginary magnitude discarded when taking the real part.
    pub max_imag: f64,
    pub unwrap: UnwrapLog,
}

/// `u = −(iλ/2) gᵀ∇(log ψ − log ψ†)` with an unwrapped phase.
///
/// `gains` holds one input matrix per slice, or a single one used for all.
pub fn recover_control(
    w: &WaveField,
    gains: &[GainField],
    anchor: usize,
) -> Result<RecoveredControl> {
    let lambda = w.lambda;
    check_lambda(lambda)?;
    let grid = *w.grid();
    if gains.len() != 1 && gains.len() != w.psi.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input matrices for {} slices",
            gains.len(),
            w.psi.len()
        )));
    }
    let mut unwrap = UnwrapLog::default();
    let mut max_imag = 0.0f64;
    let factor = Complex64::new(0.0, -0.5 * lambda);
    let mut slices = Vec::with_capacity(w.psi.len());
    for (j, psi) in w.psi.slices().iter().enumerate() {
        let g = if gains.len() == 1 {
            &gains[0]
        } else {
            &gains[j]
        };
        same_grid(g.grid(), &grid)?;
        let theta = unwrap_phase(&grid, &principal_phase(psi), anchor, j, &mut unwrap);
        // log ψ − log ψ† with log ψ = ln|ψ| + iθ
        let (lre, lim): (Vec<f64>, Vec<f64>) = psi
            .values()
            .iter()
            .zip(&theta)
            .map(|(z, &t)| {
                let d = Complex64::new(z.norm().ln(), t) - Complex64::new(z.conj().norm().ln(), -t);
                (d.re, d.im)
            })
            .unzip();
        let mut re = Vec::with_capacity(grid.dim());
        let mut im = Vec::with_capacity(grid.dim());
        for axis in 0..grid.dim() {
            let dre = d1(&grid, &lre, axis);
            let dim = d1(&grid, &lim, axis);
            let (r, i): (Vec<f64>, Vec<f64>) = dre
                .iter()
                .zip(&dim)
                .map(|(&a, &b)| {
                    let v = factor * Complex64::new(a, b);
                    (v.re, v.im)
                })
                .unzip();
            re.push(r);
            im.push(i);
        }
        let re = g.transpose_apply(&VectorField::raw(grid, re))?;
        let im = g.transpose_apply(&VectorField::raw(grid, im))?;
        max_imag = im
            .components()
            .iter()
            .flatten()
            .fold(max_imag, |m, v| m.max(v.abs()));
        slices.push(re);
    }
    Ok(RecoveredControl {
        control: TimeSeries::new(*w.psi.time(), slices)?,
        max_imag,
        unwrap,
    })
}

/// Inverse map: `R = ½ log ψψ†` and `S = λ·phase`, phase unwrapped from `anchor`.
pub fn from_wave(
    w: &WaveField,
    anchor: usize,
) -> Result<(TimeSeries<ScalarField>, TimeSeries<ScalarField>, UnwrapLog)> {
    let grid = *w.grid();
    let born = born_density(w);
    let r = born
        .rho
        .try_map(|rho| Ok(crate::bridge::log_density(rho)))?;
    let mut log = UnwrapLog::default();
    let mut j = 0;
    let s = w.psi.try_map(|psi| {
        let theta = unwrap_phase(&grid, &principal_phase(psi), anchor, j, &mut log);
        j += 1;
        Ok(ScalarField::raw(
            grid,
            theta.into_iter().map(|t| w.lambda * t).collect(),
        ))
    })?;
    Ok((r, s, log))
}
