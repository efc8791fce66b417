//! Classical Schrödinger bridge with a Brownian prior, solved by Fortet's
//! alternating scaling of the two Schrödinger factors.
//!
//! The prior is `dx = u dt + √ε dw`, so both factors obey heat equations with
//! generator `(ε/2)Δ` and the propagator over a duration `τ` is a Gaussian
//! convolution of variance `ετ`.

use serde::{Deserialize, Serialize};

use crate::calculus::gradient;
use crate::error::{Error, Result};
use crate::fields::{Grid, OnGrid, ScalarField, TimeGrid, TimeSeries, VectorField};
use crate::par_collect;
use crate::problem::{identity_into, ProblemData};

/// Absolute floor applied to divisors and to densities under logarithms.
pub const ABS_FLOOR: f64 = 1e-300;
/// Relative floor applied to divisors, as a fraction of their maximum.
pub const REL_FLOOR: f64 = 1e-14;
/// Kernels are cut off at this many standard deviations.
pub const KERNEL_CUTOFF: f64 = 8.0;

/// Which heat equation a propagation solves. The kernel is symmetric, so both
/// directions use the same convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `∂_t φ̂ = (ε/2) Δ φ̂`, carrying data from `t0` towards `t1`.
    Forward,
    /// `∂_t φ + (ε/2) Δ φ = 0`, carrying data from `t1` towards `t0`.
    Backward,
}

fn kernel(h: f64, sd: f64) -> Vec<f64> {
    let r = (KERNEL_CUTOFF * sd / h).ceil() as usize;
    let mut w: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = (i as f64 - r as f64) * h;
            (-0.5 * d * d / (sd * sd)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn convolve_axis(grid: &Grid, u: &[f64], axis: usize, w: &[f64]) -> Vec<f64> {
    let r = (w.len() / 2) as isize;
    let n = grid.points(axis) as isize;
    let stride = grid.stride(axis) as isize;
    par_collect(grid.len(), |k| {
        let i = grid.multi_index(k)[axis] as isize;
        let lo = (-r).max(-i);
        let hi = r.min(n - 1 - i);
        let mut acc = 0.0;
        for m in lo..=hi {
            acc += w[(m + r) as usize] * u[(k as isize + m * stride) as usize];
        }
        acc
    })
}

/// Convolve with the heat kernel of variance `ε τ` per axis.
///
/// Mass leaving the box is lost; `τ = 0` is the identity.
pub fn heat_propagate(
    field: &ScalarField,
    tau: f64,
    eps: f64,
    _direction: Direction,
) -> Result<ScalarField> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::param(
            "tau",
            format!("must be nonnegative, got {tau}"),
        ));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::param(
            "epsilon",
            format!("must be positive, got {eps}"),
        ));
    }
    if tau == 0.0 {
        return Ok(field.clone());
    }
    let grid = *field.grid();
    let sd = (eps * tau).sqrt();
    let mut values = field.values().to_vec();
    for axis in 0..grid.dim() {
        if KERNEL_CUTOFF * sd > grid.width(axis) {
            return Err(Error::DomainTooSmall(format!(
                "heat kernel support {:.3} exceeds box width {:.3} on axis {axis}",
                KERNEL_CUTOFF * sd,
                grid.width(axis)
            )));
        }
        let w = kernel(grid.spacing(axis), sd);
        values = convolve_axis(&grid, &values, axis, &w);
    }
    Ok(ScalarField::raw(grid, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iters: 200,
        }
    }
}

/// Marginal L1 errors after one Fortet sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub err0: f64,
    pub err1: f64,
    /// Number of divisor nodes raised to the floor during this sweep.
    pub floored: usize,
}

#[derive(Debug, Clone)]
pub struct BridgeSolution {
    pub rho: TimeSeries<ScalarField>,
    pub s: TimeSeries<ScalarField>,
    pub r: TimeSeries<ScalarField>,
    pub phi: TimeSeries<ScalarField>,
    pub phihat: TimeSeries<ScalarField>,
    pub epsilon: f64,
    /// Node where `S(t0, ·)` is pinned to zero.
    pub gauge_node: usize,
    pub log: Vec<IterationRecord>,
}

impl BridgeSolution {
    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn time(&self) -> &TimeGrid {
        self.rho.time()
    }

    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    /// The solution in units where the noise is standard: time `εt` and value
    /// function `S/ε = log φ`. Returns `(R, S/ε)` on the rescaled time grid.
    pub fn standard_form(&self) -> Result<(TimeSeries<ScalarField>, TimeSeries<ScalarField>)> {
        let time = self.time().scaled(self.epsilon)?;
        let r = self.r.clone().retimed(time)?;
        let eps = self.epsilon;
        let s = self.s.try_map(|s| Ok(s.map(|v| v / eps)))?.retimed(time)?;
        Ok((r, s))
    }
}

fn floored_div(num: &ScalarField, den: &ScalarField, count: &mut usize) -> ScalarField {
    let floor = (REL_FLOOR * den.max()).max(ABS_FLOOR);
    let values = num
        .values()
        .iter()
        .zip(den.values())
        .map(|(&a, &b)| {
            if b < floor {
                *count += 1;
                a / floor
            } else {
                a / b
            }
        })
        .collect();
    ScalarField::raw(*num.grid(), values)
}

fn product(a: &ScalarField, b: &ScalarField) -> ScalarField {
    a.zip_map(b, |x, y| x * y).expect("same grid")
}

/// The model must be the Brownian prior `f = 0`, `g = I`, `σσᵀ = εI`, `q = 0`.
fn check_brownian(data: &ProblemData) -> Result<()> {
    let n = data.grid.dim();
    let model = data.model.as_ref();
    if model.input_dim() != n {
        return Err(Error::Unsupported(
            "input matrix must be the identity".into(),
        ));
    }
    let mut eye = vec![0.0; n * n];
    identity_into(n, 1.0, &mut eye);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * n];
    let mut s = vec![0.0; n * n];
    let tol = 1e-12;
    for j in [0, data.time.steps() / 2, data.time.steps()] {
        let t = data.time.time(j);
        for k in 0..data.grid.len() {
            let x = &data.grid.node(k)[..n];
            model.drift(t, x, &mut f);
            model.input_matrix(t, x, &mut g);
            model.diffusion(t, x, &mut s);
            let q = model.state_cost(t, x);
            let bad_f = f.iter().any(|v| v.abs() > tol);
            let bad_g = g.iter().zip(&eye).any(|(a, b)| (a - b).abs() > tol);
            let bad_s = s
                .iter()
                .zip(&eye)
                .any(|(a, b)| (a - data.epsilon * b).abs() > tol * data.epsilon);
            if bad_f || bad_g || bad_s || q.abs() > tol {
                return Err(Error::Unsupported(format!(
                    "bridge solver needs f = 0, g = I, σσᵀ = εI, q = 0; violated at t = {t}, x = {x:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Fortet iteration followed by reconstruction of all slices.
pub fn solve_bridge(data: &ProblemData, opts: &SolverOptions) -> Result<BridgeSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    if opts.max_iters == 0 {
        return Err(Error::param("max_iters", "must be at least 1"));
    }
    check_brownian(data)?;
    let grid = data.grid;
    let eps = data.epsilon;
    let horizon = data.time.horizon();

    let mut phihat1 = ScalarField::constant(grid, 1.0);
    let mut phi1;
    let mut log = Vec::new();
    // The first sweep measures φ(t0) against the constant starting guess.
    let mut prev_phihat0 = ScalarField::constant(grid, 1.0);
    let mut iteration = 0;
    loop {
        iteration += 1;
        let mut floored = 0;
        phi1 = floored_div(&data.rho1, &phihat1, &mut floored);
        let phi0 = heat_propagate(&phi1, horizon, eps, Direction::Backward)?;
        let err0 = product(&phi0, &prev_phihat0).l1_distance(&data.rho0)?;
        let phihat0 = floored_div(&data.rho0, &phi0, &mut floored);
        phihat1 = heat_propagate(&phihat0, horizon, eps, Direction::Forward)?;
        let err1 = product(&phi1, &phihat1).l1_distance(&data.rho1)?;
        log.push(IterationRecord {
            iteration,
            err0,
            err1,
            floored,
        });
        if !err1.is_finite() || phihat1.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NotConverged {
                iterations: iteration,
                last: (err0, err1),
                log,
            });
        }
        if err0 < opts.tol && err1 < opts.tol {
            break;
        }
        if iteration >= opts.max_iters {
            return Err(Error::NotConverged {
                iterations: iteration,
                last: (err0, err1),
                log,
            });
        }
        prev_phihat0 = phihat0;
    }

    // One consistent backward pass from the final terminal factor fixes φ at
    // every slice; the forward factor is propagated from the matching φ̂(t0).
    let time = data.time;
    let gauge_node = grid.center();
    let phi0 = heat_propagate(&phi1, horizon, eps, Direction::Backward)?;
    let mut count = 0;
    let phihat0 = floored_div(&data.rho0, &phi0, &mut count);
    let c = 1.0 / phi0.values()[gauge_node];
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::DegenerateDensity(
            "backward factor vanishes at the gauge node".into(),
        ));
    }
    let phi1 = phi1.map(|v| v * c);
    let phihat0 = phihat0.map(|v| v / c);

    let pairs: Vec<(ScalarField, ScalarField)> = (0..time.len())
        .map(|j| {
            let t = time.time(j);
            let phi = heat_propagate(&phi1, time.t1() - t, eps, Direction::Backward)?;
            let phihat = heat_propagate(&phihat0, t - time.t0(), eps, Direction::Forward)?;
            let mass = product(&phi, &phihat).integrate();
            if !(mass > 0.0) {
                return Err(Error::DegenerateDensity(format!("zero mass at t = {t}")));
            }
            // keep ρ = φ φ̂ exact by absorbing the normalization into φ̂
            Ok((phi, phihat.map(|v| v / mass)))
        })
        .collect::<Result<_>>()?;
    let (phi, phihat): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let rho: Vec<ScalarField> = phi
        .iter()
        .zip(&phihat)
        .map(|(a, b)| product(a, b))
        .collect();
    let s: Vec<ScalarField> = phi
        .iter()
        .map(|p| p.map(|v| eps * v.max(ABS_FLOOR).ln()))
        .collect();
    let r: Vec<ScalarField> = rho.iter().map(log_density).collect();
    Ok(BridgeSolution {
        rho: TimeSeries::new(time, rho)?,
        s: TimeSeries::new(time, s)?,
        r: TimeSeries::new(time, r)?,
        phi: TimeSeries::new(time, phi)?,
        phihat: TimeSeries::new(time, phihat)?,
        epsilon: eps,
        gauge_node,
        log,
    })
}

/// `R = ½ log ρ` with the absolute density floor.
pub fn log_density(rho: &ScalarField) -> ScalarField {
    rho.map(|v| 0.5 * v.max(ABS_FLOOR).ln())
}

/// `u = gᵀ∇S` on every slice, with `g` sampled from the problem's model.
pub fn control_from_value(
    s: &TimeSeries<ScalarField>,
    data: &ProblemData,
) -> Result<TimeSeries<VectorField>> {
    let time = *s.time();
    let slices = s
        .slices()
        .iter()
        .enumerate()
        .map(|(j, sj)| {
            let coeffs = data.coefficients(time.time(j))?;
            coeffs.gain.transpose_apply(&gradient(sj))
        })
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(time, slices)
}

pub fn optimal_control_field(
    sol: &BridgeSolution,
    data: &ProblemData,
) -> Result<TimeSeries<VectorField>> {
    control_from_value(&sol.s, data)
}
