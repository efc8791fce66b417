//! Manufactured control-affine bridge instances.
//!
//! A value function `S` is chosen in closed form and the state cost `q` is
//! defined so that `S` solves the dual equation exactly. Integrating the primal
//! Fokker–Planck equation forward from `ρ0` then yields a pair `(ρ, S)` that
//! satisfies both optimality equations, with `ρ1` taken from the last slice.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bridge::log_density;
use crate::calculus::{divergence, weighted_laplacian};
use crate::error::{Error, Result};
use crate::fields::{
    normalize_density, Grid, MatrixField, OnGrid, ScalarField, TimeGrid, TimeSeries, VectorField,
};
use crate::problem::{ControlAffineModel, ProblemData};

/// A value function with exact first and second derivatives.
pub trait ValueFunction: Send + Sync + Debug {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn dt(&self, t: f64, x: &[f64]) -> f64;
    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Row-major Hessian.
    fn hess(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// `S(t, x) = a(t) x²/2 + b(t) x + c t` in one dimension, with
/// `a(t) = a0 + a1 t` and `b(t) = b0 cos(ω t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticValue {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub omega: f64,
    pub c: f64,
}

impl QuadraticValue {
    pub fn zero() -> Self {
        QuadraticValue {
            a0: 0.0,
            a1: 0.0,
            b0: 0.0,
            omega: 0.0,
            c: 0.0,
        }
    }

    fn a(&self, t: f64) -> f64 {
        self.a0 + self.a1 * t
    }

    fn b(&self, t: f64) -> f64 {
        self.b0 * (self.omega * t).cos()
    }
}

impl ValueFunction for QuadraticValue {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        0.5 * self.a(t) * x[0] * x[0] + self.b(t) * x[0] + self.c * t
    }
    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        let db = -self.b0 * self.omega * (self.omega * t).sin();
        0.5 * self.a1 * x[0] * x[0] + db * x[0] + self.c
    }
    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.a(t) * x[0] + self.b(t);
    }
    fn hess(&self, t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.a(t);
    }
}

/// Scalar dynamics `dx = (−k x + f0 + g u) dt + σ0 (1 + α sin x + β cos x) dw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSde {
    pub k: f64,
    pub f0: f64,
    pub g: f64,
    pub sigma0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ScalarSde {
    pub fn brownian(eps: f64) -> Self {
        ScalarSde {
            k: 0.0,
            f0: 0.0,
            g: 1.0,
            sigma0: eps.sqrt(),
            alpha: 0.0,
            beta: 0.0,
        }
    }

    fn sigma(&self, x: f64) -> f64 {
        self.sigma0 * (1.0 + self.alpha * x.sin() + self.beta * x.cos())
    }
}

impl ControlAffineModel for ScalarSde {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = -self.k * x[0] + self.f0;
    }
    fn input_matrix(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.g;
    }
    fn noise_matrix(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma(x[0]);
    }
    fn state_cost(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
}

/// `q = ∂_tS + ⟨∇S, f⟩ + ½⟨∇S, g gᵀ∇S⟩ + ½⟨Σ, Hess S⟩` from exact derivatives.
pub fn derive_q_at(
    dynamics: &dyn ControlAffineModel,
    value: &dyn ValueFunction,
    t: f64,
    x: &[f64],
) -> f64 {
    let (n, m) = (dynamics.state_dim(), dynamics.input_dim());
    let mut ds = vec![0.0; n];
    let mut hs = vec![0.0; n * n];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * m];
    let mut sig = vec![0.0; n * n];
    value.grad(t, x, &mut ds);
    value.hess(t, x, &mut hs);
    dynamics.drift(t, x, &mut f);
    dynamics.input_matrix(t, x, &mut g);
    dynamics.diffusion(t, x, &mut sig);
    let s_dot_f: f64 = ds.iter().zip(&f).map(|(a, b)| a * b).sum();
    // |gᵀ∇S|² = ⟨∇S, g gᵀ∇S⟩
    let gt_ds: f64 = (0..m)
        .map(|c| {
            let v: f64 = (0..n).map(|r| g[r * m + c] * ds[r]).sum();
            v * v
        })
        .sum();
    let frob: f64 = sig.iter().zip(&hs).map(|(a, b)| a * b).sum();
    value.dt(t, x) + s_dot_f + 0.5 * gt_ds + 0.5 * frob
}

/// Dynamics with the state cost replaced by the derived `q`.
#[derive(Debug, Clone)]
pub struct ManufacturedModel {
    pub dynamics: Arc<dyn ControlAffineModel>,
    pub value: Arc<dyn ValueFunction>,
}

impl ControlAffineModel for ManufacturedModel {
    fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }
    fn noise_dim(&self) -> usize {
        self.dynamics.noise_dim()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.dynamics.drift(t, x, out)
    }
    fn input_matrix(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.dynamics.input_matrix(t, x, out)
    }
    fn noise_matrix(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.dynamics.noise_matrix(t, x, out)
    }
    fn state_cost(&self, t: f64, x: &[f64]) -> f64 {
        derive_q_at(self.dynamics.as_ref(), self.value.as_ref(), t, x)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.dynamics.diffusion(t, x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    /// Quadratic `S`, constant coefficients.
    Constant,
    /// Quadratic `S` with time-varying coefficients.
    TimeVarying,
    /// State-dependent noise amplitude.
    StateNoise,
    /// Linear drift, non-unit input gain and state-dependent noise.
    Drifted,
}

impl CaseTag {
    pub const ALL: [CaseTag; 4] = [
        CaseTag::Constant,
        CaseTag::TimeVarying,
        CaseTag::StateNoise,
        CaseTag::Drifted,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CaseTag::Constant => "constant",
            CaseTag::TimeVarying => "time_varying",
            CaseTag::StateNoise => "state_noise",
            CaseTag::Drifted => "drifted",
        }
    }

    pub fn parse(s: &str) -> Option<CaseTag> {
        let s = s.trim().to_ascii_lowercase();
        CaseTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .or(match s.as_str() {
                "i" => Some(CaseTag::Constant),
                "ii" => Some(CaseTag::TimeVarying),
                "iii" => Some(CaseTag::StateNoise),
                "iv" => Some(CaseTag::Drifted),
                _ => None,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedCase {
    pub tag: CaseTag,
    pub value: QuadraticValue,
    pub dynamics: ScalarSde,
    pub initial_mean: f64,
    pub initial_var: f64,
    pub lambda: f64,
}

impl ManufacturedCase {
    pub fn model(&self) -> Arc<ManufacturedModel> {
        Arc::new(ManufacturedModel {
            dynamics: Arc::new(self.dynamics),
            value: Arc::new(self.value),
        })
    }

    /// Default box and resolution for the catalog.
    pub fn default_grid(points: usize) -> Result<Grid> {
        Grid::line(-8.0, 8.0, points)
    }

    pub fn rho0(&self, grid: &Grid) -> Result<ScalarField> {
        let (m, v) = (self.initial_mean, self.initial_var);
        normalize_density(&ScalarField::from_fn(*grid, |x| {
            (-(x[0] - m).powi(2) / (2.0 * v)).exp()
        })?)
    }

    pub fn value_series(&self, grid: &Grid, time: &TimeGrid) -> Result<TimeSeries<ScalarField>> {
        TimeSeries::try_from_fn(*time, |_, t| {
            ScalarField::from_fn(*grid, |x| self.value.value(t, x))
        })
    }

    pub fn derive_q(&self, grid: &Grid, time: &TimeGrid) -> Result<TimeSeries<ScalarField>> {
        derive_q(&self.dynamics, &self.value, grid, time)
    }
}

/// `q` on every slice from exact derivatives of `S`.
pub fn derive_q(
    dynamics: &dyn ControlAffineModel,
    value: &dyn ValueFunction,
    grid: &Grid,
    time: &TimeGrid,
) -> Result<TimeSeries<ScalarField>> {
    TimeSeries::try_from_fn(*time, |_, t| {
        ScalarField::from_fn(*grid, |x| derive_q_at(dynamics, value, t, x))
    })
}

pub fn build_case(tag: CaseTag) -> ManufacturedCase {
    let quad = QuadraticValue {
        a0: -0.5,
        a1: 0.0,
        b0: 0.5,
        omega: 0.0,
        c: 0.0,
    };
    let varying = QuadraticValue {
        a1: -0.25,
        omega: std::f64::consts::PI,
        ..quad
    };
    let unit = ScalarSde {
        k: 0.0,
        f0: 0.0,
        g: 1.0,
        sigma0: 1.0,
        alpha: 0.0,
        beta: 0.0,
    };
    let (value, dynamics) = match tag {
        CaseTag::Constant => (quad, unit),
        CaseTag::TimeVarying => (varying, unit),
        CaseTag::StateNoise => (quad, ScalarSde { alpha: 0.5, ..unit }),
        CaseTag::Drifted => (
            varying,
            ScalarSde {
                k: 0.5,
                f0: 0.2,
                g: 0.8,
                sigma0: 1.0,
                alpha: 0.0,
                beta: 0.3,
            },
        ),
    };
    ManufacturedCase {
        tag,
        value,
        dynamics,
        initial_mean: 0.0,
        initial_var: 0.3,
        lambda: 0.8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimalOptions {
    /// Target for `Δt · max Σ · n / h²`; must not exceed 0.9.
    pub cfl_target: f64,
    /// Reject non-elliptic diffusion before integrating.
    pub require_ellipticity: bool,
    /// Force this many substeps per stored interval instead of choosing them.
    pub substeps: Option<usize>,
}

impl Default for PrimalOptions {
    fn default() -> Self {
        PrimalOptions {
            cfl_target: 0.9,
            require_ellipticity: true,
            substeps: None,
        }
    }
}

/// Result of a forward integration of the primal equation.
#[derive(Debug, Clone)]
pub struct PrimalRun {
    pub rho: TimeSeries<ScalarField>,
    /// Substeps per stored interval.
    pub substeps: usize,
    pub dt: f64,
    /// Realized diffusive number `Δt · max Σ · n / h²`.
    pub cfl: f64,
    /// Largest relative mass change of a single substep, before renormalization.
    pub mass_drift: Vec<f64>,
}

/// Largest allowed diffusive number.
pub const CFL_LIMIT: f64 = 0.9;

/// Forward-time central-space integration of
/// `∂_tρ = −∇·(ρ(f + g gᵀ∇S)) + ½Δ_Σρ` with zero Dirichlet data.
pub fn integrate_primal(
    model: &dyn ControlAffineModel,
    value: &dyn ValueFunction,
    rho0: &ScalarField,
    time: &TimeGrid,
    opts: &PrimalOptions,
) -> Result<PrimalRun> {
    if !(opts.cfl_target > 0.0 && opts.cfl_target <= CFL_LIMIT) {
        return Err(Error::param(
            "cfl_target",
            format!("must lie in (0, {CFL_LIMIT}], got {}", opts.cfl_target),
        ));
    }
    let grid = *rho0.grid();
    let n = grid.dim();
    let m = model.input_dim();
    let hmin = (0..n)
        .map(|a| grid.spacing(a))
        .fold(f64::INFINITY, f64::min);

    let sample = |t: f64| -> Result<(VectorField, MatrixField)> {
        let b = VectorField::from_fn(grid, n, |x, out| {
            let mut g = vec![0.0; n * m];
            let mut ds = vec![0.0; n];
            model.drift(t, x, out);
            model.input_matrix(t, x, &mut g);
            value.grad(t, x, &mut ds);
            for (i, o) in out.iter_mut().enumerate() {
                for c in 0..m {
                    let gs: f64 = (0..n).map(|r| g[r * m + c] * ds[r]).sum();
                    *o += g[i * m + c] * gs;
                }
            }
        })?;
        let sigma = MatrixField::from_fn(grid, n, |x, out| model.diffusion(t, x, out))?;
        Ok((b, sigma))
    };

    // Bounds over the whole horizon, sampled at the stored slices.
    let mut sig_max = 0.0f64;
    let mut b_max = 0.0f64;
    for j in 0..time.len() {
        let t = time.time(j);
        let (b, sigma) = sample(t)?;
        if opts.require_ellipticity {
            let e = sigma.min_eigenvalue();
            if !(e > 0.0) {
                return Err(Error::NotElliptic {
                    min_eigenvalue: e,
                    time: t,
                });
            }
        }
        for i in 0..n {
            sig_max = sig_max.max(sigma.entry(i, i).iter().fold(0.0, |a, v| a.max(v.abs())));
            b_max = b_max.max(b.component(i).iter().fold(0.0, |a, v| a.max(v.abs())));
        }
    }
    let mut dt_max = f64::INFINITY;
    if sig_max > 0.0 {
        dt_max = dt_max.min(opts.cfl_target * hmin * hmin / (sig_max * n as f64));
    }
    if b_max > 0.0 {
        dt_max = dt_max.min(CFL_LIMIT * hmin / b_max);
    }
    let store_dt = time.dt();
    let substeps = if let Some(forced) = opts.substeps {
        forced.max(1)
    } else if dt_max.is_finite() {
        ((store_dt / dt_max) - 1e-9).ceil().max(1.0) as usize
    } else {
        1
    };
    let dt = store_dt / substeps as f64;
    let cfl = dt * sig_max * n as f64 / (hmin * hmin);
    let limit = (CFL_LIMIT * hmin * hmin / (sig_max * n as f64)).min(CFL_LIMIT * hmin / b_max);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }

    let boundary = grid.boundary_nodes();
    let mut rho = normalize_density(rho0)?.into_values();
    for &k in &boundary {
        rho[k] = 0.0;
    }
    let mut mass = ScalarField::raw(grid, rho.clone()).integrate();
    let mut slices = vec![ScalarField::raw(
        grid,
        rho.iter().map(|v| v / mass).collect(),
    )];
    rho.iter_mut().for_each(|v| *v /= mass);
    mass = 1.0;
    let mut drift_log = Vec::with_capacity(time.steps());
    let mut step = 0;
    for j in 0..time.steps() {
        let mut worst = 0.0f64;
        for sub in 0..substeps {
            let t = time.time(j) + sub as f64 * dt;
            let (b, sigma) = sample(t)?;
            let field = ScalarField::raw(grid, rho);
            let flux = b.scale_by(&field)?;
            let adv = divergence(&flux)?;
            let diff = weighted_laplacian(&field, &sigma)?;
            let mut next: Vec<f64> = field
                .values()
                .iter()
                .zip(adv.values().iter().zip(diff.values()))
                .map(|(r, (a, d))| r + dt * (0.5 * d - a))
                .collect();
            for &k in &boundary {
                next[k] = 0.0;
            }
            step += 1;
            let low = next.iter().copied().fold(f64::INFINITY, f64::min);
            if low < -1e-10 || !low.is_finite() {
                return Err(Error::Instability { step, value: low });
            }
            next.iter_mut().for_each(|v| *v = v.max(0.0));
            let new_mass = ScalarField::raw(grid, next.clone()).integrate();
            worst = worst.max((new_mass / mass - 1.0).abs());
            if !(new_mass > 0.0) {
                return Err(Error::Instability {
                    step,
                    value: new_mass,
                });
            }
            next.iter_mut().for_each(|v| *v /= new_mass);
            mass = 1.0;
            rho = next;
        }
        drift_log.push(worst);
        slices.push(ScalarField::raw(grid, rho.clone()));
    }
    Ok(PrimalRun {
        rho: TimeSeries::new(*time, slices)?,
        substeps,
        dt,
        cfl,
        mass_drift: drift_log,
    })
}

/// A manufactured pair `(ρ, S)` with its problem data.
#[derive(Debug, Clone)]
pub struct ManufacturedSolution {
    pub case: ManufacturedCase,
    pub data: ProblemData,
    pub rho: TimeSeries<ScalarField>,
    pub r: TimeSeries<ScalarField>,
    pub s: TimeSeries<ScalarField>,
    pub q: TimeSeries<ScalarField>,
    pub run: PrimalRun,
}

/// Build `q`, integrate the primal equation, and package the result.
pub fn run_case(
    case: &ManufacturedCase,
    grid: &Grid,
    time: &TimeGrid,
    opts: &PrimalOptions,
) -> Result<ManufacturedSolution> {
    let model = case.model();
    let rho0 = case.rho0(grid)?;
    let run = integrate_primal(model.as_ref(), &case.value, &rho0, time, opts)?;
    let rho1 = run.rho.last().clone();
    let data = ProblemData::new(
        *time,
        model,
        rho0,
        rho1,
        case.lambda,
        case.dynamics.sigma0 * case.dynamics.sigma0,
    )?;
    let r = run.rho.try_map(|rho| Ok(log_density(rho)))?;
    Ok(ManufacturedSolution {
        s: case.value_series(grid, time)?,
        q: case.derive_q(grid, time)?,
        case: case.clone(),
        data,
        rho: run.rho.clone(),
        r,
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_closed_form_for_constant_case() {
        let case = build_case(CaseTag::Constant);
        let g = Grid::line(-3.0, 3.0, 31).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let q = case.derive_q(&g, &t).unwrap();
        let (a, b) = (-0.5, 0.5);
        for k in 0..g.len() {
            let x = g.node(k)[0];
            let exact = 0.5 * (a * x + b) * (a * x + b) + 0.5 * a;
            assert!((q.slice(3).values()[k] - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn trivial_value_functions() {
        let g = Grid::line(-3.0, 3.0, 31).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let dyn_f = ScalarSde {
            k: 1.3,
            f0: -0.4,
            g: 2.0,
            sigma0: 0.7,
            alpha: 0.2,
            beta: 0.0,
        };
        let q = derive_q(&dyn_f, &QuadraticValue::zero(), &g, &t).unwrap();
        assert!(q.slices().iter().all(|s| s.max_abs() == 0.0));
        let lin = QuadraticValue {
            c: 1.7,
            ..QuadraticValue::zero()
        };
        let q = derive_q(&dyn_f, &lin, &g, &t).unwrap();
        assert!(q
            .slices()
            .iter()
            .all(|s| s.values().iter().all(|v| *v == 1.7)));
    }

    #[test]
    fn catalog_is_elliptic_and_parses() {
        let g = ManufacturedCase::default_grid(64).unwrap();
        for tag in CaseTag::ALL {
            let case = build_case(tag);
            let sigma =
                MatrixField::from_fn(g, 1, |x, o| case.dynamics.diffusion(0.0, x, o)).unwrap();
            assert!(sigma.min_eigenvalue() > 0.0);
            assert_eq!(CaseTag::parse(tag.name()), Some(tag));
        }
        assert_eq!(CaseTag::parse("iii"), Some(CaseTag::StateNoise));
        assert_eq!(CaseTag::parse("v"), None);
    }

    #[test]
    fn frozen_density_without_transport_or_noise() {
        let g = Grid::line(-4.0, 4.0, 81).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let still = ScalarSde {
            sigma0: 0.0,
            g: 0.0,
            ..ScalarSde::brownian(1.0)
        };
        let rho0 = ScalarField::from_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
        let opts = PrimalOptions {
            require_ellipticity: false,
            ..Default::default()
        };
        let run = integrate_primal(&still, &QuadraticValue::zero(), &rho0, &t, &opts).unwrap();
        let first = run.rho.first();
        for s in run.rho.slices() {
            assert!(s.l1_distance(first).unwrap() < 1e-15);
        }
        assert!(integrate_primal(
            &still,
            &QuadraticValue::zero(),
            &rho0,
            &t,
            &PrimalOptions::default()
        )
        .is_err());
    }

    #[test]
    fn cfl_target_is_validated() {
        let g = Grid::line(-4.0, 4.0, 81).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let rho0 = ScalarField::from_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
        let opts = PrimalOptions {
            cfl_target: 1.2,
            ..Default::default()
        };
        let r = integrate_primal(
            &ScalarSde::brownian(1.0),
            &QuadraticValue::zero(),
            &rho0,
            &t,
            &opts,
        );
        assert!(matches!(r, Err(Error::InvalidParameter { .. })));
        let forced = PrimalOptions {
            substeps: Some(1),
            ..Default::default()
        };
        let r = integrate_primal(
            &ScalarSde::brownian(1.0),
            &QuadraticValue::zero(),
            &rho0,
            &t,
            &forced,
        );
        assert!(matches!(r, Err(Error::Cfl { .. })));
    }
}
