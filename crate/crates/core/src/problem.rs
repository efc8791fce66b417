//! Control-affine problem data: dynamics, cost, endpoint densities.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    normalize_density, GainField, Grid, MatrixField, OnGrid, ScalarField, TimeGrid, TimeSeries,
    VectorField,
};

/// Coefficients of `dx = (f + g u) dt + σ dw` and the state cost `q`.
///
/// Matrices are written row-major into `out`.
pub trait ControlAffineModel: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// `state_dim x input_dim`.
    fn input_matrix(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// `state_dim x noise_dim`.
    fn noise_matrix(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn state_cost(&self, t: f64, x: &[f64]) -> f64;

    /// `σσᵀ`, row-major `state_dim x state_dim`.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (n, p) = (self.state_dim(), self.noise_dim());
        let mut s = vec![0.0; n * p];
        self.noise_matrix(t, x, &mut s);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..p).map(|c| s[i * p + c] * s[j * p + c]).sum();
            }
        }
    }
}

/// Pure Brownian prior: `f = 0`, `g = I`, `σ = √ε I`, `q = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Brownian {
    pub dim: usize,
    pub eps: f64,
}

impl ControlAffineModel for Brownian {
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn input_matrix(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity_into(self.dim, 1.0, out);
    }
    fn noise_matrix(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity_into(self.dim, self.eps.sqrt(), out);
    }
    fn state_cost(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
}

pub(crate) fn identity_into(n: usize, c: f64, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        out[i * n + i] = c;
    }
}

/// A model's coefficients sampled on a grid at one time.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub time: f64,
    pub drift: VectorField,
    pub gain: GainField,
    pub noise: GainField,
    pub diffusion: MatrixField,
    pub cost: ScalarField,
}

impl Coefficients {
    pub fn sample(model: &dyn ControlAffineModel, grid: &Grid, t: f64) -> Result<Self> {
        let (n, m, p) = (model.state_dim(), model.input_dim(), model.noise_dim());
        if n != grid.dim() {
            return Err(Error::ShapeMismatch(format!(
                "model state dimension {n} on a {}-D grid",
                grid.dim()
            )));
        }
        let g = *grid;
        Ok(Coefficients {
            time: t,
            drift: VectorField::from_fn(g, n, |x, o| model.drift(t, x, o))?,
            gain: GainField::from_fn(g, n, m, |x, o| model.input_matrix(t, x, o))?,
            noise: GainField::from_fn(g, n, p, |x, o| model.noise_matrix(t, x, o))?,
            diffusion: MatrixField::from_fn(g, n, |x, o| model.diffusion(t, x, o))?,
            cost: ScalarField::from_fn(g, |x| model.state_cost(t, x))?,
        })
    }

    /// `g gᵀ`.
    pub fn control_metric(&self) -> MatrixField {
        self.gain.outer()
    }
}

/// Coefficients at every slice of a time grid.
pub fn sample_series(
    model: &dyn ControlAffineModel,
    grid: &Grid,
    time: &TimeGrid,
) -> Result<Vec<Coefficients>> {
    (0..time.len())
        .map(|j| Coefficients::sample(model, grid, time.time(j)))
        .collect()
}

/// One Gaussian bump `w · exp(−|x − m|² / 2v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    #[serde(default = "unit_weight")]
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Catalog densities that can be evaluated on any grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    Gaussian { mean: Vec<f64>, var: f64 },
    Mixture { components: Vec<GaussianBump> },
}

impl DensitySpec {
    pub fn gaussian(mean: &[f64], var: f64) -> Self {
        DensitySpec::Gaussian {
            mean: mean.to_vec(),
            var,
        }
    }

    fn bumps(&self) -> Vec<GaussianBump> {
        match self {
            DensitySpec::Gaussian { mean, var } => vec![GaussianBump {
                weight: 1.0,
                mean: mean.clone(),
                var: *var,
            }],
            DensitySpec::Mixture { components } => components.clone(),
        }
    }

    /// Normalized density on `grid`.
    pub fn evaluate(&self, grid: &Grid) -> Result<ScalarField> {
        let bumps = self.bumps();
        if bumps.is_empty() {
            return Err(Error::param("density", "mixture has no components"));
        }
        for b in &bumps {
            if b.mean.len() != grid.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "density mean {:?} on a {}-D grid",
                    b.mean,
                    grid.dim()
                )));
            }
            if !(b.var > 0.0) || !(b.weight >= 0.0) {
                return Err(Error::param(
                    "density",
                    "variances must be positive and weights nonnegative",
                ));
            }
        }
        let dim = grid.dim() as i32;
        normalize_density(&ScalarField::from_fn(*grid, |x| {
            bumps
                .iter()
                .map(|b| {
                    let d2: f64 = x.iter().zip(&b.mean).map(|(a, m)| (a - m).powi(2)).sum();
                    b.weight * (-d2 / (2.0 * b.var)).exp()
                        / (2.0 * std::f64::consts::PI * b.var).powi(dim).sqrt()
                })
                .sum()
        })?)
    }
}

/// The full problem: dynamics, horizon, endpoint densities and constants.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub grid: Grid,
    pub time: TimeGrid,
    pub model: Arc<dyn ControlAffineModel>,
    pub rho0: ScalarField,
    pub rho1: ScalarField,
    pub lambda: f64,
    pub epsilon: f64,
}

/// Relative density level the box edges must stay below.
pub const TAIL_LEVEL: f64 = 1e-12;

impl ProblemData {
    /// Normalizes the endpoint densities and checks uniform ellipticity on all
    /// nodes and slices.
    pub fn new(
        time: TimeGrid,
        model: Arc<dyn ControlAffineModel>,
        rho0: ScalarField,
        rho1: ScalarField,
        lambda: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let grid = *rho0.grid();
        if *rho1.grid() != grid {
            return Err(Error::ShapeMismatch(
                "endpoint densities on different grids".into(),
            ));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::param(
                "lambda",
                format!("must be positive, got {lambda}"),
            ));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::param(
                "epsilon",
                format!("must be positive, got {epsilon}"),
            ));
        }
        if model.state_dim() != grid.dim() {
            return Err(Error::ShapeMismatch(format!(
                "model state dimension {} on a {}-D grid",
                model.state_dim(),
                grid.dim()
            )));
        }
        let data = ProblemData {
            grid,
            time,
            rho0: normalize_density(&rho0)?,
            rho1: normalize_density(&rho1)?,
            model,
            lambda,
            epsilon,
        };
        data.check_ellipticity()?;
        Ok(data)
    }

    /// Smallest eigenvalue of `Σ` over all nodes and slices must be positive.
    pub fn check_ellipticity(&self) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for j in 0..self.time.len() {
            let t = self.time.time(j);
            let sigma = MatrixField::from_fn(self.grid, self.grid.dim(), |x, o| {
                self.model.diffusion(t, x, o)
            })?;
            let e = sigma.min_eigenvalue();
            if !(e > 0.0) {
                return Err(Error::NotElliptic {
                    min_eigenvalue: e,
                    time: t,
                });
            }
            worst = worst.min(e);
        }
        Ok(worst)
    }

    /// Both endpoint densities must decay below [`TAIL_LEVEL`] on the box faces.
    pub fn check_tails(&self) -> Result<()> {
        for (name, rho) in [("initial", &self.rho0), ("terminal", &self.rho1)] {
            let edge = self
                .grid
                .boundary_nodes()
                .into_iter()
                .map(|k| rho.values()[k])
                .fold(0.0, f64::max);
            if edge > TAIL_LEVEL * rho.max() {
                return Err(Error::DomainTooSmall(format!(
                    "{name} density is {:.2e} of its peak on the boundary",
                    edge / rho.max()
                )));
            }
        }
        Ok(())
    }

    pub fn coefficients(&self, t: f64) -> Result<Coefficients> {
        Coefficients::sample(self.model.as_ref(), &self.grid, t)
    }

    pub fn coefficient_series(&self) -> Result<Vec<Coefficients>> {
        sample_series(self.model.as_ref(), &self.grid, &self.time)
    }
}

/// Time series of the control-metric `g gᵀ`, handy for specializations.
pub fn metric_series(coeffs: &[Coefficients], time: TimeGrid) -> Result<TimeSeries<MatrixField>> {
    TimeSeries::new(time, coeffs.iter().map(|c| c.control_metric()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: Grid, mean: f64, var: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x| (-(x[0] - mean).powi(2) / (2.0 * var)).exp()).unwrap()
    }

    #[test]
    fn brownian_coefficients() {
        let g = Grid::line(-5.0, 5.0, 64).unwrap();
        let c = Coefficients::sample(&Brownian { dim: 1, eps: 0.5 }, &g, 0.3).unwrap();
        assert!(c.drift.component(0).iter().all(|v| *v == 0.0));
        assert!(c
            .diffusion
            .entry(0, 0)
            .iter()
            .all(|v| (v - 0.5).abs() < 1e-15));
        assert!(c.control_metric().entry(0, 0).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn problem_normalizes_and_checks_tails() {
        let g = Grid::line(-5.0, 5.0, 128).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let p = ProblemData::new(
            t,
            Arc::new(Brownian { dim: 1, eps: 0.5 }),
            gaussian(g, -1.0, 0.25),
            gaussian(g, 1.0, 0.25),
            1.0,
            0.5,
        )
        .unwrap();
        assert!((p.rho0.integrate() - 1.0).abs() < 1e-12);
        p.check_tails().unwrap();

        let wide = ProblemData::new(
            t,
            Arc::new(Brownian { dim: 1, eps: 0.5 }),
            gaussian(g, 0.0, 4.0),
            gaussian(g, 0.0, 0.25),
            1.0,
            0.5,
        )
        .unwrap();
        assert!(matches!(wide.check_tails(), Err(Error::DomainTooSmall(_))));
    }

    #[test]
    fn mixture_weights_split_mass() {
        let g = Grid::line(-8.0, 8.0, 400).unwrap();
        let m = DensitySpec::Mixture {
            components: vec![
                GaussianBump {
                    weight: 3.0,
                    mean: vec![-3.0],
                    var: 0.5,
                },
                GaussianBump {
                    weight: 1.0,
                    mean: vec![3.0],
                    var: 0.5,
                },
            ],
        }
        .evaluate(&g)
        .unwrap();
        let left: f64 = m
            .values()
            .iter()
            .zip(g.quadrature_weights())
            .enumerate()
            .filter(|(k, _)| g.node(*k)[0] < 0.0)
            .map(|(_, (v, w))| v * w)
            .sum();
        assert!((left - 0.75).abs() < 1e-4, "{left}");
        assert!(DensitySpec::gaussian(&[0.0, 0.0], 1.0)
            .evaluate(&g)
            .is_err());
    }

    #[test]
    fn rejects_bad_constants() {
        let g = Grid::line(-5.0, 5.0, 32).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let r = gaussian(g, 0.0, 1.0);
        let m = Arc::new(Brownian { dim: 1, eps: 1.0 });
        assert!(ProblemData::new(t, m.clone(), r.clone(), r.clone(), 0.0, 1.0).is_err());
        assert!(ProblemData::new(t, m, r.clone(), r, 1.0, -1.0).is_err());
    }
}
