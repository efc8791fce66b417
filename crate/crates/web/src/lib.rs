//! WebAssembly bindings for the demo page in `www/`.
//!
//! A [`Bridge`] is solved once and then queried slice by slice. Arrays cross
//! the boundary as `Float64Array`, tables as JSON strings.

use qbridge_core::bridge::{optimal_control_field, solve_bridge, BridgeSolution};
use qbridge_core::ensemble::{simulate, EnsembleOptions, EnsembleReport};
use qbridge_core::potentials::{v_sb_series, PotentialField};
use qbridge_core::problem::{DensitySpec, ProblemData};
use qbridge_core::verifier::{bridge_checks, single_level_criterion, BridgeSetup, DEFAULT_REL_TOL};
use qbridge_core::{TimeSeries, VectorField};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MIN_POINTS: usize = 64;
pub const MAX_POINTS: usize = 1024;

/// A solved one-dimensional bridge between two Gaussians on `[-5, 5]`.
#[wasm_bindgen]
pub struct Bridge {
    data: ProblemData,
    sol: BridgeSolution,
    potential: PotentialField,
    control: TimeSeries<VectorField>,
}

/// Terminal statistics of a steered ensemble.
#[wasm_bindgen]
pub struct Steering {
    histogram: Vec<f64>,
    l1_initial: f64,
    l1_terminal: f64,
    mean: f64,
    var: f64,
}

#[derive(Debug, Serialize)]
struct CheckRow {
    check: String,
    l2: f64,
    linf: f64,
    scale: f64,
    pass: bool,
}

impl Bridge {
    pub fn build(
        m0: f64,
        v0: f64,
        m1: f64,
        v1: f64,
        epsilon: f64,
        points: usize,
    ) -> qbridge_core::Result<Self> {
        let points = points.clamp(MIN_POINTS, MAX_POINTS);
        let mut setup = BridgeSetup::gaussian_benchmark();
        setup.rho0 = DensitySpec::gaussian(&[m0], v0);
        setup.rho1 = DensitySpec::gaussian(&[m1], v1);
        setup.epsilon = epsilon;
        let data = setup.problem(points, setup.steps_for(points).max(8))?;
        let sol = solve_bridge(&data, &setup.solver)?;
        let (r, s) = sol.standard_form()?;
        let potential = v_sb_series(&r, &s)?;
        let control = optimal_control_field(&sol, &data)?;
        Ok(Bridge {
            data,
            sol,
            potential,
            control,
        })
    }

    pub fn check_rows(&self) -> qbridge_core::Result<String> {
        let rows: Vec<CheckRow> = bridge_checks(&self.sol, &self.data)?
            .iter()
            .map(|res| {
                let mut r = res.report();
                r.judge(single_level_criterion(&r.check, DEFAULT_REL_TOL));
                CheckRow {
                    check: r.check,
                    l2: r.l2,
                    linf: r.linf,
                    scale: r.scale,
                    pass: r.pass,
                }
            })
            .collect();
        Ok(serde_json::to_string(&rows).expect("plain numbers serialize"))
    }

    pub fn run_ensemble(&self, particles: usize, seed: u64) -> qbridge_core::Result<Steering> {
        let opts = EnsembleOptions {
            particles,
            seed,
            record: false,
        };
        let run = simulate(&self.data, &self.control, &opts)?;
        let report = EnsembleReport::new(&run, &self.data)?;
        Ok(Steering {
            histogram: run.histogram.density().values().to_vec(),
            l1_initial: report.l1_initial,
            l1_terminal: report.l1_terminal,
            mean: report.terminal_mean[0],
            var: report.terminal_var[0],
        })
    }
}

#[wasm_bindgen]
impl Bridge {
    /// Solve `N(m0, v0) → N(m1, v1)` with noise level `epsilon`.
    #[wasm_bindgen(constructor)]
    pub fn new(
        m0: f64,
        v0: f64,
        m1: f64,
        v1: f64,
        epsilon: f64,
        points: usize,
    ) -> Result<Bridge, JsError> {
        Ok(Self::build(m0, v0, m1, v1, epsilon, points)?)
    }

    pub fn nodes(&self) -> Vec<f64> {
        let grid = self.data.grid;
        (0..grid.len()).map(|k| grid.node(k)[0]).collect()
    }

    pub fn slices(&self) -> usize {
        self.data.time.len()
    }

    pub fn time(&self, j: usize) -> f64 {
        self.data.time.time(j.min(self.slices() - 1))
    }

    pub fn iterations(&self) -> usize {
        self.sol.iterations()
    }

    pub fn density(&self, j: usize) -> Vec<f64> {
        self.sol
            .rho
            .slice(j.min(self.slices() - 1))
            .values()
            .to_vec()
    }

    /// Real part of the potential at slice `j`, in standard units.
    pub fn potential_re(&self, j: usize) -> Vec<f64> {
        self.potential
            .re(j.min(self.slices() - 1))
            .values()
            .to_vec()
    }

    pub fn potential_im(&self, j: usize) -> Vec<f64> {
        self.potential
            .im(j.min(self.slices() - 1))
            .values()
            .to_vec()
    }

    /// Residual table as a JSON array of `{check, l2, linf, scale, pass}`.
    pub fn checks(&self) -> Result<String, JsError> {
        Ok(self.check_rows()?)
    }

    pub fn steer(&self, particles: usize, seed: u64) -> Result<Steering, JsError> {
        Ok(self.run_ensemble(particles, seed)?)
    }
}

#[wasm_bindgen]
impl Steering {
    /// Terminal histogram as a density on the grid nodes.
    pub fn histogram(&self) -> Vec<f64> {
        self.histogram.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn l1_initial(&self) -> f64 {
        self.l1_initial
    }

    #[wasm_bindgen(getter)]
    pub fn l1_terminal(&self) -> f64 {
        self.l1_terminal
    }

    #[wasm_bindgen(getter)]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[wasm_bindgen(getter)]
    pub fn var(&self) -> f64 {
        self.var
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_bridge_passes_its_checks() {
        let b = Bridge::build(-1.0, 0.25, 1.0, 0.25, 0.5, 256).unwrap();
        assert_eq!(b.nodes().len(), 256);
        assert_eq!(b.slices(), 101);
        let rows: Vec<serde_json::Value> = serde_json::from_str(&b.check_rows().unwrap()).unwrap();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r["pass"] == true), "{rows:?}");
    }

    #[test]
    fn slices_are_clamped_and_normalized() {
        let b = Bridge::build(0.0, 0.5, 0.5, 0.3, 1.0, 128).unwrap();
        let h = b.nodes()[1] - b.nodes()[0];
        let last = b.density(10_000);
        let mass: f64 = last.iter().sum::<f64>() * h;
        assert!((mass - 1.0).abs() < 1e-2, "{mass}");
        assert_eq!(b.potential_im(10_000).len(), 128);
    }

    #[test]
    fn steering_is_seeded() {
        let b = Bridge::build(-1.0, 0.25, 1.0, 0.25, 0.5, 128).unwrap();
        let a = b.run_ensemble(5000, 3).unwrap();
        let c = b.run_ensemble(5000, 3).unwrap();
        assert_eq!(a.histogram, c.histogram);
        assert!((a.mean - 1.0).abs() < 0.05, "{}", a.mean);
        assert!(a.l1_terminal < 0.2);
    }
}
