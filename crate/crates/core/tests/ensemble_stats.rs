use std::sync::Arc;

use qbridge_core::bridge::{optimal_control_field, solve_bridge};
use qbridge_core::ensemble::{
    histogram_distance, sample_density, simulate, EnsembleOptions, EnsembleReport, Histogram,
};
use qbridge_core::manufactured::ScalarSde;
use qbridge_core::problem::{DensitySpec, ProblemData};
use qbridge_core::verifier::BridgeSetup;
use qbridge_core::{Grid, TimeGrid, TimeSeries, VectorField};

fn zero_control(grid: Grid, time: TimeGrid) -> TimeSeries<VectorField> {
    TimeSeries::try_from_fn(time, |_, _| Ok(VectorField::zeros(grid, 1))).unwrap()
}

fn opts(particles: usize, seed: u64) -> EnsembleOptions {
    EnsembleOptions {
        particles,
        seed,
        record: false,
    }
}

#[test]
fn free_brownian_motion_spreads_at_the_right_rate() {
    let (eps, v0, t1) = (0.5, 0.2, 1.0);
    let grid = Grid::line(-8.0, 8.0, 801).unwrap();
    let time = TimeGrid::new(0.0, t1, 50).unwrap();
    let rho0 = DensitySpec::gaussian(&[0.0], v0).evaluate(&grid).unwrap();
    let data = ProblemData::new(
        time,
        Arc::new(ScalarSde::brownian(eps)),
        rho0.clone(),
        rho0,
        1.0,
        eps,
    )
    .unwrap();
    let n = 40_000;
    let run = simulate(&data, &zero_control(grid, time), &opts(n, 11)).unwrap();
    let (mean, var) = run.terminal.moments(0);
    // Cell jitter adds h²/12 to the initial variance.
    let h = grid.spacing(0);
    let expected = v0 + h * h / 12.0 + eps * t1;
    let se_var = expected * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - expected).abs() < 3.0 * se_var, "{var} vs {expected}");
    assert!(mean.abs() < 3.0 * (expected / n as f64).sqrt());
    assert_eq!(run.reflections, 0);
}

#[test]
fn particles_without_noise_or_control_stay_put() {
    let grid = Grid::line(-4.0, 4.0, 161).unwrap();
    let time = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let rho0 = DensitySpec::gaussian(&[0.5], 0.3).evaluate(&grid).unwrap();
    // Built field by field: the validating constructor rejects σ = 0.
    let data = ProblemData {
        grid,
        time,
        model: Arc::new(ScalarSde {
            sigma0: 0.0,
            ..ScalarSde::brownian(1.0)
        }),
        rho0: rho0.clone(),
        rho1: rho0,
        lambda: 1.0,
        epsilon: 1.0,
    };
    let run = simulate(&data, &zero_control(grid, time), &opts(500, 3)).unwrap();
    assert_eq!(run.initial.positions, run.terminal.positions);
}

#[test]
fn exact_samples_are_close_in_histogram_distance() {
    let grid = Grid::line(-5.0, 5.0, 512).unwrap();
    let rho = DensitySpec::gaussian(&[1.0], 0.25).evaluate(&grid).unwrap();
    let xs = sample_density(&rho, 100_000, 5).unwrap();
    let d = histogram_distance(&Histogram::from_positions(grid, &xs), &rho).unwrap();
    assert!(d <= 0.05, "{d}");
}

#[test]
fn controlled_ensemble_reaches_the_target() {
    let setup = BridgeSetup::gaussian_benchmark();
    let data = setup.problem(512, 200).unwrap();
    let sol = solve_bridge(&data, &setup.solver).unwrap();
    let u = optimal_control_field(&sol, &data).unwrap();
    let h = data.grid.spacing(0);
    for seed in [7, 8, 9] {
        let mut l1 = Vec::new();
        for n in [10_000, 100_000] {
            let run = simulate(&data, &u, &opts(n, seed)).unwrap();
            let rep = EnsembleReport::new(&run, &data).unwrap();
            assert_eq!(rep.reflections, 0);
            assert!((rep.terminal_mean[0] - 1.0).abs() < 0.02, "{rep:?}");
            l1.push(rep.l1_terminal);
        }
        // Constant of a C/√N law fitted at the smaller ensemble.
        let c = l1[0] * 100.0;
        let bound = c / 100_000f64.sqrt() + 2.0 * h;
        assert!(l1[1] < l1[0], "seed {seed}: {l1:?}");
        assert!(l1[1] <= bound, "seed {seed}: {} > {bound}", l1[1]);
        assert!(l1[1] <= 0.05, "seed {seed}: {l1:?}");
    }
}
