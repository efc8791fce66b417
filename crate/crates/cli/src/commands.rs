use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use qbridge_core::bridge::{
    control_from_value, optimal_control_field, solve_bridge, BridgeSolution, SolverOptions,
};
use qbridge_core::ensemble::{simulate, EnsembleOptions, EnsembleReport};
use qbridge_core::madelung::{recover_control, to_wave};
use qbridge_core::manufactured::{run_case, ManufacturedCase, PrimalOptions};
use qbridge_core::output::{
    read_solution, write_columns, write_complex_series, write_json, write_solution, Manifest,
    Provenance, StoredSolution, MANIFEST, VERIFICATION,
};
use qbridge_core::potentials::{v_sb_series, PotentialField};
use qbridge_core::problem::{Brownian, ProblemData};
use qbridge_core::verifier::{
    bridge_checks, format_table, general_checks, general_wave, refinement_study,
    single_level_criterion, Pipeline, Residual, ResidualReport,
};
use qbridge_core::{Grid, TimeSeries};
use serde::Serialize;

use crate::config::{EnsembleConfig, PipelineKind, Scenario, SolverConfig, VerifyConfig};
use crate::CliError;

/// Recovered control compared with `gᵀ∇S` on the same grid.
#[derive(Debug, Clone, Serialize)]
struct ControlCheck {
    max_imag: f64,
    mismatch: f64,
    scale: f64,
    unwrap_warnings: usize,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct Verification {
    tool: String,
    version: String,
    tolerance: f64,
    pass: bool,
    checks: Vec<ResidualReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    control: Option<ControlCheck>,
}

/// Manifest of a run that does not store a solution.
#[derive(Debug, Serialize)]
struct RunManifest {
    tool: String,
    version: String,
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<PathBuf>,
    config: serde_json::Value,
    seeds: Vec<u64>,
}

impl RunManifest {
    fn new(command: &'static str, config: &Scenario, seeds: Vec<u64>) -> Result<Self, CliError> {
        let (tool, version) = Manifest::tool_version();
        Ok(RunManifest {
            tool,
            version,
            command,
            source: None,
            config: to_json(config)?,
            seeds,
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Core(e.into()))
}

fn judge(residuals: &[Residual], tol: f64) -> Vec<ResidualReport> {
    residuals
        .iter()
        .map(|r| {
            let mut rep = r.report();
            rep.judge(single_level_criterion(&r.check, tol));
            rep
        })
        .collect()
}

/// Residual fields, one column per check, one file per slice.
fn write_residuals(dir: &Path, grid: &Grid, residuals: &[Residual]) -> Result<(), CliError> {
    let slices = residuals.first().map_or(0, |r| r.values.len());
    let columns: Vec<Vec<(&str, &[f64])>> = (0..slices)
        .map(|j| {
            residuals
                .iter()
                .map(|r| (r.check.as_str(), r.values[j].as_slice()))
                .collect()
        })
        .collect();
    Ok(write_columns(dir, "residuals", grid, &columns)?)
}

fn write_potential(dir: &Path, v: &PotentialField) -> Result<(), CliError> {
    Ok(write_complex_series(
        dir,
        "potential",
        ("V_re", "V_im"),
        &v.values,
    )?)
}

fn finish(dir: &Path, report: &Verification) -> Result<bool, CliError> {
    write_json(&dir.join(VERIFICATION), report)?;
    print!("{}", format_table(&report.checks));
    if let Some(c) = &report.control {
        println!(
            "control: imaginary {:.2e}, mismatch {:.2e} of {:.2e}",
            c.max_imag, c.mismatch, c.scale
        );
    }
    println!("{}", if report.pass { "PASS" } else { "FAIL" });
    Ok(report.pass)
}

fn verification(
    checks: Vec<ResidualReport>,
    tol: f64,
    control: Option<ControlCheck>,
) -> Verification {
    let (tool, version) = Manifest::tool_version();
    let pass = checks.iter().all(|c| c.pass) && control.as_ref().is_none_or(|c| c.pass);
    Verification {
        tool,
        version,
        tolerance: tol,
        pass,
        checks,
        control,
    }
}

fn control_check(sol: &BridgeSolution, data: &ProblemData) -> Result<ControlCheck, CliError> {
    let w = to_wave(&sol.r, &sol.s, data.lambda)?;
    let gains: Vec<_> = data
        .coefficient_series()?
        .into_iter()
        .map(|c| c.gain)
        .collect();
    let rec = recover_control(&w, &gains, sol.gauge_node)?;
    let exact = optimal_control_field(sol, data)?;
    let (mut scale, mut mismatch) = (0.0f64, 0.0f64);
    for (a, b) in exact.slices().iter().zip(rec.control.slices()) {
        for (ca, cb) in a.components().iter().zip(b.components()) {
            for (x, y) in ca.iter().zip(cb) {
                scale = scale.max(x.abs());
                mismatch = mismatch.max((x - y).abs());
            }
        }
    }
    let floor = 1e-10 * scale.max(1.0);
    Ok(ControlCheck {
        max_imag: rec.max_imag,
        mismatch,
        scale,
        unwrap_warnings: rec.unwrap.count,
        pass: rec.max_imag <= floor && mismatch <= floor,
    })
}

fn bridge_data(
    grid: Grid,
    time: qbridge_core::TimeGrid,
    rho0: qbridge_core::ScalarField,
    rho1: qbridge_core::ScalarField,
    lambda: f64,
    eps: f64,
) -> Result<ProblemData, CliError> {
    let model = Arc::new(Brownian {
        dim: grid.dim(),
        eps,
    });
    Ok(ProblemData::new(time, model, rho0, rho1, lambda, eps)?)
}

pub fn solve_sb(config: &Path, out: Option<&Path>, tol: Option<f64>) -> Result<bool, CliError> {
    let mut sc = Scenario::load(config)?;
    if let Some(t) = tol {
        sc.solver.get_or_insert_with(SolverConfig::default).tol = t;
    }
    let grid = sc.grid()?.grid()?;
    let time = sc.time()?.time()?;
    let problem = sc.problem()?;
    let data = bridge_data(
        grid,
        time,
        sc.rho0()?.evaluate(&grid)?,
        sc.rho1()?.evaluate(&grid)?,
        problem.lambda,
        problem.epsilon,
    )?;
    let dir = sc.output_dir(out)?;
    let solver = sc.solver.clone().unwrap_or_default();
    let opts = SolverOptions {
        tol: solver.tol,
        max_iters: solver.max_iters,
    };
    let sol = solve_bridge(&data, &opts)?;

    let provenance = Provenance::Bridge {
        epsilon: sol.epsilon,
        gauge_node: sol.gauge_node,
        gauge_point: grid.node(sol.gauge_node)[..grid.dim()].to_vec(),
        solver: opts,
        iterations: sol.log.clone(),
    };
    let fields = ["rho", "S", "R", "phi", "phihat"];
    let manifest = solution_manifest(&data, &fields, "SB", provenance, &sc)?;
    write_solution(
        &dir,
        &manifest,
        &[
            ("rho", &sol.rho),
            ("S", &sol.s),
            ("R", &sol.r),
            ("phi", &sol.phi),
            ("phihat", &sol.phihat),
        ],
    )?;
    // The wave function and potential live in standard units.
    let (r, s) = sol.standard_form()?;
    let w = to_wave(&r, &s, 1.0)?;
    write_complex_series(&dir, "psi", ("psi_re", "psi_im"), &w.psi)?;
    write_potential(&dir, &v_sb_series(&r, &s)?)?;
    write_control(&dir, &optimal_control_field(&sol, &data)?)?;

    let tol = sc.verify.clone().unwrap_or_default().tol;
    let residuals = bridge_checks(&sol, &data)?;
    write_residuals(&dir, &grid, &residuals)?;
    let report = verification(
        judge(&residuals, tol),
        tol,
        Some(control_check(&sol, &data)?),
    );
    println!("bridge converged in {} iterations", sol.iterations());
    finish(&dir, &report)
}

fn solution_manifest(
    data: &ProblemData,
    fields: &[&str],
    potential: &str,
    provenance: Provenance,
    config: &Scenario,
) -> Result<Manifest, CliError> {
    let (tool, version) = Manifest::tool_version();
    Ok(Manifest {
        tool,
        version,
        lambda: data.lambda,
        grid: data.grid,
        time: data.time,
        provenance,
        fields: fields.iter().map(|f| f.to_string()).collect(),
        potential: Some(potential.into()),
        config: to_json(config)?,
        seeds: vec![],
    })
}

fn write_control(dir: &Path, u: &TimeSeries<qbridge_core::VectorField>) -> Result<(), CliError> {
    let names: Vec<String> = (0..u.first().len()).map(|i| format!("u_{i}")).collect();
    let columns: Vec<Vec<(&str, &[f64])>> = u
        .slices()
        .iter()
        .map(|s| {
            names
                .iter()
                .zip(s.components())
                .map(|(n, c)| (n.as_str(), c.as_slice()))
                .collect()
        })
        .collect();
    Ok(write_columns(dir, "control", u.grid(), &columns)?)
}

pub fn manufactured(config: &Path, out: Option<&Path>, tol: Option<f64>) -> Result<bool, CliError> {
    let mut sc = Scenario::load(config)?;
    if let Some(t) = tol {
        sc.verify = Some(VerifyConfig { tol: t });
    }
    let m = sc.manufactured()?.clone();
    let case = m.case()?;
    let grid = match &sc.grid {
        Some(g) => g.grid()?,
        None => ManufacturedCase::default_grid(m.points)?,
    };
    let time = qbridge_core::TimeGrid::new(0.0, m.horizon, m.steps)?;
    let dir = sc.output_dir(out)?;
    let opts = PrimalOptions {
        cfl_target: m.cfl_target,
        ..PrimalOptions::default()
    };
    let sol = run_case(&case, &grid, &time, &opts)?;

    let provenance = Provenance::Manufactured {
        case: case.clone(),
        substeps: sol.run.substeps,
        substep_dt: sol.run.dt,
        cfl: sol.run.cfl,
        max_mass_drift: sol.run.mass_drift.iter().copied().fold(0.0, f64::max),
        q_source: "exact derivatives of the catalog value function".into(),
    };
    let manifest = solution_manifest(&sol.data, &["rho", "S", "R", "q"], "caSB", provenance, &sc)?;
    write_solution(
        &dir,
        &manifest,
        &[
            ("rho", &sol.rho),
            ("S", &sol.s),
            ("R", &sol.r),
            ("q", &sol.q),
        ],
    )?;
    let (w, v, _) = general_wave(&sol.r, &sol.s, &sol.data)?;
    write_complex_series(&dir, "psi", ("psi_re", "psi_im"), &w.psi)?;
    write_potential(&dir, &v)?;

    let tol = sc.verify.clone().unwrap_or_default().tol;
    let residuals = general_checks(&sol.rho, &sol.r, &sol.s, &sol.data)?;
    write_residuals(&dir, &grid, &residuals)?;
    println!(
        "case {}: {} substeps per slice, diffusive number {:.3}",
        case.tag.name(),
        sol.run.substeps,
        sol.run.cfl
    );
    finish(&dir, &verification(judge(&residuals, tol), tol, None))
}

/// A stored solution with its problem data rebuilt from the manifest.
struct Loaded {
    stored: StoredSolution,
    data: ProblemData,
    scenario: Option<Scenario>,
}

fn load(dir: &Path) -> Result<Loaded, CliError> {
    if !dir.join(MANIFEST).is_file() {
        return Err(CliError::Config(format!(
            "{} has no {MANIFEST}",
            dir.display()
        )));
    }
    let stored = read_solution(dir)?;
    let rho = stored.field("rho")?;
    let (rho0, rho1) = (rho.first().clone(), rho.last().clone());
    let m = &stored.manifest;
    let data = match &m.provenance {
        Provenance::Bridge { epsilon, .. } => {
            bridge_data(stored.grid, stored.time, rho0, rho1, m.lambda, *epsilon)?
        }
        Provenance::Manufactured { case, .. } => ProblemData::new(
            stored.time,
            case.model(),
            rho0,
            rho1,
            case.lambda,
            case.dynamics.sigma0 * case.dynamics.sigma0,
        )?,
    };
    let scenario = serde_json::from_value(m.config.clone()).ok();
    Ok(Loaded {
        stored,
        data,
        scenario,
    })
}

pub fn verify(dir: &Path, tol: Option<f64>, out: Option<&Path>) -> Result<bool, CliError> {
    let Loaded {
        stored,
        data,
        scenario,
    } = load(dir)?;
    let tol = tol.unwrap_or_else(|| scenario.and_then(|s| s.verify).unwrap_or_default().tol);
    let (rho, s, r) = (stored.field("rho")?, stored.field("S")?, stored.field("R")?);
    let report = match &stored.manifest.provenance {
        Provenance::Bridge {
            epsilon,
            gauge_node,
            iterations,
            ..
        } => {
            let sol = BridgeSolution {
                rho: rho.clone(),
                s: s.clone(),
                r: r.clone(),
                phi: stored.field("phi")?.clone(),
                phihat: stored.field("phihat")?.clone(),
                epsilon: *epsilon,
                gauge_node: *gauge_node,
                log: iterations.clone(),
            };
            let residuals = bridge_checks(&sol, &data)?;
            verification(
                judge(&residuals, tol),
                tol,
                Some(control_check(&sol, &data)?),
            )
        }
        Provenance::Manufactured { .. } => {
            let residuals = general_checks(rho, r, s, &data)?;
            verification(judge(&residuals, tol), tol, None)
        }
    };
    let target = out.unwrap_or(dir);
    fs::create_dir_all(target)?;
    finish(target, &report)
}

pub struct EnsembleFlags {
    pub particles: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub record: bool,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EnsembleSummary {
    #[serde(flatten)]
    report: EnsembleReport,
    tol: f64,
    pass: bool,
}

pub fn ensemble(dir: &Path, flags: EnsembleFlags, out: Option<&Path>) -> Result<bool, CliError> {
    let loaded = load(dir)?;
    let base = match &flags.config {
        Some(p) => Scenario::load(p)?.ensemble,
        None => loaded.scenario.as_ref().and_then(|s| s.ensemble.clone()),
    };
    let mut cfg = base.unwrap_or_default();
    cfg.particles = flags.particles.unwrap_or(cfg.particles);
    cfg.seed = flags.seed.unwrap_or(cfg.seed);
    cfg.tol = flags.tol.unwrap_or(cfg.tol);
    cfg.record |= flags.record;
    let EnsembleConfig {
        particles,
        seed,
        record,
        tol,
    } = cfg.clone();

    let u = control_from_value(loaded.stored.field("S")?, &loaded.data)?;
    let run = simulate(
        &loaded.data,
        &u,
        &EnsembleOptions {
            particles,
            seed,
            record,
        },
    )?;
    let report = EnsembleReport::new(&run, &loaded.data)?;

    let target = out.map_or_else(|| dir.join("ensemble"), Path::to_path_buf);
    fs::create_dir_all(&target)?;
    let scenario = Scenario {
        ensemble: Some(cfg),
        ..empty_scenario()
    };
    let mut manifest = RunManifest::new("ensemble", &scenario, vec![seed])?;
    manifest.source = Some(dir.to_path_buf());
    write_json(&target.join(MANIFEST), &manifest)?;
    let mut w = BufWriter::new(File::create(target.join("histogram.csv"))?);
    run.histogram.to_csv(&mut w)?;
    drop(w);
    if let Some(t) = &run.trajectories {
        t.write(BufWriter::new(File::create(
            target.join("trajectories.bin"),
        )?))?;
    }
    let pass = report.l1_terminal <= tol;
    println!(
        "{} particles, seed {}: terminal L1 {:.4} (initial {:.4}), {} reflections",
        report.particles, report.seed, report.l1_terminal, report.l1_initial, report.reflections
    );
    write_json(
        &target.join("report.json"),
        &EnsembleSummary { report, tol, pass },
    )?;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn empty_scenario() -> Scenario {
    Scenario {
        grid: None,
        time: None,
        problem: None,
        rho0: None,
        rho1: None,
        solver: None,
        manufactured: None,
        ensemble: None,
        refine: None,
        verify: None,
        output: None,
    }
}

#[derive(Debug, Serialize)]
struct RefineReport<'a> {
    pipeline: &'a Pipeline,
    levels: &'a [usize],
    pass: bool,
    reports: &'a [ResidualReport],
}

pub fn refine(
    config: &Path,
    out: Option<&Path>,
    levels: Option<Vec<usize>>,
) -> Result<bool, CliError> {
    let mut sc = Scenario::load(config)?;
    let mut r = sc.refine()?.clone();
    if let Some(l) = levels {
        r.levels = l;
    }
    if r.levels.is_empty() {
        return Err(CliError::Config("`refine.levels` is empty".into()));
    }
    sc.refine = Some(r.clone());
    let pipeline = match r.pipeline {
        PipelineKind::Bridge => Pipeline::Bridge(sc.bridge_setup()?),
        PipelineKind::Manufactured => {
            let m = sc.manufactured()?;
            Pipeline::Manufactured {
                tag: m.tag()?,
                // The pipeline counts slices at 256 points.
                steps: ((m.steps * 256) as f64 / m.points as f64).round() as usize,
                horizon: m.horizon,
            }
        }
        PipelineKind::LogDensity => Pipeline::LogDensity {
            dim: r.dim,
            seed: r.seed,
        },
        PipelineKind::Constant => Pipeline::Constant { dim: r.dim },
    };
    let dir = sc.output_dir(out)?;
    let reports = refinement_study(&pipeline, &r.levels)?;
    fs::create_dir_all(&dir)?;
    let pass = reports.iter().all(|r| r.pass);
    let seeds = match r.pipeline {
        PipelineKind::LogDensity => vec![r.seed],
        _ => vec![],
    };
    write_json(
        &dir.join(MANIFEST),
        &RunManifest::new("refine", &sc, seeds)?,
    )?;
    write_json(
        &dir.join("refine.json"),
        &RefineReport {
            pipeline: &pipeline,
            levels: &r.levels,
            pass,
            reports: &reports,
        },
    )?;
    let table = format_table(&reports);
    fs::write(dir.join("refine.txt"), &table)?;
    println!("{}", pipeline.name());
    print!("{table}");
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}
