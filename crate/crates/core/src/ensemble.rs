//! Euler–Maruyama particle ensembles under a gridded feedback control.
//!
//! Every particle owns a ChaCha stream selected by its index, so results do
//! not depend on how particles are scheduled across threads.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    interp_unchecked, same_grid, write_csv, Grid, OnGrid, ScalarField, TimeSeries, VectorField,
};
use crate::par_collect;
use crate::problem::ProblemData;

/// Smallest ensemble for which statistical checks are meaningful.
pub const MIN_STATISTICAL_PARTICLES: usize = 1000;

/// Escape distance, as a fraction of the box width, treated as blow-up.
pub const ESCAPE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub particles: usize,
    pub seed: u64,
    /// Keep every slice of every path.
    pub record: bool,
}

/// Particle positions, `particles × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub positions: Vec<f64>,
    pub dim: usize,
    pub seed: u64,
    /// Index of the time slice the positions belong to.
    pub step: usize,
}

impl EnsembleState {
    pub fn particles(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn position(&self, p: usize) -> &[f64] {
        &self.positions[p * self.dim..(p + 1) * self.dim]
    }

    /// Sample mean and variance along `axis`.
    pub fn moments(&self, axis: usize) -> (f64, f64) {
        let n = self.particles() as f64;
        let xs = self.positions.iter().skip(axis).step_by(self.dim);
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }
}

/// Full paths, laid out `[slice][particle][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub dim: usize,
    pub particles: usize,
    pub slices: usize,
    pub data: Vec<f64>,
}

const TRAJ_MAGIC: &[u8; 8] = b"SBTRAJ01";

impl Trajectories {
    pub fn at(&self, slice: usize, particle: usize) -> &[f64] {
        let o = (slice * self.particles + particle) * self.dim;
        &self.data[o..o + self.dim]
    }

    /// Binary layout, little-endian: magic `SBTRAJ01`, `u32` dim, `u64`
    /// particles, `u64` slices, then `f64` positions in `[slice][particle][dim]`
    /// order.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRAJ_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.particles as u64).to_le_bytes())?;
        w.write_all(&(self.slices as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRAJ_MAGIC {
            return Err(Error::param("trajectory file", "bad magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let particles = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let slices = u64::from_le_bytes(b8) as usize;
        let len = dim
            .checked_mul(particles)
            .and_then(|v| v.checked_mul(slices))
            .ok_or_else(|| Error::param("trajectory file", "header sizes overflow"))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        Ok(Trajectories {
            dim,
            particles,
            slices,
            data,
        })
    }
}

/// Particle counts per node cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub grid: Grid,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    /// Cell of the node nearest to `x` on each axis.
    pub fn from_positions(grid: Grid, positions: &[f64]) -> Self {
        let dim = grid.dim();
        let mut counts = vec![0u64; grid.len()];
        for x in positions.chunks_exact(dim) {
            counts[nearest_node(&grid, x)] += 1;
        }
        Histogram {
            grid,
            counts,
            total: (positions.len() / dim) as u64,
        }
    }

    /// Fraction of particles per cell; sums to one.
    pub fn fractions(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Fractions divided by cell volumes, comparable with a density.
    pub fn density(&self) -> ScalarField {
        let values = self
            .fractions()
            .iter()
            .zip(self.grid.quadrature_weights())
            .map(|(f, w)| f / w)
            .collect();
        ScalarField::raw(self.grid, values)
    }

    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let counts: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        let fractions = self.fractions();
        let density = self.density();
        write_csv(
            w,
            &self.grid,
            &[
                ("count", &counts),
                ("fraction", &fractions),
                ("density", density.values()),
            ],
        )
    }
}

fn nearest_node(grid: &Grid, x: &[f64]) -> usize {
    let mut idx = [0usize; 2];
    for (a, slot) in idx.iter_mut().enumerate().take(grid.dim()) {
        let i = ((x[a] - grid.lower(a)) / grid.spacing(a)).round();
        *slot = i.clamp(0.0, (grid.points(a) - 1) as f64) as usize;
    }
    grid.flat_index(idx)
}

/// `Σ_k |fraction_k − ρ_k w_k|` with trapezoid cell volumes `w_k`.
pub fn histogram_distance(hist: &Histogram, rho: &ScalarField) -> Result<f64> {
    same_grid(&hist.grid, rho.grid())?;
    Ok(hist
        .fractions()
        .iter()
        .zip(rho.values())
        .zip(hist.grid.quadrature_weights())
        .map(|((f, r), w)| (f - r * w).abs())
        .sum())
}

fn particle_rng(seed: u64, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(particle as u64);
    rng
}

/// Cumulative cell masses `ρ_k w_k`, normalized.
fn cell_cdf(rho: &ScalarField) -> Result<Vec<f64>> {
    let w = rho.grid().quadrature_weights();
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = rho
        .values()
        .iter()
        .zip(&w)
        .map(|(r, w)| {
            if *r > 0.0 {
                acc += r * w;
            }
            acc
        })
        .collect();
    if !(acc > 0.0) || !acc.is_finite() {
        return Err(Error::DegenerateDensity(
            "cannot sample a density without mass".into(),
        ));
    }
    cdf.iter_mut().for_each(|c| *c /= acc);
    Ok(cdf)
}

/// Draw a cell by mass, then a uniform point inside it.
fn draw(grid: &Grid, cdf: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let u: f64 = rng.random();
    let k = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
    let node = grid.node(k);
    for (a, o) in out.iter_mut().enumerate() {
        let h = grid.spacing(a);
        let lo = (node[a] - 0.5 * h).max(grid.lower(a));
        let hi = (node[a] + 0.5 * h).min(grid.upper(a));
        *o = lo + (hi - lo) * rng.random::<f64>();
    }
}

/// Independent draws from the cell-wise distribution of `ρ`.
pub fn sample_density(rho: &ScalarField, n: usize, seed: u64) -> Result<Vec<f64>> {
    let grid = *rho.grid();
    let cdf = cell_cdf(rho)?;
    let dim = grid.dim();
    let pts = par_collect(n, |p| {
        let mut rng = particle_rng(seed, p);
        let mut x = vec![0.0; dim];
        draw(&grid, &cdf, &mut rng, &mut x);
        x
    });
    Ok(pts.concat())
}

/// Reflect `x` into the box. Errors if it left the padded box.
fn reflect(grid: &Grid, x: &mut [f64]) -> std::result::Result<bool, ()> {
    let mut hit = false;
    for (a, v) in x.iter_mut().enumerate() {
        let (lo, hi) = (grid.lower(a), grid.upper(a));
        let pad = ESCAPE_FRACTION * grid.width(a);
        if !v.is_finite() || *v < lo - pad || *v > hi + pad {
            return Err(());
        }
        if *v < lo {
            *v = (2.0 * lo - *v).min(hi);
            hit = true;
        } else if *v > hi {
            *v = (2.0 * hi - *v).max(lo);
            hit = true;
        }
    }
    Ok(hit)
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub initial: EnsembleState,
    pub terminal: EnsembleState,
    pub histogram: Histogram,
    /// Number of boundary reflections over all particles and steps.
    pub reflections: u64,
    pub trajectories: Option<Trajectories>,
}

struct Path {
    start: Vec<f64>,
    end: Vec<f64>,
    reflections: u64,
    slices: Vec<f64>,
}

/// `x ← x + (f + g u)Δt + σ√Δt ξ` from samples of `ρ0`, with `u` interpolated
/// from the grid slice at the start of each step.
pub fn simulate(
    data: &ProblemData,
    u: &TimeSeries<VectorField>,
    opts: &EnsembleOptions,
) -> Result<EnsembleRun> {
    if opts.particles == 0 {
        return Err(Error::param("particles", "must be at least one"));
    }
    let grid = data.grid;
    same_grid(&grid, u.grid())?;
    let time = data.time;
    if u.len() != time.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} control slices for {} time slices",
            u.len(),
            time.len()
        )));
    }
    let model = data.model.as_ref();
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.noise_dim());
    if u.first().len() != m {
        return Err(Error::ShapeMismatch(format!(
            "control has {} components, model expects {m}",
            u.first().len()
        )));
    }
    let cdf = cell_cdf(&data.rho0)?;
    let dt = time.dt();
    let sq = dt.sqrt();
    let steps = time.steps();

    let paths = par_collect(opts.particles, |pi| -> Result<Path> {
        let mut rng = particle_rng(opts.seed, pi);
        let mut x = vec![0.0; n];
        draw(&grid, &cdf, &mut rng, &mut x);
        let start = x.clone();
        let (mut f, mut g, mut s) = (vec![0.0; n], vec![0.0; n * m], vec![0.0; n * p]);
        let (mut uu, mut xi) = (vec![0.0; m], vec![0.0; p]);
        let mut slices = Vec::new();
        if opts.record {
            slices.reserve((steps + 1) * n);
            slices.extend_from_slice(&x);
        }
        let mut reflections = 0;
        for j in 0..steps {
            let t = time.time(j);
            model.drift(t, &x, &mut f);
            model.input_matrix(t, &x, &mut g);
            model.noise_matrix(t, &x, &mut s);
            let uj = u.slice(j);
            for (c, v) in uu.iter_mut().enumerate() {
                *v = interp_unchecked(&grid, uj.component(c), &x);
            }
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..n {
                let ctl: f64 = (0..m).map(|c| g[i * m + c] * uu[c]).sum();
                let noise: f64 = (0..p).map(|c| s[i * p + c] * xi[c]).sum();
                x[i] += (f[i] + ctl) * dt + noise * sq;
            }
            match reflect(&grid, &mut x) {
                Ok(hit) => reflections += u64::from(hit),
                Err(()) => {
                    return Err(Error::BlowUp {
                        particle: pi,
                        step: j + 1,
                        position: x.clone(),
                    })
                }
            }
            if opts.record {
                slices.extend_from_slice(&x);
            }
        }
        Ok(Path {
            start,
            end: x,
            reflections,
            slices,
        })
    });
    let paths = paths.into_iter().collect::<Result<Vec<_>>>()?;

    let trajectories = opts.record.then(|| {
        let mut data = vec![0.0; (steps + 1) * opts.particles * n];
        for (pi, path) in paths.iter().enumerate() {
            for j in 0..=steps {
                let o = (j * opts.particles + pi) * n;
                data[o..o + n].copy_from_slice(&path.slices[j * n..(j + 1) * n]);
            }
        }
        Trajectories {
            dim: n,
            particles: opts.particles,
            slices: steps + 1,
            data,
        }
    });
    let state = |positions: Vec<f64>, step| EnsembleState {
        positions,
        dim: n,
        seed: opts.seed,
        step,
    };
    let initial = state(
        paths.iter().flat_map(|p| p.start.iter().copied()).collect(),
        0,
    );
    let terminal = state(
        paths.iter().flat_map(|p| p.end.iter().copied()).collect(),
        steps,
    );
    let histogram = Histogram::from_positions(grid, &terminal.positions);
    Ok(EnsembleRun {
        initial,
        terminal,
        histogram,
        reflections: paths.iter().map(|p| p.reflections).sum(),
        trajectories,
    })
}

/// Summary written next to the terminal histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub particles: usize,
    pub seed: u64,
    pub steps: usize,
    pub l1_terminal: f64,
    pub l1_initial: f64,
    pub reflections: u64,
    pub terminal_mean: Vec<f64>,
    pub terminal_var: Vec<f64>,
}

impl EnsembleReport {
    pub fn new(run: &EnsembleRun, data: &ProblemData) -> Result<Self> {
        let init = Histogram::from_positions(data.grid, &run.initial.positions);
        let (mean, var) = (0..run.terminal.dim)
            .map(|a| run.terminal.moments(a))
            .unzip();
        Ok(EnsembleReport {
            particles: run.terminal.particles(),
            seed: run.terminal.seed,
            steps: run.terminal.step,
            l1_terminal: histogram_distance(&run.histogram, &data.rho1)?,
            l1_initial: histogram_distance(&init, &data.rho0)?,
            reflections: run.reflections,
            terminal_mean: mean,
            terminal_var: var,
        })
    }
}
