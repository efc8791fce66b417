//! On-disk solution directories.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<field>/slice_0000.csv ...
//! ```
//!
//! Real fields hold one value column named after the field; `psi` holds
//! `psi_re, psi_im` and `potential` holds `V_re, V_im`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bridge::{IterationRecord, SolverOptions};
use crate::error::{Error, Result};
use crate::fields::{read_csv, write_csv, ComplexField, Grid, ScalarField, TimeGrid, TimeSeries};
use crate::manufactured::ManufacturedCase;

pub const MANIFEST: &str = "manifest.json";
pub const VERIFICATION: &str = "verification.json";

/// How the stored fields were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Bridge {
        epsilon: f64,
        gauge_node: usize,
        gauge_point: Vec<f64>,
        solver: SolverOptions,
        iterations: Vec<IterationRecord>,
    },
    Manufactured {
        case: ManufacturedCase,
        substeps: usize,
        substep_dt: f64,
        cfl: f64,
        max_mass_drift: f64,
        /// `q` is computed from exact derivatives of the chosen `S`.
        q_source: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub lambda: f64,
    pub grid: Grid,
    pub time: TimeGrid,
    pub provenance: Provenance,
    /// Stored real fields, in directory order.
    pub fields: Vec<String>,
    /// Tag of the stored potential, if any.
    pub potential: Option<String>,
    /// The configuration the run was started from.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl Manifest {
    pub fn tool_version() -> (String, String) {
        ("qbridge".into(), env!("CARGO_PKG_VERSION").into())
    }

    /// The grid rebuilt through the validating constructor.
    pub fn checked_grid(&self) -> Result<Grid> {
        let d = self.grid.dim();
        let lo: Vec<f64> = (0..d).map(|a| self.grid.lower(a)).collect();
        let hi: Vec<f64> = (0..d).map(|a| self.grid.upper(a)).collect();
        let pts: Vec<usize> = (0..d).map(|a| self.grid.points(a)).collect();
        Grid::new(&lo, &hi, &pts)
    }

    pub fn checked_time(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t0(), self.time.t1(), self.time.steps())
    }
}

fn slice_path(dir: &Path, field: &str, j: usize) -> PathBuf {
    dir.join(field).join(format!("slice_{j:04}.csv"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_series(dir: &Path, name: &str, series: &TimeSeries<ScalarField>) -> Result<()> {
    fs::create_dir_all(dir.join(name))?;
    for (j, s) in series.slices().iter().enumerate() {
        let mut w = BufWriter::new(File::create(slice_path(dir, name, j))?);
        s.to_csv(&mut w, name)?;
        w.flush()?;
    }
    Ok(())
}

pub fn write_complex_series(
    dir: &Path,
    name: &str,
    columns: (&str, &str),
    series: &TimeSeries<ComplexField>,
) -> Result<()> {
    fs::create_dir_all(dir.join(name))?;
    for (j, s) in series.slices().iter().enumerate() {
        let mut w = BufWriter::new(File::create(slice_path(dir, name, j))?);
        s.to_csv(&mut w, columns.0, columns.1)?;
        w.flush()?;
    }
    Ok(())
}

/// A series of per-slice extra columns, such as residual fields.
pub fn write_columns(
    dir: &Path,
    name: &str,
    grid: &Grid,
    slices: &[Vec<(&str, &[f64])>],
) -> Result<()> {
    fs::create_dir_all(dir.join(name))?;
    for (j, cols) in slices.iter().enumerate() {
        let mut w = BufWriter::new(File::create(slice_path(dir, name, j))?);
        write_csv(&mut w, grid, cols)?;
        w.flush()?;
    }
    Ok(())
}

pub fn read_series(
    dir: &Path,
    name: &str,
    grid: &Grid,
    time: &TimeGrid,
) -> Result<TimeSeries<ScalarField>> {
    TimeSeries::try_from_fn(*time, |j, _| {
        let r = BufReader::new(File::open(slice_path(dir, name, j))?);
        ScalarField::from_csv(*grid, r, name)
    })
}

pub fn read_complex_series(
    dir: &Path,
    name: &str,
    columns: (&str, &str),
    grid: &Grid,
    time: &TimeGrid,
) -> Result<TimeSeries<ComplexField>> {
    TimeSeries::try_from_fn(*time, |j, _| {
        let mut table = read_csv(BufReader::new(File::open(slice_path(dir, name, j))?))?;
        let re = ScalarField::new(*grid, table.take_column(grid, columns.0)?)?;
        let im = ScalarField::new(*grid, table.take_column(grid, columns.1)?)?;
        ComplexField::from_parts(&re, &im)
    })
}

/// Fields of a stored solution.
#[derive(Debug, Clone)]
pub struct StoredSolution {
    pub manifest: Manifest,
    pub grid: Grid,
    pub time: TimeGrid,
    pub fields: Vec<(String, TimeSeries<ScalarField>)>,
}

impl StoredSolution {
    pub fn field(&self, name: &str) -> Result<&TimeSeries<ScalarField>> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Csv(format!("solution has no `{name}` field")))
    }
}

/// Write the manifest and every real field listed in it.
pub fn write_solution(
    dir: &Path,
    manifest: &Manifest,
    fields: &[(&str, &TimeSeries<ScalarField>)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, series) in fields {
        write_series(dir, name, series)?;
    }
    write_json(&dir.join(MANIFEST), manifest)
}

pub fn read_solution(dir: &Path) -> Result<StoredSolution> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let grid = manifest.checked_grid()?;
    let time = manifest.checked_time()?;
    let fields = manifest
        .fields
        .iter()
        .map(|name| Ok((name.clone(), read_series(dir, name, &grid, &time)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StoredSolution {
        manifest,
        grid,
        time,
        fields,
    })
}
