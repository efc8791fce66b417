//! Uniform grids and grid-sampled fields.
//!
//! Nodes are stored row-major: in 2D the flat index of node `(i, j)` is
//! `i * n_1 + j`, so axis 1 is contiguous. Quadrature is the tensor-product
//! trapezoidal rule everywhere in the crate.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of nodes per axis.
pub const MIN_POINTS: usize = 16;

/// Uniform tensor lattice in one or two dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    points: [usize; 2],
}

impl Grid {
    pub fn new(lower: &[f64], upper: &[f64], points: &[usize]) -> Result<Self> {
        let dim = lower.len();
        if !(1..=2).contains(&dim) || upper.len() != dim || points.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2 with matching bounds and counts, got {}/{}/{}",
                lower.len(),
                upper.len(),
                points.len()
            )));
        }
        let mut grid = Grid {
            dim,
            lower: [0.0; 2],
            upper: [0.0; 2],
            points: [1; 2],
        };
        for axis in 0..dim {
            let (lo, hi, n) = (lower[axis], upper[axis], points[axis]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: non-finite bounds"
                )));
            }
            if hi <= lo {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: upper bound {hi} must exceed lower bound {lo}"
                )));
            }
            if n < MIN_POINTS {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: {n} points, need at least {MIN_POINTS}"
                )));
            }
            grid.lower[axis] = lo;
            grid.upper[axis] = hi;
            grid.points[axis] = n;
        }
        Ok(grid)
    }

    pub fn line(lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::new(&[lower], &[upper], &[points])
    }

    pub fn plane(lower: [f64; 2], upper: [f64; 2], points: [usize; 2]) -> Result<Self> {
        Self::new(&lower, &upper, &points)
    }

    /// Same box with a different node count per axis.
    pub fn with_points(&self, points: &[usize]) -> Result<Self> {
        Self::new(&self.lower[..self.dim], &self.upper[..self.dim], points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.points[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self, axis: usize) -> usize {
        self.points[axis]
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.width(axis) / (self.points[axis] - 1) as f64
    }

    /// Flat-index distance between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if self.dim == 2 && axis == 0 {
            self.points[1]
        } else {
            1
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing(axis)
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.points[1], flat % self.points[1]]
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.points[1] + idx[1]
        }
    }

    /// Coordinates of a node; the unused second slot is zero in 1D.
    pub fn node(&self, flat: usize) -> [f64; 2] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; 2];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = self.coord(axis, idx[axis]);
        }
        x
    }

    /// Trapezoidal quadrature weights (cell volumes) per node.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let axis_weight = |axis: usize, i: usize| {
            let h = self.spacing(axis);
            if i == 0 || i + 1 == self.points[axis] {
                0.5 * h
            } else {
                h
            }
        };
        (0..self.len())
            .map(|k| {
                let idx = self.multi_index(k);
                (0..self.dim).map(|a| axis_weight(a, idx[a])).product()
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| {
            let slack = 1e-12 * self.width(a);
            x[a] >= self.lower[a] - slack && x[a] <= self.upper[a] + slack
        })
    }

    /// Mask of nodes at least `band` nodes away from every face.
    pub fn interior_mask(&self, band: usize) -> Vec<bool> {
        (0..self.len())
            .map(|k| {
                let idx = self.multi_index(k);
                (0..self.dim).all(|a| idx[a] >= band && idx[a] + band < self.points[a])
            })
            .collect()
    }

    /// Node closest to the box centre.
    pub fn center(&self) -> usize {
        let mut idx = [0usize; 2];
        for (a, i) in idx.iter_mut().enumerate().take(self.dim) {
            *i = (self.points[a] - 1) / 2;
        }
        self.flat_index(idx)
    }

    /// Nodes that lie on the outer face of the box.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mask = self.interior_mask(1);
        (0..self.len()).filter(|&k| !mask[k]).collect()
    }
}

/// Uniform slicing of `[t0, t1]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub const MIN_STEPS: usize = 8;

    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !t0.is_finite() || !t1.is_finite() || t1 <= t0 {
            return Err(Error::InvalidGrid(format!(
                "time interval [{t0}, {t1}] is empty"
            )));
        }
        if steps < Self::MIN_STEPS {
            return Err(Error::InvalidGrid(format!(
                "{steps} time steps, need at least {}",
                Self::MIN_STEPS
            )));
        }
        Ok(TimeGrid { t0, t1, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of slices, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn horizon(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t1
        } else {
            self.t0 + j as f64 * self.dt()
        }
    }

    /// The same slicing with times multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.t0 * factor, self.t1 * factor, self.steps)
    }
}

/// Anything sampled on a [`Grid`].
pub trait OnGrid {
    fn grid(&self) -> &Grid;
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_len(grid: &Grid, len: usize, what: &str) -> Result<()> {
    if len == grid.len() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what}: {len} values for a grid of {} nodes",
            grid.len()
        )))
    }
}

/// Real scalar per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len(), "scalar field")?;
        check_finite(&values, "scalar field")?;
        Ok(ScalarField { grid, values })
    }

    pub(crate) fn raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField::raw(grid, vec![c; grid.len()])
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Sample `f` at every node. `f` sees a slice of length `grid.dim()`.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|k| f(&grid.node(k)[..grid.dim()]))
            .collect();
        Self::new(grid, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        same_grid(&self.grid, &other.grid)?;
        Ok(ScalarField::raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Trapezoidal integral over the box.
    pub fn integrate(&self) -> f64 {
        self.grid
            .quadrature_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal L1 distance to another field on the same grid.
    pub fn l1_distance(&self, other: &ScalarField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self
            .grid
            .quadrature_weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum())
    }

    pub fn to_csv<W: Write>(&self, w: W, name: &str) -> Result<()> {
        write_csv(w, &self.grid, &[(name, &self.values)])
    }

    pub fn from_csv<R: BufRead>(grid: Grid, r: R, column: &str) -> Result<Self> {
        let mut table = read_csv(r)?;
        let values = table.take_column(&grid, column)?;
        ScalarField::new(grid, values)
    }
}

impl OnGrid for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Vector of `len` components per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::ShapeMismatch(
                "vector field without components".into(),
            ));
        }
        for c in &components {
            check_len(&grid, c.len(), "vector field")?;
            check_finite(c, "vector field")?;
        }
        Ok(VectorField { grid, components })
    }

    pub(crate) fn raw(grid: Grid, components: Vec<Vec<f64>>) -> Self {
        VectorField { grid, components }
    }

    pub fn zeros(grid: Grid, len: usize) -> Self {
        VectorField::raw(grid, vec![vec![0.0; grid.len()]; len])
    }

    /// Sample `f(x, out)` at every node; `out` has `len` slots.
    pub fn from_fn(grid: Grid, len: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let mut components = vec![vec![0.0; grid.len()]; len];
        let mut buf = vec![0.0; len];
        for k in 0..grid.len() {
            f(&grid.node(k)[..grid.dim()], &mut buf);
            for (c, v) in components.iter_mut().zip(&buf) {
                c[k] = *v;
            }
        }
        Self::new(grid, components)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn at(&self, k: usize) -> Vec<f64> {
        self.components.iter().map(|c| c[k]).collect()
    }

    /// Pointwise inner product with another vector field.
    pub fn dot(&self, other: &VectorField) -> Result<ScalarField> {
        same_grid(&self.grid, &other.grid)?;
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "dot of {}- and {}-vectors",
                self.len(),
                other.len()
            )));
        }
        let mut out = vec![0.0; self.grid.len()];
        for (a, b) in self.components.iter().zip(&other.components) {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        Ok(ScalarField::raw(self.grid, out))
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        same_grid(&self.grid, &other.grid)?;
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(
                "vector sum of different lengths".into(),
            ));
        }
        Ok(VectorField::raw(
            self.grid,
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        ))
    }

    /// Multiply every component by a scalar field.
    pub fn scale_by(&self, s: &ScalarField) -> Result<VectorField> {
        same_grid(&self.grid, s.grid())?;
        Ok(VectorField::raw(
            self.grid,
            self.components
                .iter()
                .map(|c| c.iter().zip(s.values()).map(|(x, y)| x * y).collect())
                .collect(),
        ))
    }
}

impl OnGrid for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Symmetric `n x n` matrix per node, stored as all `n * n` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    n: usize,
    entries: Vec<Vec<f64>>,
}

impl MatrixField {
    /// Relative asymmetry tolerated by the constructors.
    pub const SYMMETRY_TOL: f64 = 1e-12;

    /// `entries[i * n + j]` holds component `(i, j)` at every node.
    pub fn new(grid: Grid, n: usize, entries: Vec<Vec<f64>>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} entry arrays for a {n}x{n} matrix field",
                entries.len()
            )));
        }
        for e in &entries {
            check_len(&grid, e.len(), "matrix field")?;
            check_finite(e, "matrix field")?;
        }
        let scale = entries
            .iter()
            .flat_map(|e| e.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut asymmetry = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                for (a, b) in entries[i * n + j].iter().zip(&entries[j * n + i]) {
                    asymmetry = asymmetry.max((a - b).abs());
                }
            }
        }
        if asymmetry > Self::SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Asymmetric { asymmetry, scale });
        }
        Ok(MatrixField { grid, n, entries })
    }

    pub(crate) fn raw(grid: Grid, n: usize, entries: Vec<Vec<f64>>) -> Self {
        MatrixField { grid, n, entries }
    }

    /// Sample `f(x, out)` where `out` is the row-major `n x n` matrix.
    pub fn from_fn(grid: Grid, n: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let mut entries = vec![vec![0.0; grid.len()]; n * n];
        let mut buf = vec![0.0; n * n];
        for k in 0..grid.len() {
            f(&grid.node(k)[..grid.dim()], &mut buf);
            for (e, v) in entries.iter_mut().zip(&buf) {
                e[k] = *v;
            }
        }
        Self::new(grid, n, entries)
    }

    pub fn scaled_identity(grid: Grid, n: usize, c: f64) -> Self {
        let mut entries = vec![vec![0.0; grid.len()]; n * n];
        for i in 0..n {
            entries[i * n + i] = vec![c; grid.len()];
        }
        MatrixField::raw(grid, n, entries)
    }

    pub fn identity(grid: Grid, n: usize) -> Self {
        Self::scaled_identity(grid, n, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        &self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn scale(&self, c: f64) -> MatrixField {
        MatrixField::raw(
            self.grid,
            self.n,
            self.entries
                .iter()
                .map(|e| e.iter().map(|v| c * v).collect())
                .collect(),
        )
    }

    /// Trace at every node.
    pub fn trace(&self) -> ScalarField {
        let mut out = vec![0.0; self.grid.len()];
        for i in 0..self.n {
            for (o, v) in out.iter_mut().zip(self.entry(i, i)) {
                *o += v;
            }
        }
        ScalarField::raw(self.grid, out)
    }

    /// Smallest eigenvalue at node `k` (closed form for n <= 2, Gershgorin bound otherwise).
    pub fn min_eigenvalue_at(&self, k: usize) -> f64 {
        match self.n {
            1 => self.entries[0][k],
            2 => {
                let (a, b, d) = (self.entries[0][k], self.entries[1][k], self.entries[3][k]);
                let mean = 0.5 * (a + d);
                let half_gap = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                mean - half_gap
            }
            n => (0..n)
                .map(|i| {
                    let off: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| self.entries[i * n + j][k].abs())
                        .sum();
                    self.entries[i * n + i][k] - off
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Minimum over all nodes of the smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| self.min_eigenvalue_at(k))
            .fold(f64::INFINITY, f64::min)
    }

    /// Matrix-vector product at every node.
    pub fn apply(&self, v: &VectorField) -> Result<VectorField> {
        same_grid(&self.grid, v.grid())?;
        if v.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix applied to a {}-vector",
                self.n,
                self.n,
                v.len()
            )));
        }
        let mut out = vec![vec![0.0; self.grid.len()]; self.n];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..self.n {
                for ((oo, m), x) in o.iter_mut().zip(self.entry(i, j)).zip(v.component(j)) {
                    *oo += m * x;
                }
            }
        }
        Ok(VectorField::raw(self.grid, out))
    }
}

impl OnGrid for MatrixField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// General `rows x cols` coefficient matrix per node (input and noise gains).
#[derive(Debug, Clone, PartialEq)]
pub struct GainField {
    grid: Grid,
    rows: usize,
    cols: usize,
    entries: Vec<Vec<f64>>,
}

impl GainField {
    pub fn new(grid: Grid, rows: usize, cols: usize, entries: Vec<Vec<f64>>) -> Result<Self> {
        if entries.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} entry arrays for a {rows}x{cols} gain field",
                entries.len()
            )));
        }
        for e in &entries {
            check_len(&grid, e.len(), "gain field")?;
            check_finite(e, "gain field")?;
        }
        Ok(GainField {
            grid,
            rows,
            cols,
            entries,
        })
    }

    pub fn from_fn(
        grid: Grid,
        rows: usize,
        cols: usize,
        f: impl Fn(&[f64], &mut [f64]),
    ) -> Result<Self> {
        let mut entries = vec![vec![0.0; grid.len()]; rows * cols];
        let mut buf = vec![0.0; rows * cols];
        for k in 0..grid.len() {
            f(&grid.node(k)[..grid.dim()], &mut buf);
            for (e, v) in entries.iter_mut().zip(&buf) {
                e[k] = *v;
            }
        }
        Self::new(grid, rows, cols, entries)
    }

    pub fn scaled_identity(grid: Grid, n: usize, c: f64) -> Self {
        let m = MatrixField::scaled_identity(grid, n, c);
        GainField {
            grid,
            rows: n,
            cols: n,
            entries: m.entries,
        }
    }

    pub fn zeros(grid: Grid, rows: usize, cols: usize) -> Self {
        GainField {
            grid,
            rows,
            cols,
            entries: vec![vec![0.0; grid.len()]; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        &self.entries[i * self.cols + j]
    }

    /// `G Gᵀ`, symmetric by construction.
    pub fn outer(&self) -> MatrixField {
        let n = self.rows;
        let mut entries = vec![vec![0.0; self.grid.len()]; n * n];
        for i in 0..n {
            for j in 0..n {
                let e = &mut entries[i * n + j];
                for c in 0..self.cols {
                    for ((o, a), b) in e.iter_mut().zip(self.entry(i, c)).zip(self.entry(j, c)) {
                        *o += a * b;
                    }
                }
            }
        }
        MatrixField::raw(self.grid, n, entries)
    }

    /// `Gᵀ v` at every node.
    pub fn transpose_apply(&self, v: &VectorField) -> Result<VectorField> {
        same_grid(&self.grid, v.grid())?;
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "transpose of a {}x{} gain applied to a {}-vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![vec![0.0; self.grid.len()]; self.cols];
        for (c, o) in out.iter_mut().enumerate() {
            for r in 0..self.rows {
                for ((oo, g), x) in o.iter_mut().zip(self.entry(r, c)).zip(v.component(r)) {
                    *oo += g * x;
                }
            }
        }
        Ok(VectorField::raw(self.grid, out))
    }

    /// `G v` at every node.
    pub fn apply(&self, v: &VectorField) -> Result<VectorField> {
        same_grid(&self.grid, v.grid())?;
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(
                "gain applied to a vector of wrong length".into(),
            ));
        }
        let mut out = vec![vec![0.0; self.grid.len()]; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            for c in 0..self.cols {
                for ((oo, g), x) in o.iter_mut().zip(self.entry(r, c)).zip(v.component(c)) {
                    *oo += g * x;
                }
            }
        }
        Ok(VectorField::raw(self.grid, out))
    }
}

impl OnGrid for GainField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Complex scalar per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        check_len(&grid, values.len(), "complex field")?;
        if values
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite("complex field"));
        }
        Ok(ComplexField { grid, values })
    }

    pub(crate) fn raw(grid: Grid, values: Vec<Complex64>) -> Self {
        ComplexField { grid, values }
    }

    pub fn from_parts(re: &ScalarField, im: &ScalarField) -> Result<Self> {
        same_grid(re.grid(), im.grid())?;
        Self::new(
            re.grid,
            re.values()
                .iter()
                .zip(im.values())
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        )
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn re(&self) -> ScalarField {
        ScalarField::raw(self.grid, self.values.iter().map(|z| z.re).collect())
    }

    pub fn im(&self) -> ScalarField {
        ScalarField::raw(self.grid, self.values.iter().map(|z| z.im).collect())
    }

    pub fn conj(&self) -> ComplexField {
        ComplexField::raw(self.grid, self.values.iter().map(|z| z.conj()).collect())
    }

    pub fn to_csv<W: Write>(&self, w: W, re_name: &str, im_name: &str) -> Result<()> {
        let re: Vec<f64> = self.values.iter().map(|z| z.re).collect();
        let im: Vec<f64> = self.values.iter().map(|z| z.im).collect();
        write_csv(w, &self.grid, &[(re_name, &re), (im_name, &im)])
    }
}

impl OnGrid for ComplexField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// One field per slice of a [`TimeGrid`], all on the same spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    time: TimeGrid,
    slices: Vec<T>,
}

impl<T: OnGrid> TimeSeries<T> {
    pub fn new(time: TimeGrid, slices: Vec<T>) -> Result<Self> {
        if slices.len() != time.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} slices for {} time nodes",
                slices.len(),
                time.len()
            )));
        }
        let grid = *slices[0].grid();
        if slices.iter().any(|s| *s.grid() != grid) {
            return Err(Error::ShapeMismatch(
                "time slices on different grids".into(),
            ));
        }
        Ok(TimeSeries { time, slices })
    }

    pub fn grid(&self) -> &Grid {
        self.slices[0].grid()
    }

    /// Build by evaluating `f(j, t_j)` for every slice.
    pub fn try_from_fn(time: TimeGrid, f: impl FnMut(usize, f64) -> Result<T>) -> Result<Self> {
        let mut f = f;
        let slices = (0..time.len())
            .map(|j| f(j, time.time(j)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(time, slices)
    }

    pub fn try_map<U: OnGrid>(&self, f: impl FnMut(&T) -> Result<U>) -> Result<TimeSeries<U>> {
        let slices = self.slices.iter().map(f).collect::<Result<Vec<_>>>()?;
        TimeSeries::new(self.time, slices)
    }

    /// The same slices attached to another time grid with the same slice count.
    pub fn retimed(self, time: TimeGrid) -> Result<Self> {
        Self::new(time, self.slices)
    }
}

impl<T> TimeSeries<T> {
    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn slices(&self) -> &[T] {
        &self.slices
    }

    pub fn slice(&self, j: usize) -> &T {
        &self.slices[j]
    }

    pub fn first(&self) -> &T {
        &self.slices[0]
    }

    pub fn last(&self) -> &T {
        &self.slices[self.slices.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn into_slices(self) -> Vec<T> {
        self.slices
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(
            "fields live on different grids".into(),
        ))
    }
}

/// Multilinear interpolation of nodal values at `x`.
pub fn eval_interp(field: &ScalarField, x: &[f64]) -> Result<f64> {
    let grid = field.grid();
    if x.len() < grid.dim() || !grid.contains(x) {
        return Err(Error::OutOfBounds { point: x.to_vec() });
    }
    Ok(interp_unchecked(grid, field.values(), x))
}

/// Interpolation without the bounds check; points outside are clamped.
pub(crate) fn interp_unchecked(grid: &Grid, values: &[f64], x: &[f64]) -> f64 {
    let mut base = [0usize; 2];
    let mut frac = [0.0f64; 2];
    for a in 0..grid.dim() {
        let n = grid.points(a);
        let s = ((x[a] - grid.lower(a)) / grid.spacing(a)).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        base[a] = i;
        frac[a] = s - i as f64;
    }
    match grid.dim() {
        1 => {
            let i = base[0];
            values[i] * (1.0 - frac[0]) + values[i + 1] * frac[0]
        }
        _ => {
            let s0 = grid.stride(0);
            let k = grid.flat_index(base);
            let (fx, fy) = (frac[0], frac[1]);
            values[k] * (1.0 - fx) * (1.0 - fy)
                + values[k + 1] * (1.0 - fx) * fy
                + values[k + s0] * fx * (1.0 - fy)
                + values[k + s0 + 1] * fx * fy
        }
    }
}

/// Scale a nonnegative field to unit trapezoidal mass.
pub fn normalize_density(rho: &ScalarField) -> Result<ScalarField> {
    if let Some(v) = rho.values().iter().find(|v| **v < 0.0) {
        return Err(Error::DegenerateDensity(format!("negative value {v:e}")));
    }
    let mass = rho.integrate();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::DegenerateDensity(format!("integral is {mass:e}")));
    }
    Ok(rho.map(|v| v / mass))
}

/// Write `coordinates..., columns...` rows with 17 significant digits.
pub fn write_csv<W: Write>(mut w: W, grid: &Grid, columns: &[(&str, &[f64])]) -> Result<()> {
    let coord_names: &[&str] = if grid.dim() == 1 {
        &["x"]
    } else {
        &["x1", "x2"]
    };
    let header: Vec<&str> = coord_names
        .iter()
        .copied()
        .chain(columns.iter().map(|(n, _)| *n))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for k in 0..grid.len() {
        let x = grid.node(k);
        let mut line = String::new();
        for xa in &x[..grid.dim()] {
            line.push_str(&format!("{xa:.16e},"));
        }
        for (i, (_, col)) in columns.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{:.16e}", col[k]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parsed CSV table as written by [`write_csv`].
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv(format!("missing column `{name}`")))
    }

    /// Extract a column, checking that the coordinate columns match `grid`.
    pub fn take_column(&mut self, grid: &Grid, name: &str) -> Result<Vec<f64>> {
        if self.rows.len() != grid.len() {
            return Err(Error::Csv(format!(
                "{} rows for a grid of {} nodes",
                self.rows.len(),
                grid.len()
            )));
        }
        let col = self.column_index(name)?;
        for (k, row) in self.rows.iter().enumerate() {
            let x = grid.node(k);
            for a in 0..grid.dim() {
                if (row[a] - x[a]).abs() > 1e-9 * grid.width(a) {
                    return Err(Error::Csv(format!(
                        "row {k}: coordinate {} does not match grid node {}",
                        row[a], x[a]
                    )));
                }
            }
        }
        Ok(self.rows.iter().map(|r| r[col]).collect())
    }
}

pub fn read_csv<R: BufRead>(r: R) -> Result<CsvTable> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(line) => line?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect::<Vec<_>>(),
        None => return Err(Error::Csv("empty file".into())),
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(Error::Csv(format!(
                "line {}: {} fields, header has {}",
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Grid {
        Grid::line(0.0, 1.0, 21).unwrap()
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(Grid::line(0.0, 1.0, 15).is_err());
        assert!(Grid::line(1.0, 1.0, 32).is_err());
        assert!(Grid::line(0.0, f64::INFINITY, 32).is_err());
        assert!(Grid::new(&[0.0; 3], &[1.0; 3], &[16; 3]).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 7).is_err());
        assert!(TimeGrid::new(1.0, 0.5, 10).is_err());
    }

    #[test]
    fn spacing_and_nodes() {
        let g = Grid::plane([-1.0, 0.0], [1.0, 3.0], [21, 31]).unwrap();
        assert_eq!(g.len(), 21 * 31);
        assert!((g.spacing(0) - 0.1).abs() < 1e-15);
        assert!((g.spacing(1) - 0.1).abs() < 1e-15);
        let k = g.flat_index([3, 7]);
        assert_eq!(g.multi_index(k), [3, 7]);
        let x = g.node(k);
        assert!((x[0] + 0.7).abs() < 1e-14 && (x[1] - 0.7).abs() < 1e-14);
        let w: f64 = g.quadrature_weights().iter().sum();
        assert!((w - 6.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_constant_and_linear() {
        let g = line();
        let c = ScalarField::constant(g, 3.5);
        assert_eq!(eval_interp(&c, &[0.4321]).unwrap(), 3.5);
        let lin = ScalarField::from_fn(g, |x| 2.0 * x[0] - 1.0).unwrap();
        let mid = 0.5 * (g.coord(0, 4) + g.coord(0, 5));
        assert!((eval_interp(&lin, &[mid]).unwrap() - (2.0 * mid - 1.0)).abs() < 1e-15);
        assert!(matches!(
            eval_interp(&lin, &[1.5]),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn interpolation_error_bound_for_parabola() {
        let g = Grid::line(-1.0, 1.0, 21).unwrap();
        let h = g.spacing(0);
        let f = ScalarField::from_fn(g, |x| x[0] * x[0]).unwrap();
        // max |f''| = 2, bound h^2 * 2 / 8
        let bound = h * h * 2.0 / 8.0;
        for i in 0..200 {
            let x = -1.0 + 2.0 * (i as f64 + 0.37) / 200.0;
            let err = (eval_interp(&f, &[x]).unwrap() - x * x).abs();
            assert!(err <= bound * (1.0 + 1e-12), "x={x} err={err}");
        }
    }

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let g = Grid::plane([0.0, 0.0], [1.0, 2.0], [17, 19]).unwrap();
        let f = ScalarField::from_fn(g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]).unwrap();
        for &(a, b) in &[(0.13, 1.77), (0.999, 0.001), (0.5, 1.0)] {
            let v = eval_interp(&f, &[a, b]).unwrap();
            assert!((v - (1.0 + 2.0 * a - b + 0.5 * a * b)).abs() < 1e-14);
        }
    }

    #[test]
    fn normalize_uniform_and_gaussian() {
        let g = line();
        let two = ScalarField::constant(g, 2.0);
        let one = normalize_density(&two).unwrap();
        assert!(one.values().iter().all(|v| (v - 1.0).abs() < 1e-15));

        let g = Grid::line(-8.0, 8.0, 401).unwrap();
        let gauss = ScalarField::from_fn(g, |x| (-0.5 * x[0] * x[0]).exp()).unwrap();
        let n = normalize_density(&gauss).unwrap();
        // independent trapezoid sum
        let h = g.spacing(0);
        let mut acc = 0.0;
        for (i, v) in n.values().iter().enumerate() {
            let w = if i == 0 || i == 400 { 0.5 * h } else { h };
            acc += w * v;
        }
        assert!((acc - 1.0).abs() < 1e-12);

        let again = normalize_density(&n).unwrap();
        for (a, b) in again.values().iter().zip(n.values()) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn normalize_rejects_degenerate_input() {
        let g = line();
        assert!(matches!(
            normalize_density(&ScalarField::zeros(g)),
            Err(Error::DegenerateDensity(_))
        ));
        let neg = ScalarField::from_fn(g, |x| x[0] - 0.5).unwrap();
        assert!(normalize_density(&neg).is_err());
    }

    #[test]
    fn matrix_field_symmetry_check() {
        let g = line();
        let ok = MatrixField::from_fn(g, 2, |x, m| {
            m.copy_from_slice(&[1.0, x[0], x[0], 2.0]);
        });
        assert!(ok.is_ok());
        let bad = MatrixField::from_fn(g, 2, |x, m| {
            m.copy_from_slice(&[1.0, x[0], x[0] + 1e-6, 2.0]);
        });
        assert!(matches!(bad, Err(Error::Asymmetric { .. })));
        let m = ok.unwrap();
        // eigenvalues of [[1, x], [x, 2]]
        let k = 20;
        let x: f64 = 1.0;
        let exact = 1.5 - (0.25 + x * x).sqrt();
        assert!((m.min_eigenvalue_at(k) - exact).abs() < 1e-14);
    }

    #[test]
    fn csv_roundtrip_keeps_all_digits() {
        let g = Grid::plane([0.0, -1.0], [1.0, 1.0], [16, 17]).unwrap();
        let f = ScalarField::from_fn(g, |x| (x[0] * 3.1).sin() / 7.0 + x[1].exp()).unwrap();
        let mut buf = Vec::new();
        f.to_csv(&mut buf, "rho").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,rho\n"));
        let back = ScalarField::from_csv(g, buf.as_slice(), "rho").unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn time_grid_slices() {
        let t = TimeGrid::new(0.0, 1.0, 10).unwrap();
        assert_eq!(t.len(), 11);
        assert_eq!(t.time(10), 1.0);
        assert!((t.time(3) - 0.3).abs() < 1e-15);
        let series =
            TimeSeries::try_from_fn(t, |_, tj| Ok(ScalarField::constant(line(), tj))).unwrap();
        assert_eq!(series.len(), 11);
        let other = Grid::line(0.0, 2.0, 21).unwrap();
        let mut slices = series.into_slices();
        slices[4] = ScalarField::zeros(other);
        assert!(TimeSeries::new(t, slices).is_err());
    }
}
