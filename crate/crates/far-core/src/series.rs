//! Sampled-function data model: grids, series containers, quadrature,
//! cosine basis evaluation, differencing and CSV persistence.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a grid was constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    /// `s_i = (i + 0.5)/n`, the midpoints of `n` equal cells.
    MidpointEquispaced,
    /// Sorted i.i.d. uniform draws on `[0,1]`.
    UniformRandom,
    /// Caller-supplied points.
    Explicit,
}

/// A strictly increasing collection of sampling points in `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    kind: GridKind,
}

impl Grid {
    /// Midpoint-equispaced grid `s_i = (i + 0.5)/n`.
    pub fn midpoint(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("grid size must be positive"));
        }
        let points = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        Ok(Grid { points, kind: GridKind::MidpointEquispaced })
    }

    /// Sorted uniform random design of size `n`.
    pub fn uniform_random<R: Rng>(n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("grid size must be positive"));
        }
        loop {
            let mut points: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            points.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if points.windows(2).all(|w| w[0] < w[1]) {
                return Ok(Grid { points, kind: GridKind::UniformRandom });
            }
            // ties have probability zero; redraw if they ever occur
        }
    }

    /// Wraps caller-supplied points, validating the grid invariants.
    pub fn explicit(points: Vec<f64>) -> Result<Self> {
        Self::validated(points, GridKind::Explicit)
    }

    fn validated(points: Vec<f64>, kind: GridKind) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("grid must contain at least one point"));
        }
        if points.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("grid points must lie in [0,1]"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        Ok(Grid { points, kind })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A functional time series observed on a shared grid: `values[(t, i)] = X_t(s_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSeries {
    pub grid: Grid,
    pub values: DMatrix<f64>,
}

impl SampledSeries {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::invalid(format!(
                "series has {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series values must all be finite"));
        }
        Ok(SampledSeries { grid, values })
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Observation at time `t` as a vector over the grid.
    pub fn row(&self, t: usize) -> nalgebra::DVector<f64> {
        self.values.row(t).transpose()
    }

    /// Sub-series of rows `[start, end)` on the same grid.
    pub fn slice_rows(&self, start: usize, end: usize) -> SampledSeries {
        SampledSeries {
            grid: self.grid.clone(),
            values: self.values.rows(start, end - start).into_owned(),
        }
    }
}

/// Uniform grid of `m` points on `[0,1]` including both endpoints.
pub fn unit_grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// The orthonormal cosine basis `u_1 = 1`, `u_i(s) = sqrt(2) cos((i-1) pi s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CosineBasis {
    pub q: usize,
}

impl CosineBasis {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("basis dimension must be at least 1"));
        }
        Ok(CosineBasis { q })
    }
}

/// Evaluates the cosine basis on a grid; column `i` holds `u_{i+1}`.
pub fn eval_cosine_basis(basis: CosineBasis, grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    DMatrix::from_fn(n, basis.q, |j, i| {
        if i == 0 {
            1.0
        } else {
            std::f64::consts::SQRT_2 * (i as f64 * std::f64::consts::PI * grid.points[j]).cos()
        }
    })
}

/// Discrete inner product `(1/n) sum_j f_j g_j`, the quadrature used for all
/// integral approximations (weight `1/n` regardless of grid kind).
pub fn quad_inner(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    let n = grid.len();
    if f.len() != n || g.len() != n {
        return Err(Error::invalid(format!(
            "length mismatch: f has {}, g has {}, grid has {n}",
            f.len(),
            g.len()
        )));
    }
    Ok(f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / n as f64)
}

/// First-order differencing: row `t` of the output is `X_{t+1} - X_t`.
pub fn difference(series: &SampledSeries) -> Result<SampledSeries> {
    let t_len = series.len();
    if t_len < 2 {
        return Err(Error::invalid("differencing needs at least two time steps"));
    }
    let n = series.grid.len();
    let mut out = DMatrix::zeros(t_len - 1, n);
    for t in 0..t_len - 1 {
        for i in 0..n {
            out[(t, i)] = series.values[(t + 1, i)] - series.values[(t, i)];
        }
    }
    Ok(SampledSeries { grid: series.grid.clone(), values: out })
}

/// 17 significant digits: enough for an exact f64 round trip.
pub(crate) fn fmt_value(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v:.16e}").unwrap();
    s
}

/// Writes a series as CSV: header = grid points, one row per time step.
pub fn save_csv(series: &SampledSeries, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = series.grid.points().iter().map(|&p| fmt_value(p)).collect();
    writer.write_record(&header).map_err(|e| csv_io(path, e))?;
    for t in 0..series.len() {
        let row: Vec<String> =
            (0..series.grid.len()).map(|i| fmt_value(series.values[(t, i)])).collect();
        writer.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { row: 0, col: 0, msg: format!("{other:?}") },
    }
}

/// Reads a series from CSV. `row` in parse errors counts data rows from 1;
/// the header reports as row 0.
pub fn load_csv(path: &Path) -> Result<SampledSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;

    let header = reader.headers().map_err(|e| csv_io(path, e))?.clone();
    let mut points = Vec::with_capacity(header.len());
    for (c, field) in header.iter().enumerate() {
        let p: f64 = field.trim().parse().map_err(|_| Error::Parse {
            row: 0,
            col: c + 1,
            msg: format!("grid header entry {field:?} is not a number"),
        })?;
        points.push(p);
    }
    if points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parse {
            row: 0,
            col: 1,
            msg: "grid header is not strictly increasing".into(),
        });
    }
    let grid = Grid::validated(points, GridKind::Explicit).map_err(|e| Error::Parse {
        row: 0,
        col: 1,
        msg: e.to_string(),
    })?;

    let n = grid.len();
    let mut rows: Vec<f64> = Vec::new();
    let mut t = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_io(path, e))?;
        t += 1;
        if record.len() != n {
            return Err(Error::Parse {
                row: t,
                col: record.len().min(n) + 1,
                msg: format!("row {t} has {} fields, expected {n}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: t,
                col: c + 1,
                msg: format!("cell {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: t,
                    col: c + 1,
                    msg: "non-finite value".into(),
                });
            }
            rows.push(v);
        }
    }
    let values = DMatrix::from_row_slice(t, n, &rows);
    Ok(SampledSeries { grid, values })
}
