//! Exact simulation of finite-rank FAR(D) processes.
//!
//! A truth model is a cosine basis of dimension `q`, one `q x q` transition
//! matrix per lag and a noise law for the basis scores. The process is driven
//! by the score recursion `x_t = sum_d L_d x_{t-d} + z_t`, so trajectories are
//! exact (no discretization error) and curve values are synthesized as
//! `X_t(s_i) = u(s_i)^T x_t`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{eval_cosine_basis, CosineBasis, Grid, GridKind, SampledSeries};

/// Law of the per-coordinate score noise `z_{ti}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    /// `z_{ti} ~ U(-a, a)`, one shared half-width.
    Uniform { half_width: f64 },
    /// `z_{ti} ~ N(0, sigmas[i]^2)`.
    Gaussian { sigmas: Vec<f64> },
}

impl NoiseSpec {
    fn validate(&self, q: usize) -> Result<()> {
        match self {
            NoiseSpec::Uniform { half_width } => {
                if !(*half_width > 0.0) {
                    return Err(Error::invalid("uniform noise half-width must be positive"));
                }
            }
            NoiseSpec::Gaussian { sigmas } => {
                if sigmas.len() != q {
                    return Err(Error::invalid(format!(
                        "gaussian noise needs {q} sigmas, got {}",
                        sigmas.len()
                    )));
                }
                if sigmas.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::invalid("gaussian noise sigmas must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// A finite-rank FAR(D) ground truth over the cosine basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarGroundTruth {
    pub basis: CosineBasis,
    /// Transition matrices, `lags[d-1]` acting on lag `d`.
    pub lags: Vec<DMatrix<f64>>,
    pub noise: NoiseSpec,
}

impl FarGroundTruth {
    pub fn new(basis: CosineBasis, lags: Vec<DMatrix<f64>>, noise: NoiseSpec) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::invalid("at least one transition matrix is required"));
        }
        let q = basis.q;
        if lags.iter().any(|l| l.nrows() != q || l.ncols() != q) {
            return Err(Error::invalid(format!("all transition matrices must be {q}x{q}")));
        }
        noise.validate(q)?;
        Ok(FarGroundTruth { basis, lags, noise })
    }

    pub fn q(&self) -> usize {
        self.basis.q
    }

    /// Autoregressive order D.
    pub fn order(&self) -> usize {
        self.lags.len()
    }

    /// The conditional-mean score `sum_d L_d x_{t-d}` given the last D score
    /// rows in chronological order (`history.row(D-1)` is the most recent).
    ///
    /// Shared by the simulator, the oracle predictor and the recursion checks
    /// so the three agree bit for bit.
    pub fn transition_scores(&self, history: &DMatrix<f64>) -> Result<DVector<f64>> {
        let d_max = self.order();
        if history.nrows() != d_max || history.ncols() != self.q() {
            return Err(Error::invalid(format!(
                "history must be {d_max}x{} (rows oldest to newest)",
                self.q()
            )));
        }
        let mut acc = DVector::zeros(self.q());
        for (idx, lag) in self.lags.iter().enumerate() {
            let d = idx + 1;
            let x = history.row(d_max - d).transpose();
            acc += lag * x;
        }
        Ok(acc)
    }
}

/// Simulation scenarios: how transition matrices and noise are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Diagonal transition `diag(kappa_d)`, uniform noise `U(-0.1, 0.1)`.
    A,
    /// Dense Gaussian transition rescaled to leading singular value
    /// `kappa_d`, uniform noise `U(-0.1, 0.1)`.
    B,
    /// Entries `N(0, sigma_i sigma_j)` rescaled, Gaussian noise with
    /// `sigma_i = 1/i`.
    Ca,
    /// Same as `Ca` with `sigma_i = 1.2^{-i}`.
    Cb,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            "Ca" | "CA" | "ca" | "C(a)" => Ok(Scenario::Ca),
            "Cb" | "CB" | "cb" | "C(b)" => Ok(Scenario::Cb),
            other => Err(Error::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::A => write!(f, "A"),
            Scenario::B => write!(f, "B"),
            Scenario::Ca => write!(f, "Ca"),
            Scenario::Cb => write!(f, "Cb"),
        }
    }
}

/// Standard normal deviate by the Box-Muller transform of two uniforms.
///
/// A plain deterministic transform (no rejection step) keeps the draw count
/// per deviate fixed, so streams can be reproduced from the generator alone.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn leading_singular_value(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().fold(0.0f64, |a, &b| a.max(b))
}

/// Builds a scenario ground truth.
///
/// Scenario A is deterministic in `seed`; B and C draw the transition
/// matrices from the seeded generator. `kappas[d-1] = 0` yields a zero matrix
/// for that lag.
pub fn make_scenario(
    scenario: Scenario,
    q: usize,
    kappas: &[f64],
    seed: u64,
) -> Result<FarGroundTruth> {
    if q < 1 {
        return Err(Error::invalid("basis dimension q must be at least 1"));
    }
    if kappas.is_empty() {
        return Err(Error::invalid("at least one kappa is required"));
    }
    if kappas.iter().any(|k| !(*k >= 0.0)) {
        return Err(Error::invalid("kappas must be non-negative"));
    }
    let basis = CosineBasis::new(q)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let sigmas: Option<Vec<f64>> = match scenario {
        Scenario::A | Scenario::B => None,
        Scenario::Ca => Some((1..=q).map(|i| 1.0 / i as f64).collect()),
        Scenario::Cb => Some((1..=q).map(|i| 1.2f64.powi(-(i as i32))).collect()),
    };

    let mut lags = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let lag = match scenario {
            Scenario::A => DMatrix::from_diagonal(&DVector::from_element(q, kappa)),
            Scenario::B => {
                let raw = DMatrix::from_fn(q, q, |_, _| standard_normal(&mut rng));
                rescale_to_kappa(raw, kappa)
            }
            Scenario::Ca | Scenario::Cb => {
                let s = sigmas.as_ref().unwrap();
                let raw = DMatrix::from_fn(q, q, |i, j| {
                    (s[i] * s[j]).sqrt() * standard_normal(&mut rng)
                });
                rescale_to_kappa(raw, kappa)
            }
        };
        lags.push(lag);
    }

    let noise = match sigmas {
        None => NoiseSpec::Uniform { half_width: 0.1 },
        Some(sigmas) => NoiseSpec::Gaussian { sigmas },
    };
    FarGroundTruth::new(basis, lags, noise)
}

fn rescale_to_kappa(raw: DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    if kappa == 0.0 {
        return DMatrix::zeros(raw.nrows(), raw.ncols());
    }
    let sv = leading_singular_value(&raw);
    raw * (kappa / sv)
}

/// Spectral radius of the VAR(D) companion matrix (first block row
/// `[L_1 ... L_D]`, identity sub-diagonal). Below one certifies stationarity.
pub fn companion_spectral_radius(truth: &FarGroundTruth) -> f64 {
    let q = truth.q();
    let d = truth.order();
    let m = q * d;
    let mut companion = DMatrix::zeros(m, m);
    for (idx, lag) in truth.lags.iter().enumerate() {
        companion.view_mut((0, idx * q), (q, q)).copy_from(lag);
    }
    for block in 1..d {
        for i in 0..q {
            companion[(block * q + i, (block - 1) * q + i)] = 1.0;
        }
    }
    companion
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |a, z| a.max(z.norm()))
}

/// Output of [`simulate`]: sampled curves plus the exact score trajectories.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub series: SampledSeries,
    /// `scores.row(t)` is the basis score vector `x_t`.
    pub scores: DMatrix<f64>,
    /// `noise_scores.row(t)` is the noise score vector `z_t`.
    pub noise_scores: DMatrix<f64>,
}

pub const DEFAULT_BURN_IN: usize = 200;

/// Simulates `T` steps of the FAR(D) process on an `n`-point grid.
///
/// The score recursion starts from zero and runs `burn_in` extra steps that
/// are discarded. Refuses truths with companion spectral radius at or above
/// one; warns above 0.99.
pub fn simulate(
    truth: &FarGroundTruth,
    t_len: usize,
    n: usize,
    grid_kind: GridKind,
    burn_in: usize,
    seed: u64,
) -> Result<SimOutput> {
    let d_max = truth.order();
    if t_len < d_max + 1 {
        return Err(Error::invalid(format!(
            "series length {t_len} too short for order {d_max}"
        )));
    }
    let radius = companion_spectral_radius(truth);
    if radius >= 1.0 {
        return Err(Error::Nonstationary(format!(
            "companion spectral radius {radius:.4} >= 1"
        )));
    }
    if radius >= 0.99 {
        log::warn!("companion spectral radius {radius:.4} is close to 1; long transients likely");
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let grid = match grid_kind {
        GridKind::MidpointEquispaced => Grid::midpoint(n)?,
        GridKind::UniformRandom => Grid::uniform_random(n, &mut rng)?,
        GridKind::Explicit => {
            return Err(Error::invalid(
                "explicit grids are not supported by the simulator; use midpoint or random",
            ))
        }
    };

    let q = truth.q();
    let total = burn_in + t_len;
    let mut scores = DMatrix::zeros(total, q);
    let mut noise = DMatrix::zeros(total, q);
    let mut history = DMatrix::zeros(d_max, q);
    for t in 0..total {
        let z = draw_noise(&truth.noise, q, &mut rng);
        let mean = truth.transition_scores(&history)?;
        let x = &mean + &z;
        scores.row_mut(t).copy_from(&x.transpose());
        noise.row_mut(t).copy_from(&z.transpose());
        // shift the rolling history window up by one row
        for r in 1..d_max {
            let row = history.row(r).into_owned();
            history.row_mut(r - 1).copy_from(&row);
        }
        history.row_mut(d_max - 1).copy_from(&x.transpose());
    }

    let kept_scores = scores.rows(burn_in, t_len).into_owned();
    let kept_noise = noise.rows(burn_in, t_len).into_owned();
    let basis_matrix = eval_cosine_basis(truth.basis, &grid);
    let mut values = DMatrix::zeros(t_len, grid.len());
    for t in 0..t_len {
        let x = kept_scores.row(t).transpose();
        values.row_mut(t).copy_from(&(&basis_matrix * x).transpose());
    }

    Ok(SimOutput {
        series: SampledSeries::new(grid, values)?,
        scores: kept_scores,
        noise_scores: kept_noise,
    })
}

fn draw_noise<R: Rng>(noise: &NoiseSpec, q: usize, rng: &mut R) -> DVector<f64> {
    match noise {
        NoiseSpec::Uniform { half_width } => {
            DVector::from_fn(q, |_, _| half_width * (2.0 * rng.gen::<f64>() - 1.0))
        }
        NoiseSpec::Gaussian { sigmas } => {
            DVector::from_fn(q, |i, _| sigmas[i] * standard_normal(rng))
        }
    }
}

/// Exact conditional-mean prediction `u(s_i)^T sum_d L_d x_{t-d}` on the grid.
///
/// `history_scores` holds the last D score rows in chronological order.
pub fn oracle_predict(
    truth: &FarGroundTruth,
    history_scores: &DMatrix<f64>,
    grid: &Grid,
) -> Result<DVector<f64>> {
    let mean = truth.transition_scores(history_scores)?;
    let basis_matrix = eval_cosine_basis(truth.basis, grid);
    Ok(basis_matrix * mean)
}

/// Evaluates the true lag-`d` transition surface `u(r)^T L_d u(s)`.
pub fn eval_true_operator(truth: &FarGroundTruth, d: usize, r: f64, s: f64) -> Result<f64> {
    if d < 1 || d > truth.order() {
        return Err(Error::invalid(format!(
            "lag {d} out of range 1..={}",
            truth.order()
        )));
    }
    let q = truth.q();
    let u = |x: f64| {
        DVector::from_fn(q, |i, _| {
            if i == 0 {
                1.0
            } else {
                std::f64::consts::SQRT_2 * (i as f64 * std::f64::consts::PI * x).cos()
            }
        })
    };
    Ok((u(r).transpose() * &truth.lags[d - 1] * u(s))[(0, 0)])
}
