//! Kernel-space nuclear-norm estimation of FAR transition operators.
//!
//! The discrete least-squares problem over curve samples is rewritten as a
//! block trace-norm minimization
//!
//! ```text
//! min || X - sum_d K_d W_d Z_d ||_F^2 + sum_d ||W_d||_*
//! ```
//!
//! with `K_d = K^{1/2}/lambda_d` and `Z_d = K^{1/2} X^{(d)} / n`, solved by
//! [`crate::opt::agm_minimize`]. The coefficient matrices are recovered as
//! `R_d = K^{-1/2} W_d K^{-1/2} / lambda_d`, after which the estimated
//! transition surface is `A_d(r,s) = k(r)^T R_d k(s)` over kernel sections
//! `k(x)_j = K(x, s_j)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    self, eval_kernel, gram_matrix, spectral_sqrt, KernelSpec, SpectralFactor,
    DEFAULT_FLOOR_RATIO,
};
use crate::opt::{agm_minimize, AgmOptions, TraceNormProblem};
use crate::series::{unit_grid, Grid, SampledSeries};
use crate::sim::{eval_true_operator, FarGroundTruth};

/// Convergence diagnostics attached to every fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
}

/// A fitted set of transition operators in representer form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorEstimate {
    pub grid: Grid,
    pub kernel: KernelSpec,
    /// Coefficient matrices `R_d`, one `n x n` matrix per lag.
    pub coeff: Vec<DMatrix<f64>>,
    /// Penalty weights the fit was run with.
    pub lambdas: Vec<f64>,
    pub report: FitReport,
}

impl OperatorEstimate {
    /// Autoregressive order D.
    pub fn order(&self) -> usize {
        self.coeff.len()
    }

    /// Kernel section vector `k(x)_j = K(x, s_j)`.
    fn kernel_section(&self, x: f64) -> Result<DVector<f64>> {
        let pts = self.grid.points();
        let mut k = DVector::zeros(pts.len());
        for (j, &s) in pts.iter().enumerate() {
            k[j] = eval_kernel(self.kernel, x, s)?;
        }
        Ok(k)
    }
}

struct Assembly {
    problem: TraceNormProblem,
    factor: SpectralFactor,
    /// Raw lagged observation matrices `X^{(d)}`, `n x m`.
    lagged: Vec<DMatrix<f64>>,
}

/// Builds the target and lag matrices for the given 0-based target rows
/// (each row index `r` predicts time `r+1` from rows `r-1 .. r-D`).
fn assemble(
    series: &SampledSeries,
    target_rows: &[usize],
    order: usize,
    lambdas: &[f64],
    kernel_spec: KernelSpec,
) -> Result<Assembly> {
    if order == 0 {
        return Err(Error::invalid("autoregressive order must be at least 1"));
    }
    if lambdas.len() != order {
        return Err(Error::invalid(format!(
            "need {order} penalty weights, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("penalty weights must be positive"));
    }
    if target_rows.is_empty() {
        return Err(Error::invalid("no regression equations"));
    }
    if target_rows.iter().any(|&r| r < order || r >= series.len()) {
        return Err(Error::invalid("target row out of range for the requested order"));
    }

    let n = series.grid.len();
    let m = target_rows.len();
    let k = gram_matrix(kernel_spec, series.grid.points())?;
    let factor = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO)?;

    let column = |row: usize| series.values.row(row).transpose();
    let mut target = DMatrix::zeros(n, m);
    for (j, &r) in target_rows.iter().enumerate() {
        target.set_column(j, &column(r));
    }

    let mut left = Vec::with_capacity(order);
    let mut right = Vec::with_capacity(order);
    let mut lagged_raw = Vec::with_capacity(order);
    for d in 1..=order {
        left.push(&factor.sqrt / lambdas[d - 1]);
        let mut lagged = DMatrix::zeros(n, m);
        for (j, &r) in target_rows.iter().enumerate() {
            lagged.set_column(j, &column(r - d));
        }
        right.push(&factor.sqrt * &lagged / n as f64);
        lagged_raw.push(lagged);
    }

    Ok(Assembly {
        problem: TraceNormProblem::new(target, left, right)?,
        factor,
        lagged: lagged_raw,
    })
}

/// Solver blocks at the minimum-norm least-squares fit: the grid prediction
/// map `P = X M^+` over the stacked lags maps to
/// `W_d = lambda_d n K^{-1/2} P_d K^{-1/2}`.
///
/// Cold starts must grow the rough components of the operator through a
/// badly scaled quadratic and need two orders of magnitude more iterations;
/// starting at the least-squares fit leaves the solver the fast part,
/// shrinking what the penalty does not support.
fn least_squares_blocks(assembly: &Assembly, lambdas: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let order = assembly.lagged.len();
    let n = assembly.problem.block_dim();
    let m = assembly.problem.target.ncols();
    let mut stacked = DMatrix::zeros(order * n, m);
    for (d, lag) in assembly.lagged.iter().enumerate() {
        stacked.view_mut((d * n, 0), (n, m)).copy_from(lag);
    }
    let pinv = stacked
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::numerical(format!("lag matrix pseudo-inverse failed: {e}")))?;
    let pred_map = &assembly.problem.target * pinv; // n x (order * n)
    let inv = &assembly.factor.inv_sqrt;
    Ok((0..order)
        .map(|d| {
            let block = pred_map.view((0, d * n), (n, n));
            inv * block * inv * (lambdas[d] * n as f64)
        })
        .collect())
}

/// All usable target rows for a given order, newest first
/// (`X = [X_T, ..., X_{D+1}]`).
fn full_target_rows(series: &SampledSeries, order: usize) -> Result<Vec<usize>> {
    if series.len() < order + 2 {
        return Err(Error::invalid(format!(
            "series length {} leaves no regression equations for order {order}",
            series.len()
        )));
    }
    Ok((order..series.len()).rev().collect())
}

/// Assembles the full trace-norm problem for a series.
pub fn assemble_problem(
    series: &SampledSeries,
    order: usize,
    lambdas: &[f64],
    kernel_spec: KernelSpec,
) -> Result<TraceNormProblem> {
    let rows = full_target_rows(series, order)?;
    Ok(assemble(series, &rows, order, lambdas, kernel_spec)?.problem)
}

fn fit_on_targets(
    series: &SampledSeries,
    target_rows: &[usize],
    order: usize,
    lambdas: &[f64],
    kernel_spec: KernelSpec,
    options: &AgmOptions,
) -> Result<OperatorEstimate> {
    let assembly = assemble(series, target_rows, order, lambdas, kernel_spec)?;
    finish_fit(series, assembly, lambdas, kernel_spec, options)
}

/// Runs the solver on an assembled problem and recovers the coefficient
/// matrices `R_d = K^{-1/2} W_d K^{-1/2} / lambda_d`.
fn finish_fit(
    series: &SampledSeries,
    assembly: Assembly,
    lambdas: &[f64],
    kernel_spec: KernelSpec,
    options: &AgmOptions,
) -> Result<OperatorEstimate> {
    let state = agm_minimize(&assembly.problem, options)?;
    let inv = &assembly.factor.inv_sqrt;
    let coeff: Vec<DMatrix<f64>> = state
        .blocks
        .iter()
        .zip(lambdas)
        .map(|(w, &l)| inv * w * inv / l)
        .collect();
    Ok(OperatorEstimate {
        grid: series.grid.clone(),
        kernel: kernel_spec,
        coeff,
        lambdas: lambdas.to_vec(),
        report: FitReport {
            iterations: state.iteration,
            final_objective: *state.objective_trace.last().unwrap(),
            converged: state.converged,
        },
    })
}

/// Fits the nuclear-norm estimator at fixed order and penalties.
pub fn fit(
    series: &SampledSeries,
    order: usize,
    lambdas: &[f64],
    kernel_spec: KernelSpec,
    options: &AgmOptions,
) -> Result<OperatorEstimate> {
    let rows = full_target_rows(series, order)?;
    fit_on_targets(series, &rows, order, lambdas, kernel_spec, options)
}

/// Fits like [`fit`] but initializes the solver at the minimum-norm
/// least-squares solution instead of zero, which reaches the optimum in a
/// small fraction of the iterations on finely penalized problems.
pub fn fit_ls_init(
    series: &SampledSeries,
    order: usize,
    lambdas: &[f64],
    kernel_spec: KernelSpec,
    options: &AgmOptions,
) -> Result<OperatorEstimate> {
    let rows = full_target_rows(series, order)?;
    let assembly = assemble(series, &rows, order, lambdas, kernel_spec)?;
    let initial = least_squares_blocks(&assembly, lambdas)?;
    let stage_options = AgmOptions { initial_blocks: Some(initial), ..options.clone() };
    finish_fit(series, assembly, lambdas, kernel_spec, &stage_options)
}

/// Evaluates the estimated lag-`d` surface at `(r, s)`.
pub fn evaluate_operator(est: &OperatorEstimate, d: usize, r: f64, s: f64) -> Result<f64> {
    if d < 1 || d > est.order() {
        return Err(Error::invalid(format!("lag {d} out of range 1..={}", est.order())));
    }
    let kr = est.kernel_section(r)?;
    let ks = est.kernel_section(s)?;
    Ok((kr.transpose() * &est.coeff[d - 1] * ks)[(0, 0)])
}

fn check_history(est: &OperatorEstimate, history: &DMatrix<f64>) -> Result<()> {
    if history.nrows() != est.order() || history.ncols() != est.grid.len() {
        return Err(Error::invalid(format!(
            "history must be {}x{} (rows oldest to newest)",
            est.order(),
            est.grid.len()
        )));
    }
    Ok(())
}

/// One-step-ahead prediction at the grid points via the representer form
/// `X(s_i) = sum_d (1/n) sum_j A_d(s_i, s_j) X_{T+1-d}(s_j)`.
///
/// `history` holds the last D observed rows in chronological order.
pub fn predict_next(est: &OperatorEstimate, history: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_history(est, history)?;
    let n = est.grid.len();
    let k = gram_matrix(est.kernel, est.grid.points())?;
    let d_max = est.order();
    let mut pred = DVector::zeros(n);
    for d in 1..=d_max {
        let h = history.row(d_max - d).transpose();
        pred += &k * &est.coeff[d - 1] * &k * h / n as f64;
    }
    Ok(pred)
}

/// The same prediction through the factored closed form
/// `X = (1/n) sum_d (1/lambda_d) K K^{-1/2} W_d K^{1/2} X_{T+1-d}` with
/// `W_d = lambda_d K^{1/2} R_d K^{1/2}`. Agrees with [`predict_next`] up to
/// spectral round-off; kept as an algebraic cross-check.
pub fn predict_next_factored(
    est: &OperatorEstimate,
    history: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_history(est, history)?;
    let n = est.grid.len();
    let k = gram_matrix(est.kernel, est.grid.points())?;
    let factor = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO)?;
    let d_max = est.order();
    let mut pred = DVector::zeros(n);
    for d in 1..=d_max {
        let h = history.row(d_max - d).transpose();
        let w = &factor.sqrt * &est.coeff[d - 1] * &factor.sqrt * est.lambdas[d - 1];
        pred += &k * &factor.inv_sqrt * w * &factor.sqrt * h / (n as f64 * est.lambdas[d - 1]);
    }
    Ok(pred)
}

/// Prediction of the next curve at an arbitrary point `r` in `[0,1]`.
pub fn predict_next_at(est: &OperatorEstimate, history: &DMatrix<f64>, r: f64) -> Result<f64> {
    check_history(est, history)?;
    let n = est.grid.len();
    let k = gram_matrix(est.kernel, est.grid.points())?;
    let kr = est.kernel_section(r)?;
    let d_max = est.order();
    let mut pred = 0.0;
    for d in 1..=d_max {
        let h = history.row(d_max - d).transpose();
        pred += (kr.transpose() * &est.coeff[d - 1] * &k * h)[(0, 0)] / n as f64;
    }
    Ok(pred)
}

/// Cross-validation result: the chosen order and penalties, plus the full
/// error table (rows = candidate order, columns = candidate lambda).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuningChoice {
    pub order: usize,
    pub lambdas: Vec<f64>,
    pub cv_table: DMatrix<f64>,
}

/// Options for [`cross_validate`]. Folds are contiguous blocks of target
/// indices, which respects the serial dependence of the data.
#[derive(Clone, Debug)]
pub struct CvOptions {
    pub folds: usize,
    pub agm: AgmOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { folds: 5, agm: AgmOptions::default() }
    }
}

/// Default penalty grid: 10 logarithmically spaced values spanning
/// `[1e-7, 1e1] * (||X||_F^2 / (T - D))` with `X` the full target matrix.
///
/// The span reaches low because rough transition surfaces carry a large
/// kernel-space nuclear norm; moderate penalties over-shrink them long
/// before the residual term notices.
pub fn default_lambda_grid(series: &SampledSeries, order: usize) -> Result<Vec<f64>> {
    let rows = full_target_rows(series, order)?;
    let mut scale = 0.0;
    for &r in &rows {
        scale += series.values.row(r).norm_squared();
    }
    scale /= rows.len() as f64;
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let lo = (1e-7 * scale).ln();
    let hi = (1e1 * scale).ln();
    let count = 10;
    Ok((0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Selects the order and a shared penalty by blocked K-fold cross-validation.
///
/// Target indices `{D_max+1, ..., T}` are split into contiguous folds; for
/// each candidate `(D, lambda)` the estimator is fitted on the equations
/// whose target lies outside the fold (lags may reach into held-out times)
/// and scored by mean squared prediction error at the grid points on the
/// held-out targets. Ties prefer smaller order, then larger lambda.
pub fn cross_validate(
    series: &SampledSeries,
    d_max: usize,
    lambda_grid: &[f64],
    kernel_spec: KernelSpec,
    options: &CvOptions,
) -> Result<TuningChoice> {
    if d_max == 0 {
        return Err(Error::invalid("d_max must be at least 1"));
    }
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid must be non-empty"));
    }
    if options.folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let t_len = series.len();
    if t_len <= d_max {
        return Err(Error::invalid("series too short for the requested d_max"));
    }
    let universe: Vec<usize> = (d_max..t_len).collect();
    if universe.len() < options.folds {
        return Err(Error::invalid(format!(
            "only {} usable targets for {} folds",
            universe.len(),
            options.folds
        )));
    }

    let folds = contiguous_folds(universe.len(), options.folds);
    let n = series.grid.len();
    let mut table = DMatrix::zeros(d_max, lambda_grid.len());

    for (di, order) in (1..=d_max).enumerate() {
        for fold in &folds {
            let mut train: Vec<usize> = Vec::with_capacity(universe.len() - fold.len());
            for (pos, &row) in universe.iter().enumerate() {
                if !fold.contains(&pos) {
                    train.push(row);
                }
            }
            train.reverse(); // newest first, matching the assembly convention

            // the least-squares blocks are shared across penalties up to the
            // lambda scale, so initialization costs one SVD per fold
            let unit = vec![1.0; order];
            let base_assembly = assemble(series, &train, order, &unit, kernel_spec)?;
            let ls_unit = least_squares_blocks(&base_assembly, &unit)?;

            for (li, &lambda) in lambda_grid.iter().enumerate() {
                let lambdas = vec![lambda; order];
                let assembly = assemble(series, &train, order, &lambdas, kernel_spec)?;
                let initial: Vec<DMatrix<f64>> =
                    ls_unit.iter().map(|w| w * lambda).collect();
                let stage_options =
                    AgmOptions { initial_blocks: Some(initial), ..options.agm.clone() };
                let est = finish_fit(series, assembly, &lambdas, kernel_spec, &stage_options)?;
                let mut sse = 0.0;
                for pos in fold.clone() {
                    let row = universe[pos];
                    let history = series.values.rows(row - order, order).into_owned();
                    let pred = predict_next(&est, &history)?;
                    let actual = series.values.row(row).transpose();
                    sse += (pred - actual).norm_squared();
                }
                // each target is held out exactly once, so fold contributions
                // sum to the pooled mean squared error
                table[(di, li)] += sse / (n * universe.len()) as f64;
            }
        }
    }

    // scan in tie-break priority order: smaller D first, larger lambda first
    let mut lambda_order: Vec<usize> = (0..lambda_grid.len()).collect();
    lambda_order.sort_by(|&a, &b| {
        lambda_grid[b].partial_cmp(&lambda_grid[a]).expect("finite lambdas")
    });
    let mut best: Option<(usize, usize, f64)> = None;
    for di in 0..d_max {
        for &li in &lambda_order {
            let val = table[(di, li)];
            if best.is_none_or(|(_, _, b)| val < b) {
                best = Some((di, li, val));
            }
        }
    }
    let (di, li, _) = best.expect("non-empty table");
    Ok(TuningChoice {
        order: di + 1,
        lambdas: vec![lambda_grid[li]; di + 1],
        cv_table: table,
    })
}

/// Ranges of positions `0..len` split into `k` contiguous blocks whose sizes
/// differ by at most one.
fn contiguous_folds(len: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let base = len / k;
    let extra = len % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Normalized integrated squared error between two surfaces sampled on the
/// same uniform tensor grid, by the 2-D trapezoid rule.
fn surface_mise(est_surface: &DMatrix<f64>, true_surface: &DMatrix<f64>) -> Result<f64> {
    let m = true_surface.nrows();
    let h = 1.0 / (m - 1) as f64;
    let weight = |i: usize| if i == 0 || i == m - 1 { 0.5 * h } else { h };
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for j in 0..m {
            let w = weight(i) * weight(j);
            let diff = true_surface[(i, j)] - est_surface[(i, j)];
            num += w * diff * diff;
            den += w * true_surface[(i, j)] * true_surface[(i, j)];
        }
    }
    if den <= 0.0 {
        return Err(Error::UndefinedMetric(
            "true operator has zero L2 norm; MISE is undefined".into(),
        ));
    }
    Ok(num / den)
}

fn true_surface_on(truth: &FarGroundTruth, d: usize, pts: &[f64]) -> Result<DMatrix<f64>> {
    let m = pts.len();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = eval_true_operator(truth, d, pts[i], pts[j])?;
        }
    }
    Ok(out)
}

/// Relative mean integrated squared error of the lag-`d` estimate against
/// the simulated ground truth, on a `fine_grid_size`^2 uniform tensor grid.
pub fn mise(
    est: &OperatorEstimate,
    truth: &FarGroundTruth,
    d: usize,
    fine_grid_size: usize,
) -> Result<f64> {
    if d < 1 || d > est.order() || d > truth.order() {
        return Err(Error::invalid(format!("lag {d} out of range")));
    }
    if fine_grid_size < 2 {
        return Err(Error::invalid("fine grid needs at least 2 points"));
    }
    let pts = unit_grid(fine_grid_size);
    let m = pts.len();
    let n = est.grid.len();
    // cross-kernel between the fine grid and the sampling grid
    let mut cross = DMatrix::zeros(m, n);
    for i in 0..m {
        for (j, &s) in est.grid.points().iter().enumerate() {
            cross[(i, j)] = eval_kernel(est.kernel, pts[i], s)?;
        }
    }
    let est_surface = &cross * &est.coeff[d - 1] * cross.transpose();
    let true_surface = true_surface_on(truth, d, &pts)?;
    surface_mise(&est_surface, &true_surface)
}

/// MISE of a precomputed estimate surface against the simulated truth at
/// lag `d`. The surface must be sampled on the uniform tensor grid implied
/// by its dimension (endpoints included).
pub fn mise_surface(
    est_surface: &DMatrix<f64>,
    truth: &FarGroundTruth,
    d: usize,
) -> Result<f64> {
    if d < 1 || d > truth.order() {
        return Err(Error::invalid(format!("lag {d} out of range 1..={}", truth.order())));
    }
    if est_surface.nrows() != est_surface.ncols() || est_surface.nrows() < 2 {
        return Err(Error::invalid("estimate surface must be square with side >= 2"));
    }
    let pts = unit_grid(est_surface.nrows());
    let true_surface = true_surface_on(truth, d, &pts)?;
    surface_mise(est_surface, &true_surface)
}

/// Default fine-grid resolution for [`mise`].
pub const DEFAULT_MISE_GRID: usize = 201;

/// Sum of per-lag operator nuclear norms of a fit, used by shrinkage
/// diagnostics: `sum_d ||K^{1/2} R_d K^{1/2}||_*`.
pub fn total_operator_nuclear_norm(est: &OperatorEstimate) -> Result<f64> {
    let k = gram_matrix(est.kernel, est.grid.points())?;
    let factor = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO)?;
    let mut total = 0.0;
    for r in &est.coeff {
        total += kernel::operator_nuclear_norm(r, &factor)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{eval_cosine_basis, CosineBasis, GridKind};
    use crate::sim::{make_scenario, simulate, Scenario};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn toy_series(t_len: usize, n: usize, seed: u64) -> SampledSeries {
        let truth = make_scenario(Scenario::A, 3, &[0.5], seed).unwrap();
        simulate(&truth, t_len, n, GridKind::MidpointEquispaced, 100, seed)
            .unwrap()
            .series
    }

    #[test]
    fn assemble_rejects_degenerate_lengths() {
        let series = toy_series(3, 5, 1);
        // T = D + 1 leaves no usable regression window
        assert!(assemble_problem(&series.slice_rows(0, 2), 1, &[1.0], KernelSpec::default()).is_err());
        assert!(assemble_problem(&series, 1, &[0.0], KernelSpec::default()).is_err());
        assert!(assemble_problem(&series, 1, &[1.0, 1.0], KernelSpec::default()).is_err());
    }

    #[test]
    fn assemble_column_ordering() {
        // T = 3, D = 1, n = 2: X = [X_3, X_2], Z_1 built from [X_2, X_1]
        let grid = Grid::midpoint(2).unwrap();
        let values = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let series = SampledSeries::new(grid, values).unwrap();
        let p = assemble_problem(&series, 1, &[2.0], KernelSpec::default()).unwrap();

        assert_eq!(p.target.column(0), nalgebra::dvector![5.0, 6.0]);
        assert_eq!(p.target.column(1), nalgebra::dvector![3.0, 4.0]);

        let k = gram_matrix(KernelSpec::default(), series.grid.points()).unwrap();
        let factor = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        let lagged = DMatrix::from_columns(&[
            nalgebra::dvector![3.0, 4.0],
            nalgebra::dvector![1.0, 2.0],
        ]);
        let expect_z = &factor.sqrt * lagged / 2.0;
        assert_relative_eq!(p.right_factors[0], expect_z, epsilon = 1e-12);
        assert_relative_eq!(p.left_factors[0], &factor.sqrt / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn doubling_lambda_halves_left_factor() {
        let series = toy_series(10, 6, 2);
        let p1 = assemble_problem(&series, 1, &[1.5], KernelSpec::default()).unwrap();
        let p2 = assemble_problem(&series, 1, &[3.0], KernelSpec::default()).unwrap();
        assert_relative_eq!(p1.left_factors[0], 2.0 * &p2.left_factors[0], epsilon = 1e-12);
    }

    #[test]
    fn huge_penalty_crushes_coefficients() {
        let series = toy_series(30, 10, 3);
        let est = fit(&series, 1, &[1e9], KernelSpec::default(), &AgmOptions::default()).unwrap();
        assert!(est.coeff[0].norm() < 1e-6);
    }

    #[test]
    fn objective_no_worse_than_zero_blocks() {
        let series = toy_series(25, 8, 4);
        let p = assemble_problem(&series, 1, &[0.5], KernelSpec::default()).unwrap();
        let est = fit(&series, 1, &[0.5], KernelSpec::default(), &AgmOptions::default()).unwrap();
        assert!(est.report.final_objective <= p.target.norm_squared() + 1e-9);
    }

    #[test]
    fn noiseless_recursion_is_near_interpolated() {
        // scores follow x_t = 0.5 x_{t-1} exactly after one nonzero start row
        // at the scale of the scenario's U(-0.1, 0.1) noise
        let q = 2;
        let n = 12;
        let t_len = 12;
        let basis = CosineBasis::new(q).unwrap();
        let grid = Grid::midpoint(n).unwrap();
        let u = eval_cosine_basis(basis, &grid);
        let mut scores = DMatrix::zeros(t_len, q);
        scores[(0, 0)] = 0.1;
        scores[(0, 1)] = -0.07;
        for t in 1..t_len {
            for i in 0..q {
                scores[(t, i)] = 0.5 * scores[(t - 1, i)];
            }
        }
        let mut values = DMatrix::zeros(t_len, n);
        for t in 0..t_len {
            values.row_mut(t).copy_from(&(&u * scores.row(t).transpose()).transpose());
        }
        let series = SampledSeries::new(grid, values).unwrap();

        let lambda = 1e-4;
        let opts = AgmOptions {
            max_iter: 60_000,
            rel_tol: 1e-12,
            fp_tol: Some(1e-8),
            ..AgmOptions::default()
        };
        let est = fit(&series, 1, &[lambda], KernelSpec::default(), &opts).unwrap();
        let mut sse = 0.0;
        let mut count = 0;
        for t in 1..t_len {
            let history = series.values.rows(t - 1, 1).into_owned();
            let pred = predict_next(&est, &history).unwrap();
            sse += (pred - series.values.row(t).transpose()).norm_squared();
            count += n;
        }
        let rms = (sse / count as f64).sqrt();
        assert!(rms < 1e-3, "training rms {rms}");
    }

    #[test]
    fn evaluate_operator_cases() {
        let series = toy_series(20, 7, 5);
        let mut est =
            fit(&series, 1, &[0.3], KernelSpec::default(), &AgmOptions::default()).unwrap();

        // evaluation at grid pairs equals (K R K)[i][j]
        let k = gram_matrix(est.kernel, est.grid.points()).unwrap();
        let krk = &k * &est.coeff[0] * &k;
        let pts = est.grid.points().to_vec();
        for (i, &r) in pts.iter().enumerate() {
            for (j, &s) in pts.iter().enumerate() {
                let v = evaluate_operator(&est, 1, r, s).unwrap();
                assert_relative_eq!(v, krk[(i, j)], epsilon = 1e-10, max_relative = 1e-8);
            }
        }

        // transition surfaces are generically not symmetric: a non-symmetric
        // coefficient matrix gives A(r,s) != A(s,r)
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        est.coeff[0] = DMatrix::from_fn(7, 7, |_, _| rng.gen::<f64>() - 0.5);
        let a = evaluate_operator(&est, 1, 0.1, 0.9).unwrap();
        let b = evaluate_operator(&est, 1, 0.9, 0.1).unwrap();
        assert!((a - b).abs() > 1e-6);

        est.coeff[0] = DMatrix::zeros(7, 7);
        assert_eq!(evaluate_operator(&est, 1, 0.3, 0.6).unwrap(), 0.0);
        assert!(evaluate_operator(&est, 2, 0.3, 0.6).is_err());
    }

    #[test]
    fn predict_zero_cases() {
        let series = toy_series(20, 6, 6);
        let mut est =
            fit(&series, 1, &[0.3], KernelSpec::default(), &AgmOptions::default()).unwrap();

        let zero_hist = DMatrix::zeros(1, 6);
        let pred = predict_next(&est, &zero_hist).unwrap();
        assert!(pred.norm() < 1e-14);

        est.coeff[0] = DMatrix::zeros(6, 6);
        let hist = series.values.rows(10, 1).into_owned();
        let pred = predict_next(&est, &hist).unwrap();
        assert_eq!(pred.norm(), 0.0);

        assert!(predict_next(&est, &DMatrix::zeros(2, 6)).is_err());
    }

    #[test]
    fn prediction_routes_agree() {
        for seed in 0..10 {
            let series = toy_series(24, 9, 40 + seed);
            let order = 1 + (seed as usize) % 2;
            if series.len() < order + 2 {
                continue;
            }
            let lambdas = vec![0.2 + 0.1 * seed as f64; order];
            let est =
                fit(&series, order, &lambdas, KernelSpec::default(), &AgmOptions::default())
                    .unwrap();
            let history = series.values.rows(series.len() - order, order).into_owned();
            let a = predict_next(&est, &history).unwrap();
            let b = predict_next_factored(&est, &history).unwrap();
            let scale = a.norm().max(1.0);
            assert!(
                (&a - &b).norm() / scale < 1e-8,
                "seed {seed}: routes differ by {}",
                (&a - &b).norm()
            );
        }
    }

    #[test]
    fn predict_at_matches_grid_route() {
        let series = toy_series(20, 8, 77);
        let est = fit(&series, 1, &[0.4], KernelSpec::default(), &AgmOptions::default()).unwrap();
        let history = series.values.rows(19, 1).into_owned();
        let on_grid = predict_next(&est, &history).unwrap();
        for (i, &s) in est.grid.points().iter().enumerate() {
            let v = predict_next_at(&est, &history, s).unwrap();
            assert_relative_eq!(v, on_grid[i], epsilon = 1e-10, max_relative = 1e-8);
        }
    }

    #[test]
    fn cv_single_candidate() {
        let series = toy_series(30, 6, 8);
        let choice = cross_validate(
            &series,
            1,
            &[0.7],
            KernelSpec::default(),
            &CvOptions::default(),
        )
        .unwrap();
        assert_eq!(choice.order, 1);
        assert_eq!(choice.lambdas, vec![0.7]);
        assert_eq!(choice.cv_table.shape(), (1, 1));
    }

    #[test]
    fn cv_selection_matches_table_minimum() {
        let series = toy_series(40, 6, 9);
        let grid = default_lambda_grid(&series, 1).unwrap();
        let sub = &grid[2..7];
        let choice = cross_validate(
            &series,
            2,
            sub,
            KernelSpec::default(),
            &CvOptions::default(),
        )
        .unwrap();
        let table = &choice.cv_table;
        let min = table.iter().cloned().fold(f64::INFINITY, f64::min);
        let li = sub.iter().position(|&l| l == choice.lambdas[0]).unwrap();
        assert_eq!(table[(choice.order - 1, li)], min);
    }

    #[test]
    fn cv_rejects_tiny_series() {
        let series = toy_series(5, 6, 10);
        // 4 usable targets < 5 folds
        assert!(cross_validate(
            &series.slice_rows(0, 5),
            1,
            &[0.5],
            KernelSpec::default(),
            &CvOptions::default()
        )
        .is_err());
    }

    #[test]
    fn penalty_path_shrinks_nuclear_norm() {
        let series = toy_series(40, 10, 11);
        let base = default_lambda_grid(&series, 1).unwrap();
        let ladder = [base[1], base[3], base[5], base[7], base[9]];
        let mut previous = f64::INFINITY;
        for &lambda in &ladder {
            let est =
                fit(&series, 1, &[lambda], KernelSpec::default(), &AgmOptions::default()).unwrap();
            let total = total_operator_nuclear_norm(&est).unwrap();
            assert!(total <= previous + 1e-8, "lambda {lambda}: {total} > {previous}");
            previous = total;
        }
    }

    #[test]
    fn mise_of_truth_is_zero_and_zero_estimate_is_one() {
        let truth = make_scenario(Scenario::A, 3, &[0.5], 12).unwrap();
        let pts = unit_grid(101);
        let surface = true_surface_on(&truth, 1, &pts).unwrap();
        assert!(surface_mise(&surface, &surface).unwrap() <= 1e-10);

        let zero = DMatrix::zeros(101, 101);
        assert_relative_eq!(surface_mise(&zero, &surface).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mise_constant_surfaces() {
        // truth = kappa, estimate = kappa/2: relative error is 1/4
        let kappa = 0.7;
        let m = 51;
        let truth_surface = DMatrix::from_element(m, m, kappa);
        let est_surface = DMatrix::from_element(m, m, kappa / 2.0);
        assert_relative_eq!(
            surface_mise(&est_surface, &truth_surface).unwrap(),
            0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mise_zero_truth_undefined() {
        let truth = make_scenario(Scenario::A, 2, &[0.0], 0).unwrap();
        let series = toy_series(20, 6, 13);
        let est = fit(&series, 1, &[0.5], KernelSpec::default(), &AgmOptions::default()).unwrap();
        assert!(matches!(
            mise(&est, &truth, 1, 41),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn mise_estimate_against_its_own_truth_is_small() {
        // strong signal, decent sample: the fitted surface should explain
        // most of the truth, giving MISE well below the trivial value 1
        let truth = make_scenario(Scenario::A, 2, &[0.8], 3).unwrap();
        let out = simulate(&truth, 200, 20, GridKind::MidpointEquispaced, 200, 31).unwrap();
        let grid = default_lambda_grid(&out.series, 1).unwrap();
        let est = fit(
            &out.series,
            1,
            &[grid[1]],
            KernelSpec::default(),
            &AgmOptions::default(),
        )
        .unwrap();
        let err = mise(&est, &truth, 1, 101).unwrap();
        assert!(err < 0.5, "mise {err}");
    }

    #[test]
    fn degenerate_first_lag_shrinks_below_second() {
        // data generated with L_1 = 0: the fitted lag-1 operator should carry
        // no more mass than the lag-2 operator
        let truth = make_scenario(Scenario::A, 6, &[0.0, 0.5], 0).unwrap();
        let out = simulate(&truth, 100, 20, GridKind::MidpointEquispaced, 200, 5).unwrap();
        let lgrid = default_lambda_grid(&out.series, 2).unwrap();
        let est = fit(
            &out.series,
            2,
            &[lgrid[3], lgrid[3]],
            KernelSpec::default(),
            &AgmOptions::default(),
        )
        .unwrap();
        let k = gram_matrix(est.kernel, est.grid.points()).unwrap();
        let factor = spectral_sqrt(&k, DEFAULT_FLOOR_RATIO).unwrap();
        let n1 = kernel::operator_nuclear_norm(&est.coeff[0], &factor).unwrap();
        let n2 = kernel::operator_nuclear_norm(&est.coeff[1], &factor).unwrap();
        assert!(n1 <= n2 + 1e-10, "lag-1 norm {n1} exceeds lag-2 norm {n2}");
    }

    #[test]
    fn random_fit_mise_vs_truth_fine_grid_smoke() {
        let mut rng = ChaCha20Rng::seed_from_u64(500);
        let truth = make_scenario(Scenario::B, 3, &[0.5], rng.gen()).unwrap();
        let out = simulate(&truth, 60, 12, GridKind::MidpointEquispaced, 200, 77).unwrap();
        let lgrid = default_lambda_grid(&out.series, 1).unwrap();
        let est = fit(
            &out.series,
            1,
            &[lgrid[2]],
            KernelSpec::default(),
            &AgmOptions::default(),
        )
        .unwrap();
        let v = mise(&est, &truth, 1, 61).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }
}
