//! FPCA-based baseline estimators and their B-spline pre-smoothing.
//!
//! Both baselines first convert the discrete samples into smooth curves by
//! per-curve least squares on a cubic B-spline basis, then run a functional
//! PCA of the sample covariance operator on a fine grid. The Yule-Walker
//! baseline inverts the lag-1 moment equations in the leading principal
//! components; the FPCA-VAR baseline fits a vector autoregression to the
//! leading score process with the component count and order chosen by the
//! functional final prediction error criterion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Grid, SampledSeries};

/// Default fine-grid resolution for smoothing and FPCA quadrature.
pub const DEFAULT_FINE_GRID: usize = 101;

/// Condition-number ceiling for the VAR design; candidates above it are
/// treated as numerical failures.
pub const VAR_CONDITION_LIMIT: f64 = 1e12;

// --- cubic B-spline basis ---------------------------------------------------

/// Clamped knot vector for `num_basis` cubic B-splines on [0,1]:
/// fourfold boundary knots with `num_basis - 4` equally spaced interior knots.
fn knot_vector(num_basis: usize) -> Vec<f64> {
    let order = 4;
    let interior = num_basis - order;
    let mut knots = vec![0.0; order];
    for i in 1..=interior {
        knots.push(i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, order));
    knots
}

/// Evaluates all `num_basis` cubic B-splines at `x` by the Cox-de Boor
/// recursion (0/0 taken as 0; the right endpoint belongs to the last span).
fn bspline_row(knots: &[f64], num_basis: usize, x: f64) -> Vec<f64> {
    let order = 4;
    let m = knots.len() - 1;
    let mut deg0 = vec![0.0f64; m];
    for i in 0..m {
        let right_end = knots[i + 1] == 1.0 && x == 1.0;
        if (knots[i] <= x && x < knots[i + 1]) || (right_end && knots[i] < knots[i + 1]) {
            deg0[i] = 1.0;
        }
    }
    let mut prev = deg0;
    for k in 2..=order {
        let mut cur = vec![0.0f64; m + 1 - k];
        for i in 0..cur.len() {
            let mut v = 0.0;
            let den_l = knots[i + k - 1] - knots[i];
            if den_l > 0.0 {
                v += (x - knots[i]) / den_l * prev[i];
            }
            let den_r = knots[i + k] - knots[i + 1];
            if den_r > 0.0 {
                v += (knots[i + k] - x) / den_r * prev[i + 1];
            }
            cur[i] = v;
        }
        prev = cur;
    }
    prev.truncate(num_basis);
    prev
}

/// Design matrix of the cubic spline basis at the given points.
fn bspline_design(points: &[f64], num_basis: usize) -> DMatrix<f64> {
    let knots = knot_vector(num_basis);
    let mut design = DMatrix::zeros(points.len(), num_basis);
    for (r, &x) in points.iter().enumerate() {
        let row = bspline_row(&knots, num_basis, x);
        for (c, v) in row.into_iter().enumerate() {
            design[(r, c)] = v;
        }
    }
    design
}

fn uniform_grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// Per-curve least squares against a design matrix; returns the coefficient
/// matrix with one row per curve.
fn least_squares_coeffs(design: &DMatrix<f64>, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = design.transpose() * design;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::numerical("spline design is rank deficient; reduce the basis size")
    })?;
    let rhs = design.transpose() * values.transpose(); // num_basis x T
    Ok(chol.solve(&rhs).transpose())
}

/// Curves represented in a cubic B-spline basis, reconstructed on a fine grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothedCurves {
    pub num_basis: usize,
    /// `T x num_basis` least-squares coefficients.
    pub coeffs: DMatrix<f64>,
    /// Uniform reconstruction grid (m points including endpoints).
    pub fine_grid: Vec<f64>,
    /// `T x m` reconstructed curve values.
    pub values: DMatrix<f64>,
}

/// Smooths every curve of a series by least squares on `num_basis` cubic
/// B-splines with equally spaced knots.
pub fn smooth_bsplines(series: &SampledSeries, num_basis: usize) -> Result<SmoothedCurves> {
    smooth_bsplines_on(series, num_basis, DEFAULT_FINE_GRID)
}

fn smooth_bsplines_on(
    series: &SampledSeries,
    num_basis: usize,
    fine: usize,
) -> Result<SmoothedCurves> {
    if num_basis < 4 {
        return Err(Error::invalid("cubic splines need at least 4 basis functions"));
    }
    if series.grid.len() < num_basis {
        return Err(Error::invalid(format!(
            "{} sampling points cannot support {num_basis} spline coefficients",
            series.grid.len()
        )));
    }
    let design = bspline_design(series.grid.points(), num_basis);
    let coeffs = least_squares_coeffs(&design, &series.values)?;
    let fine_grid = uniform_grid(fine);
    let fine_design = bspline_design(&fine_grid, num_basis);
    let values = &coeffs * fine_design.transpose();
    Ok(SmoothedCurves { num_basis, coeffs, fine_grid, values })
}

// --- functional PCA ----------------------------------------------------------

/// Eigenpairs of the sample covariance operator under `1/m` quadrature.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FpcaResult {
    /// Non-negative eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `m x p_max` eigenfunction values on the fine grid, unit quadrature norm.
    pub eigenfunctions: DMatrix<f64>,
    /// `T x p_max` score matrix of quadrature inner products.
    pub scores: DMatrix<f64>,
}

/// Functional PCA of the (non-centered) sample covariance operator
/// `C(s,r) = (1/T) sum_t X_t(s) X_t(r)` on the fine grid.
pub fn fpca(smoothed: &SmoothedCurves) -> Result<FpcaResult> {
    let t_len = smoothed.values.nrows();
    if t_len < 2 {
        return Err(Error::invalid("FPCA needs at least two curves"));
    }
    let m = smoothed.fine_grid.len();
    let cov = smoothed.values.transpose() * &smoothed.values / t_len as f64;
    let weighted = cov / m as f64;
    let eig = nalgebra::SymmetricEigen::new(weighted);

    let p_max = smoothed.num_basis.min(t_len).min(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite eigenvalues")
    });

    let mut eigenvalues = Vec::with_capacity(p_max);
    let mut eigenfunctions = DMatrix::zeros(m, p_max);
    for (col, &idx) in order.iter().take(p_max).enumerate() {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        let mut f = eig.eigenvectors.column(idx) * (m as f64).sqrt();
        // deterministic sign: largest-magnitude coordinate positive
        let lead = f.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if lead < 0.0 {
            f = -f;
        }
        eigenfunctions.set_column(col, &f);
    }
    let scores = &smoothed.values * &eigenfunctions / m as f64;
    Ok(FpcaResult { eigenvalues, eigenfunctions, scores })
}

/// Smallest `p` whose cumulative explained variance reaches `tau`.
pub fn select_p_threshold(eigenvalues: &[f64], tau: f64) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("empty eigenvalue list"));
    }
    if eigenvalues.iter().any(|&e| e < 0.0) {
        return Err(Error::invalid("eigenvalues must be non-negative"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid("threshold must lie in [0,1]"));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric(
            "all eigenvalues are zero; explained variance is undefined".into(),
        ));
    }
    let mut cum = 0.0;
    for (i, &e) in eigenvalues.iter().enumerate() {
        cum += e;
        if cum / total >= tau {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

// --- VAR least squares --------------------------------------------------------

/// Multivariate least squares fit of a VAR(D) on score rows (no intercept).
/// Returns the lag coefficient matrices and the residual covariance.
pub fn var_least_squares(
    scores: &DMatrix<f64>,
    order: usize,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let t_len = scores.nrows();
    let p = scores.ncols();
    if order == 0 {
        return Err(Error::invalid("VAR order must be at least 1"));
    }
    if t_len <= order {
        return Err(Error::invalid("not enough rows for the requested VAR order"));
    }
    let n_eq = t_len - order;
    let mut design = DMatrix::zeros(n_eq, p * order);
    let mut response = DMatrix::zeros(n_eq, p);
    for (row, t) in (order..t_len).enumerate() {
        response.row_mut(row).copy_from(&scores.row(t));
        for d in 1..=order {
            design
                .view_mut((row, (d - 1) * p), (1, p))
                .copy_from(&scores.row(t - d));
        }
    }

    let sv = design.singular_values();
    let (smax, smin) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &v| (hi.max(v), lo.min(v)));
    if smin <= 0.0 || smax / smin > VAR_CONDITION_LIMIT {
        return Err(Error::numerical(format!(
            "VAR design condition number {:.2e} exceeds {VAR_CONDITION_LIMIT:.0e}",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }

    let gram = design.transpose() * &design;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("VAR normal equations are not positive definite"))?;
    let theta = chol.solve(&(design.transpose() * &response)); // (p*order) x p
    let residuals = &response - &design * &theta;
    let sigma = residuals.transpose() * &residuals / n_eq as f64;

    let coeff = (0..order)
        .map(|d| theta.view((d * p, 0), (p, p)).transpose().into_owned())
        .collect();
    Ok((coeff, sigma))
}

/// Functional final prediction error of a `(p, order)` candidate:
/// `((T + pD)/(T - pD)) tr(Sigma_eps) + sum_{i>p} eigenvalue_i`.
/// `p = 0` is the empty model whose value is the full eigenvalue sum.
pub fn ffpe(
    scores: &DMatrix<f64>,
    eigenvalues: &[f64],
    p: usize,
    order: usize,
) -> Result<f64> {
    let t_len = scores.nrows();
    if p > scores.ncols() || p > eigenvalues.len() {
        return Err(Error::invalid("p exceeds the available components"));
    }
    let tail: f64 = eigenvalues.iter().skip(p).sum();
    if p == 0 {
        return Ok(tail);
    }
    if t_len <= p * order + 1 {
        return Err(Error::invalid(format!(
            "need T > p*D + 1, got T = {t_len}, p = {p}, D = {order}"
        )));
    }
    let leading = scores.columns(0, p).into_owned();
    let (_, sigma) = var_least_squares(&leading, order)?;
    let penalty = (t_len + p * order) as f64 / (t_len - p * order) as f64;
    Ok(penalty * sigma.trace() + tail)
}

// --- baseline fits --------------------------------------------------------------

/// Which baseline produced a fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Bosq,
    Anh,
}

/// A fitted FPCA baseline: score-space coefficient matrices over `p`
/// principal components, plus everything needed to predict and to evaluate
/// the induced transition surface.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineFit {
    pub kind: BaselineKind,
    /// Number of principal components retained.
    pub p: usize,
    /// Autoregressive order D.
    pub order: usize,
    /// `p x p` coefficient matrices, one per lag.
    pub coeff_matrices: Vec<DMatrix<f64>>,
    pub fpca: FpcaResult,
    /// Spline basis size used for smoothing.
    pub num_basis: usize,
    /// Training grid; predictions are synthesized on it.
    pub grid: Grid,
    /// Spline coefficients of the retained eigenfunctions (`num_basis x p`),
    /// for evaluation away from the fine grid.
    pub eigen_coeffs: DMatrix<f64>,
    /// ANH: candidates skipped for numerical failure during selection.
    pub skipped_candidates: usize,
}

impl BaselineFit {
    /// Retained eigenfunctions evaluated at arbitrary points (`len x p`).
    pub fn eigenfunctions_at(&self, points: &[f64]) -> DMatrix<f64> {
        bspline_design(points, self.num_basis) * &self.eigen_coeffs
    }

    /// Induced transition surface `A_d(r,s) = f(r)^T B_d f(s)` on a tensor
    /// grid of the given points.
    pub fn operator_surface(&self, d: usize, points: &[f64]) -> Result<DMatrix<f64>> {
        if d < 1 || d > self.order {
            return Err(Error::invalid(format!("lag {d} out of range 1..={}", self.order)));
        }
        let f = self.eigenfunctions_at(points);
        Ok(&f * &self.coeff_matrices[d - 1] * f.transpose())
    }
}

fn eigenfunction_spline_coeffs(
    fpca: &FpcaResult,
    fine_grid: &[f64],
    num_basis: usize,
    p: usize,
) -> Result<DMatrix<f64>> {
    let design = bspline_design(fine_grid, num_basis);
    let funcs = fpca.eigenfunctions.columns(0, p).into_owned();
    // eigenfunctions live in the spline span, so this projection is exact
    Ok(least_squares_coeffs(&design, &funcs.transpose())?.transpose())
}

fn retained_eigenvalues_invertible(eigenvalues: &[f64], p: usize) -> Result<()> {
    let lead = eigenvalues[0];
    if eigenvalues.iter().take(p).any(|&e| e <= 1e-12 * lead) {
        return Err(Error::numerical(
            "a retained eigenvalue is numerically zero; the score covariance is singular",
        ));
    }
    Ok(())
}

/// Lag-`h` score autocovariance `(1/(T-h)) sum_{t>h} d_t d_{t-h}^T`.
fn score_autocov(scores: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let t_len = scores.nrows();
    let p = scores.ncols();
    let mut acc = DMatrix::zeros(p, p);
    for t in h..t_len {
        acc += scores.row(t).transpose() * scores.row(t - h);
    }
    acc / (t_len - h) as f64
}

/// Yule-Walker baseline: smooth, run FPCA, keep the components explaining a
/// `tau` share of variance, and invert the moment equations of the stacked
/// order-1 form to obtain the lag coefficient matrices.
pub fn bosq_fit(
    series: &SampledSeries,
    order: usize,
    tau: f64,
    num_basis: usize,
) -> Result<BaselineFit> {
    if order == 0 {
        return Err(Error::invalid("autoregressive order must be at least 1"));
    }
    let smoothed = smooth_bsplines(series, num_basis)?;
    let fpca_result = fpca(&smoothed)?;
    let p = select_p_threshold(&fpca_result.eigenvalues, tau)?;
    retained_eigenvalues_invertible(&fpca_result.eigenvalues, p)?;
    if series.len() <= order {
        return Err(Error::invalid("series too short for the requested order"));
    }

    let scores = fpca_result.scores.columns(0, p).into_owned();
    // Gamma(0) is exactly diagonal in the FPCA scores
    let gamma0 = DMatrix::from_diagonal(&DVector::from_iterator(
        p,
        fpca_result.eigenvalues.iter().take(p).copied(),
    ));
    let gammas: Vec<DMatrix<f64>> = (1..=order).map(|h| score_autocov(&scores, h)).collect();

    // stacked Yule-Walker: [B_1 .. B_D] [Gamma(b-a)]_{a,b} = [Gamma(1) .. Gamma(D)]
    let pd = p * order;
    let mut big = DMatrix::zeros(pd, pd);
    for a in 0..order {
        for b in 0..order {
            let block = if a == b {
                gamma0.clone()
            } else if b > a {
                gammas[b - a - 1].clone()
            } else {
                gammas[a - b - 1].transpose()
            };
            big.view_mut((a * p, b * p), (p, p)).copy_from(&block);
        }
    }
    let mut rhs = DMatrix::zeros(p, pd);
    for (b, g) in gammas.iter().enumerate() {
        rhs.view_mut((0, b * p), (p, p)).copy_from(g);
    }
    // solve B_row * big = rhs  <=>  big^T x = rhs^T
    let lu = big.transpose().lu();
    let solved = lu
        .solve(&rhs.transpose())
        .ok_or_else(|| Error::numerical("stacked Yule-Walker system is singular"))?;
    let b_row = solved.transpose();
    let coeff_matrices: Vec<DMatrix<f64>> =
        (0..order).map(|d| b_row.view((0, d * p), (p, p)).into_owned()).collect();

    let eigen_coeffs =
        eigenfunction_spline_coeffs(&fpca_result, &smoothed.fine_grid, num_basis, p)?;
    Ok(BaselineFit {
        kind: BaselineKind::Bosq,
        p,
        order,
        coeff_matrices,
        fpca: fpca_result,
        num_basis,
        grid: series.grid.clone(),
        eigen_coeffs,
        skipped_candidates: 0,
    })
}

/// FPCA-VAR baseline: smooth, run FPCA, then pick the component count and
/// order jointly by the functional final prediction error criterion and fit
/// the selected VAR by least squares. Ill-conditioned candidates are skipped
/// and counted.
pub fn anh_fit(series: &SampledSeries, d_max: usize, num_basis: usize) -> Result<BaselineFit> {
    if d_max == 0 {
        return Err(Error::invalid("d_max must be at least 1"));
    }
    let smoothed = smooth_bsplines(series, num_basis)?;
    let fpca_result = fpca(&smoothed)?;
    let t_len = series.len();
    let p_max = fpca_result.scores.ncols();

    let mut best: Option<(usize, usize, f64)> = None;
    let mut skipped = 0usize;
    for order in 1..=d_max {
        for p in 1..=p_max {
            if t_len <= p * order + 1 {
                continue;
            }
            match ffpe(&fpca_result.scores, &fpca_result.eigenvalues, p, order) {
                Ok(value) => {
                    if best.is_none_or(|(_, _, b)| value < b) {
                        best = Some((p, order, value));
                    }
                }
                Err(Error::Numerical(_)) => skipped += 1,
                Err(other) => return Err(other),
            }
        }
    }
    let (p, order, _) = best.ok_or_else(|| {
        Error::numerical("every (p, D) candidate failed or was inadmissible")
    })?;

    let leading = fpca_result.scores.columns(0, p).into_owned();
    let (coeff_matrices, _) = var_least_squares(&leading, order)?;
    let eigen_coeffs =
        eigenfunction_spline_coeffs(&fpca_result, &smoothed.fine_grid, num_basis, p)?;
    Ok(BaselineFit {
        kind: BaselineKind::Anh,
        p,
        order,
        coeff_matrices,
        fpca: fpca_result,
        num_basis,
        grid: series.grid.clone(),
        eigen_coeffs,
        skipped_candidates: skipped,
    })
}

/// One-step-ahead prediction on the training grid from the last D observed
/// rows (chronological order): smooth the history, project to scores,
/// propagate through the coefficient matrices, synthesize on the grid.
pub fn baseline_predict(fit: &BaselineFit, history: &DMatrix<f64>) -> Result<DVector<f64>> {
    if history.nrows() != fit.order || history.ncols() != fit.grid.len() {
        return Err(Error::invalid(format!(
            "history must be {}x{} (rows oldest to newest)",
            fit.order,
            fit.grid.len()
        )));
    }
    let scores = history_scores(fit, history)?;
    let mut propagated = DVector::zeros(fit.p);
    for d in 1..=fit.order {
        propagated += &fit.coeff_matrices[d - 1] * scores.row(fit.order - d).transpose();
    }
    let funcs_on_grid = fit.eigenfunctions_at(fit.grid.points());
    Ok(funcs_on_grid * propagated)
}

/// Scores of the history rows under the fit's smoothing and eigenfunctions.
pub fn history_scores(fit: &BaselineFit, history: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let design = bspline_design(fit.grid.points(), fit.num_basis);
    let coeffs = least_squares_coeffs(&design, history)?;
    let m = fit.fpca.eigenfunctions.nrows();
    let fine_design = bspline_design(&uniform_grid(m), fit.num_basis);
    let smooth_vals = coeffs * fine_design.transpose(); // order x m
    let funcs = fit.fpca.eigenfunctions.columns(0, fit.p);
    Ok(&smooth_vals * funcs / m as f64)
}
