//! Train/test forecast evaluation: fit once, roll one-step-ahead predictions
//! through the test window using actual lagged observations, and score each
//! day by RMSE and MAE over the grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca;
use crate::kernel::KernelSpec;
use crate::opt::AgmOptions;
use crate::rkhs;
use crate::series::SampledSeries;

use super::config::Method;

/// Options for [`forecast_eval`].
#[derive(Clone, Debug)]
pub struct ForecastOptions {
    pub methods: Vec<Method>,
    pub d_max: usize,
    pub folds: usize,
    pub lambda_grid: Option<Vec<f64>>,
    pub cv_max_iter: usize,
    pub bosq_num_basis: usize,
    pub anh_num_basis: usize,
    pub bosq_tau: f64,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            methods: vec![Method::Rkhs, Method::Anh, Method::Bosq, Method::Naive],
            d_max: 1,
            folds: 5,
            lambda_grid: None,
            cv_max_iter: 2000,
            bosq_num_basis: 10,
            anh_num_basis: 10,
            bosq_tau: 0.8,
        }
    }
}

/// Per-step errors over the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepError {
    pub rmse: f64,
    pub mae: f64,
}

/// One method's forecast record across the test window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodForecast {
    pub method: Method,
    pub per_step: Vec<StepError>,
    pub mean_rmse: Option<f64>,
    pub mean_mae: Option<f64>,
    pub failed: bool,
    pub failure: Option<String>,
}

/// Result of [`forecast_eval`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForecastEval {
    pub methods: Vec<MethodForecast>,
    /// Share (%) of test steps where the kernel method has the strictly
    /// smallest RMSE / MAE among the evaluated methods.
    pub rkhs_win_rmse_pct: Option<f64>,
    pub rkhs_win_mae_pct: Option<f64>,
}

enum FittedMethod {
    Rkhs(rkhs::OperatorEstimate),
    Baseline(fpca::BaselineFit),
    Naive,
    MeanZero,
}

impl FittedMethod {
    fn order(&self) -> usize {
        match self {
            FittedMethod::Rkhs(est) => est.order(),
            FittedMethod::Baseline(fit) => fit.order,
            FittedMethod::Naive | FittedMethod::MeanZero => 1,
        }
    }

    fn predict(&self, history: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            FittedMethod::Rkhs(est) => rkhs::predict_next(est, history),
            FittedMethod::Baseline(fit) => fpca::baseline_predict(fit, history),
            FittedMethod::Naive => Ok(history.row(history.nrows() - 1).transpose()),
            FittedMethod::MeanZero => Ok(DVector::zeros(history.ncols())),
        }
    }
}

fn fit_method(
    method: Method,
    train: &SampledSeries,
    options: &ForecastOptions,
) -> Result<FittedMethod> {
    match method {
        Method::Rkhs => {
            let grid = match &options.lambda_grid {
                Some(g) => g.clone(),
                None => rkhs::default_lambda_grid(train, options.d_max)?,
            };
            let cv = rkhs::CvOptions {
                folds: options.folds,
                agm: AgmOptions { max_iter: options.cv_max_iter, ..AgmOptions::default() },
            };
            let choice =
                rkhs::cross_validate(train, options.d_max, &grid, KernelSpec::default(), &cv)?;
            let est = rkhs::fit_ls_init(
                train,
                choice.order,
                &choice.lambdas,
                KernelSpec::default(),
                &AgmOptions { max_iter: 20_000, ..AgmOptions::default() },
            )?;
            Ok(FittedMethod::Rkhs(est))
        }
        Method::Anh => Ok(FittedMethod::Baseline(fpca::anh_fit(
            train,
            options.d_max,
            options.anh_num_basis,
        )?)),
        Method::Bosq => Ok(FittedMethod::Baseline(fpca::bosq_fit(
            train,
            options.d_max,
            options.bosq_tau,
            options.bosq_num_basis,
        )?)),
        Method::Naive => Ok(FittedMethod::Naive),
        Method::MeanZero => Ok(FittedMethod::MeanZero),
    }
}

/// Fits every method on `train` once, then walks the test window predicting
/// each step from the actual preceding observations.
pub fn forecast_eval(
    train: &SampledSeries,
    test: &SampledSeries,
    options: &ForecastOptions,
) -> Result<ForecastEval> {
    if train.grid.points() != test.grid.points() {
        return Err(Error::invalid("train and test grids differ"));
    }
    if test.is_empty() {
        return Err(Error::invalid("test series is empty"));
    }
    if options.methods.is_empty() {
        return Err(Error::invalid("at least one method is required"));
    }
    let n = train.grid.len();
    let t_train = train.len();
    let t_test = test.len();

    // stacked values so histories can reach across the split
    let mut full = DMatrix::zeros(t_train + t_test, n);
    full.rows_mut(0, t_train).copy_from(&train.values);
    full.rows_mut(t_train, t_test).copy_from(&test.values);

    let mut forecasts = Vec::with_capacity(options.methods.len());
    for &method in &options.methods {
        let record = match fit_method(method, train, options) {
            Ok(fitted) => {
                let order = fitted.order();
                let mut per_step = Vec::with_capacity(t_test);
                let mut failure = None;
                for idx in 0..t_test {
                    let t = t_train + idx;
                    let history = full.rows(t - order, order).into_owned();
                    match fitted.predict(&history) {
                        Ok(pred) => {
                            let actual = test.values.row(idx).transpose();
                            let err = &pred - &actual;
                            let rmse = (err.norm_squared() / n as f64).sqrt();
                            let mae = err.iter().map(|e| e.abs()).sum::<f64>() / n as f64;
                            per_step.push(StepError { rmse, mae });
                        }
                        Err(e) => {
                            failure = Some(e.to_string());
                            break;
                        }
                    }
                }
                let complete = per_step.len() == t_test;
                MethodForecast {
                    method,
                    mean_rmse: complete
                        .then(|| per_step.iter().map(|s| s.rmse).sum::<f64>() / t_test as f64),
                    mean_mae: complete
                        .then(|| per_step.iter().map(|s| s.mae).sum::<f64>() / t_test as f64),
                    per_step,
                    failed: !complete,
                    failure,
                }
            }
            Err(e) => MethodForecast {
                method,
                per_step: Vec::new(),
                mean_rmse: None,
                mean_mae: None,
                failed: true,
                failure: Some(e.to_string()),
            },
        };
        forecasts.push(record);
    }

    let (win_rmse, win_mae) = rkhs_win_shares(&forecasts, t_test);
    Ok(ForecastEval {
        methods: forecasts,
        rkhs_win_rmse_pct: win_rmse,
        rkhs_win_mae_pct: win_mae,
    })
}

fn rkhs_win_shares(
    forecasts: &[MethodForecast],
    t_test: usize,
) -> (Option<f64>, Option<f64>) {
    let complete: Vec<&MethodForecast> = forecasts.iter().filter(|m| !m.failed).collect();
    let has_rkhs = complete.iter().any(|m| m.method == Method::Rkhs);
    if !has_rkhs || complete.len() < 2 {
        return (None, None);
    }
    let mut rmse_wins = 0usize;
    let mut mae_wins = 0usize;
    for step in 0..t_test {
        let rkhs_step = complete
            .iter()
            .find(|m| m.method == Method::Rkhs)
            .map(|m| &m.per_step[step])
            .expect("rkhs present");
        let others: Vec<&StepError> = complete
            .iter()
            .filter(|m| m.method != Method::Rkhs)
            .map(|m| &m.per_step[step])
            .collect();
        if others.iter().all(|o| rkhs_step.rmse < o.rmse) {
            rmse_wins += 1;
        }
        if others.iter().all(|o| rkhs_step.mae < o.mae) {
            mae_wins += 1;
        }
    }
    (
        Some(100.0 * rmse_wins as f64 / t_test as f64),
        Some(100.0 * mae_wins as f64 / t_test as f64),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Grid;
    use approx::assert_relative_eq;

    #[test]
    fn naive_on_constant_series_is_exact() {
        let grid = Grid::midpoint(6).unwrap();
        let values = DMatrix::from_element(20, 6, 1.5);
        let series = SampledSeries::new(grid, values).unwrap();
        let train = series.slice_rows(0, 15);
        let test = series.slice_rows(15, 20);
        let options =
            ForecastOptions { methods: vec![Method::Naive], ..ForecastOptions::default() };
        let eval = forecast_eval(&train, &test, &options).unwrap();
        let naive = &eval.methods[0];
        assert!(!naive.failed);
        for step in &naive.per_step {
            assert_eq!(step.rmse, 0.0);
            assert_eq!(step.mae, 0.0);
        }
        assert_eq!(naive.mean_rmse, Some(0.0));
        // win shares undefined with a single method
        assert!(eval.rkhs_win_rmse_pct.is_none());
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = SampledSeries::new(Grid::midpoint(6).unwrap(), DMatrix::zeros(5, 6)).unwrap();
        let b = SampledSeries::new(Grid::midpoint(7).unwrap(), DMatrix::zeros(5, 7)).unwrap();
        assert!(forecast_eval(&a, &b, &ForecastOptions::default()).is_err());
    }

    #[test]
    fn empty_test_rejected() {
        let grid = Grid::midpoint(6).unwrap();
        let series = SampledSeries::new(grid, DMatrix::from_element(10, 6, 1.0)).unwrap();
        let empty = series.slice_rows(0, 0);
        assert!(forecast_eval(&series, &empty, &ForecastOptions::default()).is_err());
    }

    #[test]
    fn mean_zero_errors_match_data_norms() {
        let grid = Grid::midpoint(4).unwrap();
        let values = DMatrix::from_row_slice(
            6,
            4,
            &[
                1.0, 1.0, 1.0, 1.0, //
                2.0, 2.0, 2.0, 2.0, //
                1.0, 1.0, 1.0, 1.0, //
                2.0, 0.0, 2.0, 0.0, //
                1.0, -1.0, 1.0, -1.0, //
                0.5, 0.5, 0.5, 0.5,
            ],
        );
        let series = SampledSeries::new(grid, values).unwrap();
        let train = series.slice_rows(0, 3);
        let test = series.slice_rows(3, 6);
        let options =
            ForecastOptions { methods: vec![Method::MeanZero], ..ForecastOptions::default() };
        let eval = forecast_eval(&train, &test, &options).unwrap();
        let steps = &eval.methods[0].per_step;
        assert_relative_eq!(steps[0].rmse, 2.0f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(steps[0].mae, 1.0, epsilon = 1e-12);
        assert_relative_eq!(steps[1].rmse, 1.0, epsilon = 1e-12);
        assert_relative_eq!(steps[2].rmse, 0.5, epsilon = 1e-12);
    }
}
