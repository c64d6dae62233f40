//! Seeded replication runner: simulate, fit every configured method, predict
//! one step ahead across the test window, and aggregate the error metrics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca;
use crate::kernel::KernelSpec;
use crate::opt::AgmOptions;
use crate::rkhs;
use crate::series::{unit_grid, SampledSeries};
use crate::sim::{self, FarGroundTruth, SimOutput};

use super::config::{ExperimentConfig, Method};

/// Mean squared error over a test-window prediction matrix.
pub fn prediction_error(predictions: &DMatrix<f64>, actuals: &DMatrix<f64>) -> Result<f64> {
    if predictions.shape() != actuals.shape() {
        return Err(Error::invalid(format!(
            "prediction shape {:?} does not match actuals {:?}",
            predictions.shape(),
            actuals.shape()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    Ok((predictions - actuals).norm_squared() / predictions.len() as f64)
}

/// Outcome of one method on one replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    /// Test-window prediction error; absent when the method failed outright.
    pub pe: Option<f64>,
    /// Per-lag MISE against the truth, defined only when the selected order
    /// matches the true order.
    pub mise: Vec<Option<f64>>,
    pub selected_order: Option<usize>,
    pub selected_p: Option<usize>,
    pub selected_lambda: Option<f64>,
    pub solver_iterations: Option<usize>,
    pub solver_converged: Option<bool>,
    /// Set when the method hit a numerical failure, even if it still
    /// produced predictions (e.g. skipped tuning candidates).
    pub failed: bool,
    pub failure: Option<String>,
}

impl MethodRecord {
    fn failed(method: Method, true_order: usize, err: &Error) -> Self {
        MethodRecord {
            method,
            pe: None,
            mise: vec![None; true_order],
            selected_order: None,
            selected_p: None,
            selected_lambda: None,
            solver_iterations: None,
            solver_converged: None,
            failed: true,
            failure: Some(err.to_string()),
        }
    }
}

/// All method outcomes for one seeded replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub oracle_pe: f64,
    pub mean_zero_pe: f64,
    pub methods: Vec<MethodRecord>,
}

/// Per-method aggregate over the replication set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    /// Mean PE over replications that produced one.
    pub pe_avg: Option<f64>,
    /// Mean PE excluding replications flagged as failed.
    pub pe_avg_excl_failed: Option<f64>,
    /// Per-lag mean MISE over replications where it was defined.
    pub mise_avg: Vec<Option<f64>>,
    /// Share (%) of replications selecting the true order, for methods that
    /// select one.
    pub order_correct_pct: Option<f64>,
    pub failures: usize,
}

/// Full experiment outcome: per-replication records plus aggregates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub setting: String,
    pub replications: Vec<ReplicationRecord>,
    pub aggregates: Vec<MethodAggregate>,
    pub oracle_pe_avg: f64,
    pub mean_zero_pe_avg: f64,
    /// Mean of `(PE(anh)/PE(rkhs) - 1) * 100` over replications with both.
    pub r_avg: Option<f64>,
    /// Share (%) of replications where the kernel method beat the FPCA-VAR
    /// baseline.
    pub r_w: Option<f64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Replication seeds are derived by counter so results do not depend on
/// worker scheduling.
fn derive_seed(base: u64, replication: usize, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(2 * replication as u64 + stream))
}

fn predict_window_rkhs(
    est: &rkhs::OperatorEstimate,
    sim: &SimOutput,
    train_len: usize,
) -> Result<DMatrix<f64>> {
    let order = est.order();
    let total = sim.series.len();
    let n = sim.series.grid.len();
    let mut preds = DMatrix::zeros(total - train_len, n);
    for (row, t) in (train_len..total).enumerate() {
        let history = sim.series.values.rows(t - order, order).into_owned();
        preds.row_mut(row).copy_from(&rkhs::predict_next(est, &history)?.transpose());
    }
    Ok(preds)
}

fn predict_window_baseline(
    fit: &fpca::BaselineFit,
    sim: &SimOutput,
    train_len: usize,
) -> Result<DMatrix<f64>> {
    let order = fit.order;
    let total = sim.series.len();
    let n = sim.series.grid.len();
    let mut preds = DMatrix::zeros(total - train_len, n);
    for (row, t) in (train_len..total).enumerate() {
        let history = sim.series.values.rows(t - order, order).into_owned();
        preds.row_mut(row).copy_from(&fpca::baseline_predict(fit, &history)?.transpose());
    }
    Ok(preds)
}

fn rkhs_record(
    config: &ExperimentConfig,
    sim: &SimOutput,
    truth: &FarGroundTruth,
    train: &SampledSeries,
    actuals: &DMatrix<f64>,
) -> Result<MethodRecord> {
    let tuning = &config.tuning;
    let lambda_grid = match &tuning.lambda_grid {
        Some(grid) => grid.clone(),
        None => rkhs::default_lambda_grid(train, tuning.d_max)?,
    };
    let cv_options = rkhs::CvOptions {
        folds: tuning.folds,
        agm: AgmOptions { max_iter: tuning.cv_max_iter, ..AgmOptions::default() },
    };
    let choice =
        rkhs::cross_validate(train, tuning.d_max, &lambda_grid, KernelSpec::default(), &cv_options)?;
    let est = rkhs::fit_ls_init(
        train,
        choice.order,
        &choice.lambdas,
        KernelSpec::default(),
        &AgmOptions { max_iter: 20_000, ..AgmOptions::default() },
    )?;
    let preds = predict_window_rkhs(&est, sim, config.t_len)?;
    let pe = prediction_error(&preds, actuals)?;

    let true_order = config.true_order();
    let mut mise = vec![None; true_order];
    if choice.order == true_order {
        for d in 1..=true_order {
            mise[d - 1] = Some(rkhs::mise(&est, truth, d, rkhs::DEFAULT_MISE_GRID)?);
        }
    }
    Ok(MethodRecord {
        method: Method::Rkhs,
        pe: Some(pe),
        mise,
        selected_order: Some(choice.order),
        selected_p: None,
        selected_lambda: Some(choice.lambdas[0]),
        solver_iterations: Some(est.report.iterations),
        solver_converged: Some(est.report.converged),
        failed: false,
        failure: None,
    })
}

fn baseline_mise(
    fit: &fpca::BaselineFit,
    truth: &FarGroundTruth,
    true_order: usize,
) -> Result<Vec<Option<f64>>> {
    let mut mise = vec![None; true_order];
    if fit.order == true_order {
        let pts = unit_grid(rkhs::DEFAULT_MISE_GRID);
        for d in 1..=true_order {
            let surface = fit.operator_surface(d, &pts)?;
            mise[d - 1] = Some(rkhs::mise_surface(&surface, truth, d)?);
        }
    }
    Ok(mise)
}

fn anh_record(
    config: &ExperimentConfig,
    sim: &SimOutput,
    truth: &FarGroundTruth,
    train: &SampledSeries,
    actuals: &DMatrix<f64>,
) -> Result<MethodRecord> {
    let fit = fpca::anh_fit(train, config.tuning.d_max, config.anh_num_basis)?;
    let preds = predict_window_baseline(&fit, sim, config.t_len)?;
    let pe = prediction_error(&preds, actuals)?;
    let mise = baseline_mise(&fit, truth, config.true_order())?;
    Ok(MethodRecord {
        method: Method::Anh,
        pe: Some(pe),
        mise,
        selected_order: Some(fit.order),
        selected_p: Some(fit.p),
        selected_lambda: None,
        solver_iterations: None,
        solver_converged: None,
        failed: fit.skipped_candidates > 0,
        failure: (fit.skipped_candidates > 0)
            .then(|| format!("{} tuning candidates skipped", fit.skipped_candidates)),
    })
}

fn bosq_record(
    config: &ExperimentConfig,
    sim: &SimOutput,
    truth: &FarGroundTruth,
    train: &SampledSeries,
    actuals: &DMatrix<f64>,
) -> Result<MethodRecord> {
    let fit = fpca::bosq_fit(train, config.tuning.d_max, config.bosq_tau, config.bosq_num_basis)?;
    let preds = predict_window_baseline(&fit, sim, config.t_len)?;
    let pe = prediction_error(&preds, actuals)?;
    let mise = baseline_mise(&fit, truth, config.true_order())?;
    Ok(MethodRecord {
        method: Method::Bosq,
        pe: Some(pe),
        mise,
        selected_order: Some(fit.order),
        selected_p: Some(fit.p),
        selected_lambda: None,
        solver_iterations: None,
        solver_converged: None,
        failed: false,
        failure: None,
    })
}

fn naive_record(
    config: &ExperimentConfig,
    sim: &SimOutput,
    actuals: &DMatrix<f64>,
) -> Result<MethodRecord> {
    let total = sim.series.len();
    let n = sim.series.grid.len();
    let mut preds = DMatrix::zeros(total - config.t_len, n);
    for (row, t) in (config.t_len..total).enumerate() {
        preds.row_mut(row).copy_from(&sim.series.values.row(t - 1));
    }
    let pe = prediction_error(&preds, actuals)?;
    Ok(MethodRecord {
        method: Method::Naive,
        pe: Some(pe),
        mise: vec![None; config.true_order()],
        selected_order: None,
        selected_p: None,
        selected_lambda: None,
        solver_iterations: None,
        solver_converged: None,
        failed: false,
        failure: None,
    })
}

fn mean_zero_record(config: &ExperimentConfig, actuals: &DMatrix<f64>) -> Result<MethodRecord> {
    let zeros = DMatrix::zeros(actuals.nrows(), actuals.ncols());
    let pe = prediction_error(&zeros, actuals)?;
    Ok(MethodRecord {
        method: Method::MeanZero,
        pe: Some(pe),
        mise: vec![None; config.true_order()],
        selected_order: None,
        selected_p: None,
        selected_lambda: None,
        solver_iterations: None,
        solver_converged: None,
        failed: false,
        failure: None,
    })
}

fn run_replication(config: &ExperimentConfig, replication: usize) -> Result<ReplicationRecord> {
    let truth_seed = derive_seed(config.seed, replication, 0);
    let sim_seed = derive_seed(config.seed, replication, 1);
    let truth = sim::make_scenario(config.scenario, config.q, &config.kappas, truth_seed)?;
    let total = config.t_len + config.test_len();
    let sim = sim::simulate(&truth, total, config.n, config.grid_kind, config.burn_in, sim_seed)?;

    let train = sim.series.slice_rows(0, config.t_len);
    let actuals = sim
        .series
        .values
        .rows(config.t_len, total - config.t_len)
        .into_owned();

    // oracle: exact conditional mean from the true scores
    let true_order = config.true_order();
    let mut oracle_preds = DMatrix::zeros(total - config.t_len, config.n);
    for (row, t) in (config.t_len..total).enumerate() {
        let history = sim.scores.rows(t - true_order, true_order).into_owned();
        let pred = sim::oracle_predict(&truth, &history, &sim.series.grid)?;
        oracle_preds.row_mut(row).copy_from(&pred.transpose());
    }
    let oracle_pe = prediction_error(&oracle_preds, &actuals)?;
    let mean_zero_pe =
        prediction_error(&DMatrix::zeros(actuals.nrows(), actuals.ncols()), &actuals)?;

    let mut methods = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let record = match method {
            Method::Rkhs => rkhs_record(config, &sim, &truth, &train, &actuals),
            Method::Anh => anh_record(config, &sim, &truth, &train, &actuals),
            Method::Bosq => bosq_record(config, &sim, &truth, &train, &actuals),
            Method::Naive => naive_record(config, &sim, &actuals),
            Method::MeanZero => mean_zero_record(config, &actuals),
        };
        methods.push(record.unwrap_or_else(|e| MethodRecord::failed(method, true_order, &e)));
    }

    Ok(ReplicationRecord { replication, oracle_pe, mean_zero_pe, methods })
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn aggregate(config: &ExperimentConfig, records: &[ReplicationRecord]) -> Vec<MethodAggregate> {
    let true_order = config.true_order();
    config
        .methods
        .iter()
        .map(|&method| {
            let rows: Vec<&MethodRecord> = records
                .iter()
                .flat_map(|r| r.methods.iter().filter(|m| m.method == method))
                .collect();
            let pes: Vec<f64> = rows.iter().filter_map(|m| m.pe).collect();
            let pes_ok: Vec<f64> =
                rows.iter().filter(|m| !m.failed).filter_map(|m| m.pe).collect();
            let mise_avg = (0..true_order)
                .map(|d| {
                    let vals: Vec<f64> =
                        rows.iter().filter_map(|m| m.mise.get(d).copied().flatten()).collect();
                    mean(&vals)
                })
                .collect();
            let selections: Vec<usize> =
                rows.iter().filter_map(|m| m.selected_order).collect();
            let order_correct_pct = if matches!(method, Method::Rkhs | Method::Anh)
                && !selections.is_empty()
            {
                let correct = selections.iter().filter(|&&d| d == true_order).count();
                Some(100.0 * correct as f64 / selections.len() as f64)
            } else {
                None
            };
            MethodAggregate {
                method,
                pe_avg: mean(&pes),
                pe_avg_excl_failed: mean(&pes_ok),
                mise_avg,
                order_correct_pct,
                failures: rows.iter().filter(|m| m.failed).count(),
            }
        })
        .collect()
}

fn pe_of(record: &ReplicationRecord, method: Method) -> Option<f64> {
    record.methods.iter().find(|m| m.method == method).and_then(|m| m.pe)
}

/// Runs every replication of the configured experiment (in parallel when a
/// rayon pool is active; seeds are derived by counter so the outcome is
/// identical for any worker count).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mut records = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, rep))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.replication);

    let aggregates = aggregate(config, &records);
    let oracle_pe_avg =
        records.iter().map(|r| r.oracle_pe).sum::<f64>() / records.len() as f64;
    let mean_zero_pe_avg =
        records.iter().map(|r| r.mean_zero_pe).sum::<f64>() / records.len() as f64;

    let mut ratios = Vec::new();
    let mut wins = 0usize;
    let mut pairs = 0usize;
    for record in &records {
        if let (Some(pe_rkhs), Some(pe_anh)) =
            (pe_of(record, Method::Rkhs), pe_of(record, Method::Anh))
        {
            ratios.push((pe_anh / pe_rkhs - 1.0) * 100.0);
            pairs += 1;
            if pe_rkhs < pe_anh {
                wins += 1;
            }
        }
    }
    let r_avg = mean(&ratios);
    let r_w = (pairs > 0).then(|| 100.0 * wins as f64 / pairs as f64);

    Ok(ExperimentResult {
        setting: config.setting_label(),
        config: config.clone(),
        replications: records,
        aggregates,
        oracle_pe_avg,
        mean_zero_pe_avg,
        r_avg,
        r_w,
    })
}
