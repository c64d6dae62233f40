//! Benchmark and forecasting CLI for functional autoregressive estimation.
//!
//! Subcommands: `simulate` (scenario -> series CSV), `fit` (series -> model
//! file + diagnostics), `predict` (model + series -> next curve), `bench`
//! (config-driven replication study), `forecast-eval` (train/test one-step
//! evaluation). Exit codes: 0 success, 1 input error, 2 numerical failure,
//! 3 i/o error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use far_core::bench::{
    self, emit_plot_points, emit_results, forecast_eval, load_model, parse_config,
    run_experiment, save_model, EmitFormat, FittedModel, ForecastOptions, Method,
};
use far_core::error::Error;
use far_core::fpca;
use far_core::kernel::KernelSpec;
use far_core::opt::AgmOptions;
use far_core::rkhs;
use far_core::series::{difference, load_csv, save_csv, GridKind, SampledSeries};
use far_core::sim::{make_scenario, simulate, Scenario, DEFAULT_BURN_IN};

#[derive(Parser)]
#[command(name = "farbench", version, about = "Functional autoregressive estimation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the sampled series as CSV.
    Simulate(SimulateArgs),
    /// Fit one method to a series CSV and write a model file.
    Fit(FitArgs),
    /// One-step-ahead prediction from a fitted model file.
    Predict(PredictArgs),
    /// Run a configuration-driven replication experiment.
    Bench(BenchArgs),
    /// Train/test one-step forecast evaluation on a series CSV.
    ForecastEval(ForecastArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario name: A, B, Ca or Cb.
    #[arg(long)]
    scenario: String,
    /// Basis dimension of the ground truth.
    #[arg(long)]
    q: usize,
    /// Comma-separated signal strengths, one per lag.
    #[arg(long, value_delimiter = ',')]
    kappas: Vec<f64>,
    /// Sampling points per curve.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Number of time steps to keep.
    #[arg(long = "t-len", alias = "T")]
    t_len: usize,
    /// Sampling grid: midpoint or random.
    #[arg(long, default_value = "midpoint")]
    grid: String,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Input series CSV.
    #[arg(long)]
    input: PathBuf,
    /// Method: rkhs, anh or bosq.
    #[arg(long)]
    method: String,
    /// Largest candidate autoregressive order.
    #[arg(long, default_value_t = 1)]
    d_max: usize,
    /// Fixed penalty for the kernel method (skips cross-validation).
    #[arg(long)]
    lambda: Option<f64>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// B-spline basis size for the FPCA baselines.
    #[arg(long, default_value_t = 10)]
    num_basis: usize,
    /// Explained-variance threshold for the Yule-Walker baseline.
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    /// Where to write the fitted model (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model file from `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Series CSV whose last D rows form the prediction history.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV (one row on the model grid).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment configuration file (flat key = value format).
    #[arg(long)]
    config: PathBuf,
    /// Override the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = automatic).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Result path; the plot-point CSV lands next to it.
    #[arg(long, default_value = "benchmark_results.json")]
    out: PathBuf,
    /// Output format: json or csv.
    #[arg(long, default_value = "json")]
    format: String,
    /// Display PE in the summary multiplied by 100 (stored values stay raw).
    #[arg(long)]
    scale_pe_100: bool,
}

#[derive(Args)]
struct ForecastArgs {
    /// Input series CSV.
    #[arg(long)]
    input: PathBuf,
    /// Training prefix length; the rest is the test window.
    #[arg(long)]
    train_len: Option<usize>,
    /// Fraction of steps held out when --train-len is absent.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Apply first-order differencing before the split.
    #[arg(long)]
    difference: bool,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "rkhs,anh,bosq,naive")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 1)]
    d_max: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    num_basis: usize,
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    /// Output path for the per-step table.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: json or csv.
    #[arg(long, default_value = "json")]
    format: String,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Bench(args) => cmd_bench(args),
        Command::ForecastEval(args) => cmd_forecast(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn cmd_simulate(args: SimulateArgs) -> far_core::Result<()> {
    let scenario: Scenario = args.scenario.parse()?;
    let grid_kind = parse_grid(&args.grid)?;
    let truth = make_scenario(scenario, args.q, &args.kappas, args.seed)?;
    let out = simulate(&truth, args.t_len, args.n, grid_kind, args.burn_in, args.seed)?;
    save_csv(&out.series, &args.out)?;
    println!(
        "wrote {} steps on {} grid points to {}",
        out.series.len(),
        out.series.grid.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_grid(name: &str) -> far_core::Result<GridKind> {
    match name {
        "midpoint" => Ok(GridKind::MidpointEquispaced),
        "random" => Ok(GridKind::UniformRandom),
        other => Err(Error::invalid(format!("unknown grid kind {other:?}"))),
    }
}

fn cmd_fit(args: FitArgs) -> far_core::Result<()> {
    let series = load_csv(&args.input)?;
    let (model, diagnostics) = match args.method.as_str() {
        "rkhs" => fit_rkhs(&series, &args)?,
        "anh" => {
            let fit = fpca::anh_fit(&series, args.d_max, args.num_basis)?;
            let diag = serde_json::json!({
                "method": "anh",
                "order": fit.order,
                "num_components": fit.p,
                "skipped_candidates": fit.skipped_candidates,
            });
            (FittedModel::Baseline(fit), diag)
        }
        "bosq" => {
            let fit = fpca::bosq_fit(&series, args.d_max, args.tau, args.num_basis)?;
            let diag = serde_json::json!({
                "method": "bosq",
                "order": fit.order,
                "num_components": fit.p,
            });
            (FittedModel::Baseline(fit), diag)
        }
        other => return Err(Error::invalid(format!("unknown method {other:?}"))),
    };
    save_model(&model, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&diagnostics).unwrap());
    Ok(())
}

fn fit_rkhs(
    series: &SampledSeries,
    args: &FitArgs,
) -> far_core::Result<(FittedModel, serde_json::Value)> {
    let kernel = KernelSpec::default();
    let (order, lambdas) = match args.lambda {
        Some(lambda) => (args.d_max, vec![lambda; args.d_max]),
        None => {
            let grid = rkhs::default_lambda_grid(series, args.d_max)?;
            let cv = rkhs::CvOptions {
                folds: args.folds,
                agm: AgmOptions { max_iter: 2000, ..AgmOptions::default() },
            };
            let choice = rkhs::cross_validate(series, args.d_max, &grid, kernel, &cv)?;
            (choice.order, choice.lambdas)
        }
    };
    let est = rkhs::fit_ls_init(
        series,
        order,
        &lambdas,
        kernel,
        &AgmOptions { max_iter: 20_000, ..AgmOptions::default() },
    )?;
    let nuclear = rkhs::total_operator_nuclear_norm(&est)?;
    let diag = serde_json::json!({
        "method": "rkhs",
        "order": est.order(),
        "lambda": est.lambdas[0],
        "iterations": est.report.iterations,
        "converged": est.report.converged,
        "final_objective": est.report.final_objective,
        "total_operator_nuclear_norm": nuclear,
    });
    Ok((FittedModel::Rkhs(est), diag))
}

fn cmd_predict(args: PredictArgs) -> far_core::Result<()> {
    let model = load_model(&args.model)?;
    let series = load_csv(&args.input)?;
    if series.grid.points() != model.grid().points() {
        return Err(Error::invalid(
            "series grid does not match the grid the model was fitted on",
        ));
    }
    let order = model.order();
    if series.len() < order {
        return Err(Error::invalid(format!(
            "need at least {order} rows of history, got {}",
            series.len()
        )));
    }
    let history = series.values.rows(series.len() - order, order).into_owned();
    let pred = model.predict_next(&history)?;
    let row = nalgebra::DMatrix::from_fn(1, pred.len(), |_, i| pred[i]);
    let out_series = SampledSeries::new(model.grid().clone(), row)?;
    save_csv(&out_series, &args.out)?;
    println!("wrote one-step prediction to {}", args.out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> far_core::Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let format: EmitFormat = args.format.parse()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Error::numerical(format!("cannot build thread pool: {e}")))?;
    let result = pool.install(|| run_experiment(&config))?;

    emit_results(&result, format, &args.out)?;
    let plot_path = plot_points_path(&args.out);
    emit_plot_points(&result, &plot_path)?;

    let scale = if args.scale_pe_100 { 100.0 } else { 1.0 };
    println!("setting {}", result.setting);
    println!(
        "oracle PE {:.4}   mean-zero PE {:.4}",
        scale * result.oracle_pe_avg,
        scale * result.mean_zero_pe_avg
    );
    for agg in &result.aggregates {
        let pe = agg.pe_avg.map(|v| format!("{:.4}", scale * v)).unwrap_or_else(|| "-".into());
        let mise = agg.mise_avg[0].map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>10}  PE {}  MISE_1 {}  failures {}",
            agg.method.to_string(),
            pe,
            mise,
            agg.failures
        );
    }
    if let (Some(r_avg), Some(r_w)) = (result.r_avg, result.r_w) {
        println!("R_avg {r_avg:.2}%   R_w {r_w:.1}%");
    }
    println!("results: {}   plot points: {}", args.out.display(), plot_path.display());
    Ok(())
}

fn plot_points_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    out.with_file_name(format!("{stem}_pe_points.csv"))
}

fn cmd_forecast(args: ForecastArgs) -> far_core::Result<()> {
    let raw = load_csv(&args.input)?;
    let series = if args.difference { difference(&raw)? } else { raw };
    let t_len = series.len();
    let train_len = match args.train_len {
        Some(len) => len,
        None => {
            if !(args.test_fraction > 0.0 && args.test_fraction < 1.0) {
                return Err(Error::invalid("test fraction must lie in (0,1)"));
            }
            t_len - ((t_len as f64 * args.test_fraction).round() as usize).clamp(1, t_len - 1)
        }
    };
    if train_len == 0 || train_len >= t_len {
        return Err(Error::invalid(format!(
            "train length {train_len} does not leave a non-empty test window of {t_len} steps"
        )));
    }
    let train = series.slice_rows(0, train_len);
    let test = series.slice_rows(train_len, t_len);

    let methods = args
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<far_core::Result<Vec<Method>>>()?;
    let options = ForecastOptions {
        methods,
        d_max: args.d_max,
        folds: args.folds,
        bosq_num_basis: args.num_basis,
        anh_num_basis: args.num_basis,
        bosq_tau: args.tau,
        ..ForecastOptions::default()
    };
    let eval = forecast_eval(&train, &test, &options)?;

    for m in &eval.methods {
        match (m.mean_rmse, m.mean_mae) {
            (Some(rmse), Some(mae)) => {
                println!("{:>10}  mean RMSE {rmse:.4}  mean MAE {mae:.4}", m.method.to_string())
            }
            _ => println!(
                "{:>10}  failed: {}",
                m.method.to_string(),
                m.failure.as_deref().unwrap_or("unknown")
            ),
        }
    }
    if let (Some(wr), Some(wm)) = (eval.rkhs_win_rmse_pct, eval.rkhs_win_mae_pct) {
        println!("rkhs wins: RMSE {wr:.1}% of days, MAE {wm:.1}% of days");
    }

    if let Some(out) = &args.out {
        let format: EmitFormat = args.format.parse()?;
        write_forecast(&eval, format, out)?;
        println!("per-step table: {}", out.display());
    }
    Ok(())
}

fn write_forecast(
    eval: &bench::ForecastEval,
    format: EmitFormat,
    path: &Path,
) -> far_core::Result<()> {
    match format {
        EmitFormat::Json => {
            let text = serde_json::to_string_pretty(eval).unwrap();
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
        EmitFormat::Csv => {
            let mut rows = String::from("step,method,rmse,mae\n");
            for m in &eval.methods {
                for (i, step) in m.per_step.iter().enumerate() {
                    rows.push_str(&format!(
                        "{},{},{:.16e},{:.16e}\n",
                        i + 1,
                        m.method,
                        step.rmse,
                        step.mae
                    ));
                }
            }
            std::fs::write(path, rows).map_err(|e| Error::io(path, e))
        }
    }
}
