//! End-to-end checks of the `farbench` binary: subcommand round trips,
//! determinism across thread counts, and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_farbench"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn farbench");
    assert!(
        out.status.success(),
        "command failed: {}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn farbench").status.code().unwrap_or(-1)
}

#[test]
fn simulate_fit_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    let model = dir.path().join("model.json");
    let pred = dir.path().join("pred.csv");

    run_ok(bin().args([
        "simulate",
        "--scenario",
        "A",
        "--q",
        "4",
        "--kappas",
        "0.5",
        "--n",
        "12",
        "--t-len",
        "40",
        "--seed",
        "3",
        "--out",
        series.to_str().unwrap(),
    ]));
    assert!(series.exists());
    let lines = std::fs::read_to_string(&series).unwrap().lines().count();
    assert_eq!(lines, 41); // header + 40 steps

    let diag = run_ok(bin().args([
        "fit",
        "--input",
        series.to_str().unwrap(),
        "--method",
        "rkhs",
        "--lambda",
        "0.01",
        "--out",
        model.to_str().unwrap(),
    ]));
    assert!(diag.contains("\"method\": \"rkhs\""));
    assert!(model.exists());

    run_ok(bin().args([
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        series.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]));
    let pred_text = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(pred_text.lines().count(), 2); // header + one prediction row
}

#[test]
fn fit_baselines_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    run_ok(bin().args([
        "simulate",
        "--scenario",
        "B",
        "--q",
        "3",
        "--kappas",
        "0.5",
        "--n",
        "16",
        "--t-len",
        "60",
        "--seed",
        "9",
        "--out",
        series.to_str().unwrap(),
    ]));
    for method in ["anh", "bosq"] {
        let model = dir.path().join(format!("{method}.json"));
        let diag = run_ok(bin().args([
            "fit",
            "--input",
            series.to_str().unwrap(),
            "--method",
            method,
            "--num-basis",
            "6",
            "--out",
            model.to_str().unwrap(),
        ]));
        assert!(diag.contains(&format!("\"method\": \"{method}\"")));
        let pred = dir.path().join(format!("{method}_pred.csv"));
        run_ok(bin().args([
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--input",
            series.to_str().unwrap(),
            "--out",
            pred.to_str().unwrap(),
        ]));
        assert!(pred.exists());
    }
}

fn write_config(path: &Path) {
    std::fs::write(
        path,
        "scenario = A\nq = 3\nn = 8\nT = 30\nkappas = 0.5\nreplications = 2\nseed = 17\nmethods = rkhs,naive,mean_zero\nd_max = 1\ncv_max_iter = 300\n",
    )
    .unwrap();
}

#[test]
fn bench_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.txt");
    write_config(&config);

    let out1 = dir.path().join("r1.json");
    let out2 = dir.path().join("r2.json");
    run_ok(bin().args([
        "bench",
        "--config",
        config.to_str().unwrap(),
        "--threads",
        "1",
        "--out",
        out1.to_str().unwrap(),
    ]));
    run_ok(bin().args([
        "bench",
        "--config",
        config.to_str().unwrap(),
        "--threads",
        "4",
        "--out",
        out2.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap(),
        "results differ across thread counts"
    );
    assert!(dir.path().join("r1_pe_points.csv").exists());
}

#[test]
fn bench_csv_schema_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.txt");
    write_config(&config);
    let out = dir.path().join("rows.csv");
    let stdout = run_ok(bin().args([
        "bench",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "99",
        "--format",
        "csv",
        "--scale-pe-100",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(stdout.contains("mean-zero"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("setting,replication,method,D_sel,p_sel,lambda_sel,mise_1,pe,failed"));
    assert_eq!(text.lines().count(), 1 + 2 * 3); // header + reps x methods
}

#[test]
fn forecast_eval_runs_with_difference() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    run_ok(bin().args([
        "simulate",
        "--scenario",
        "A",
        "--q",
        "3",
        "--kappas",
        "0.6",
        "--n",
        "10",
        "--t-len",
        "50",
        "--seed",
        "5",
        "--out",
        series.to_str().unwrap(),
    ]));
    let out = dir.path().join("eval.json");
    let stdout = run_ok(bin().args([
        "forecast-eval",
        "--input",
        series.to_str().unwrap(),
        "--train-len",
        "40",
        "--difference",
        "--methods",
        "naive,mean_zero",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(stdout.contains("mean RMSE"));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // differenced series of 50 steps splits into 40 train + 9 test
    assert_eq!(parsed["methods"][0]["per_step"].as_array().unwrap().len(), 9);
}

#[test]
fn exit_codes_match_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    // input error -> 1
    assert_eq!(
        exit_code(bin().args([
            "simulate",
            "--scenario",
            "Z",
            "--q",
            "3",
            "--kappas",
            "0.5",
            "--t-len",
            "10",
            "--out",
            dir.path().join("x.csv").to_str().unwrap(),
        ])),
        1
    );
    // i/o error -> 3
    assert_eq!(
        exit_code(bin().args([
            "fit",
            "--input",
            "/nonexistent/series.csv",
            "--method",
            "rkhs",
            "--out",
            dir.path().join("m.json").to_str().unwrap(),
        ])),
        3
    );
    // refused nonstationary simulation -> 1
    assert_eq!(
        exit_code(bin().args([
            "simulate",
            "--scenario",
            "A",
            "--q",
            "2",
            "--kappas",
            "1.2",
            "--t-len",
            "20",
            "--out",
            dir.path().join("y.csv").to_str().unwrap(),
        ])),
        1
    );
    // clap usage error -> 1
    assert_eq!(exit_code(bin().args(["simulate", "--bogus"])), 1);
    // help -> 0
    assert_eq!(exit_code(bin().args(["--help"])), 0);
}
