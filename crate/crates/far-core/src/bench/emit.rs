//! Result emission: per-replication CSV, full JSON records, and plot-ready
//! point tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::fmt_value;

use super::experiment::ExperimentResult;

/// Output format for [`emit_results`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
}

impl std::str::FromStr for EmitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            other => Err(Error::invalid(format!("unknown format {other:?}"))),
        }
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_value).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|u| u.to_string()).unwrap_or_default()
}

/// Writes one row per (replication, method) with the fixed column set
/// `setting, replication, method, D_sel, p_sel, lambda_sel,
/// mise_1..mise_D, pe, failed`.
fn emit_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let d = result.config.true_order();
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| to_io_error(path, e))?;
    let mut header = vec![
        "setting".to_string(),
        "replication".to_string(),
        "method".to_string(),
        "D_sel".to_string(),
        "p_sel".to_string(),
        "lambda_sel".to_string(),
    ];
    for lag in 1..=d {
        header.push(format!("mise_{lag}"));
    }
    header.push("pe".to_string());
    header.push("failed".to_string());
    writer.write_record(&header).map_err(|e| to_io_error(path, e))?;

    for record in &result.replications {
        for m in &record.methods {
            let mut row = vec![
                result.setting.clone(),
                record.replication.to_string(),
                m.method.to_string(),
                opt_usize(m.selected_order),
                opt_usize(m.selected_p),
                opt_num(m.selected_lambda),
            ];
            for lag in 0..d {
                row.push(opt_num(m.mise.get(lag).copied().flatten()));
            }
            row.push(opt_num(m.pe));
            row.push(m.failed.to_string());
            writer.write_record(&row).map_err(|e| to_io_error(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_io_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::numerical(format!("csv write failed: {other:?}")),
    }
}

fn emit_json(result: &ExperimentResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, result)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Emits an experiment result in the requested format.
pub fn emit_results(result: &ExperimentResult, format: EmitFormat, path: &Path) -> Result<()> {
    match format {
        EmitFormat::Csv => emit_csv(result, path),
        EmitFormat::Json => emit_json(result, path),
    }
}

/// Reads back a JSON result file.
pub fn read_json_result(path: &Path) -> Result<ExperimentResult> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::invalid(format!("cannot parse result file {path:?}: {e}")))
}

/// Writes one PE point per (replication, method) for box-plot style figures.
pub fn emit_plot_points(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| to_io_error(path, e))?;
    writer
        .write_record(["setting", "method", "replication", "pe"])
        .map_err(|e| to_io_error(path, e))?;
    for record in &result.replications {
        for m in &record.methods {
            if let Some(pe) = m.pe {
                writer
                    .write_record([
                        result.setting.as_str(),
                        &m.method.to_string(),
                        &record.replication.to_string(),
                        &fmt_value(pe),
                    ])
                    .map_err(|e| to_io_error(path, e))?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::parse_config;
    use crate::bench::experiment::run_experiment;

    fn small_result() -> ExperimentResult {
        let config = parse_config(
            "methods = naive,mean_zero\nreplications = 2\nT = 30\nq = 3\nn = 8\nkappas = 0.5\nseed = 5\n",
        )
        .unwrap();
        run_experiment(&config).unwrap()
    }

    #[test]
    fn csv_schema_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let result = small_result();
        emit_results(&result, EmitFormat::Csv, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "setting,replication,method,D_sel,p_sel,lambda_sel,mise_1,pe,failed"
        );
        assert_eq!(lines.count(), 4); // 2 replications x 2 methods
    }

    #[test]
    fn empty_replications_give_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        let mut result = small_result();
        result.replications.clear();
        emit_results(&result, EmitFormat::Csv, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn json_round_trip_preserves_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        let result = small_result();
        emit_results(&result, EmitFormat::Json, &path).unwrap();
        let back = read_json_result(&path).unwrap();
        let a = serde_json::to_string(&result.aggregates).unwrap();
        let b = serde_json::to_string(&back.aggregates).unwrap();
        assert_eq!(a, b);
        assert_eq!(result.oracle_pe_avg.to_bits(), back.oracle_pe_avg.to_bits());
    }

    #[test]
    fn plot_points_one_row_per_pe() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.csv");
        let result = small_result();
        emit_plot_points(&result, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5); // header + 4 points
        assert!(text.starts_with("setting,method,replication,pe"));
    }

    #[test]
    fn io_failure_carries_path() {
        let result = small_result();
        let err = emit_results(&result, EmitFormat::Csv, Path::new("/nonexistent/dir/x.csv"))
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
