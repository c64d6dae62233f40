//! Experiment configuration and its flat key-value file format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::GridKind;
use crate::sim::Scenario;

/// An estimation or reference method the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Rkhs,
    Anh,
    Bosq,
    Naive,
    MeanZero,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rkhs" => Ok(Method::Rkhs),
            "anh" => Ok(Method::Anh),
            "bosq" => Ok(Method::Bosq),
            "naive" => Ok(Method::Naive),
            "mean_zero" | "mean-zero" | "meanzero" => Ok(Method::MeanZero),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Rkhs => "rkhs",
            Method::Anh => "anh",
            Method::Bosq => "bosq",
            Method::Naive => "naive",
            Method::MeanZero => "mean_zero",
        };
        write!(f, "{name}")
    }
}

/// Tuning controls shared by the kernel estimator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuningConfig {
    /// Largest candidate autoregressive order.
    pub d_max: usize,
    /// Cross-validation folds.
    pub folds: usize,
    /// Explicit penalty grid; `None` uses the data-driven default.
    pub lambda_grid: Option<Vec<f64>>,
    /// Solver iteration cap inside cross-validation cells (final fits use
    /// the solver default).
    pub cv_max_iter: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig { d_max: 1, folds: 5, lambda_grid: None, cv_max_iter: 2000 }
    }
}

/// Full description of one simulation experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub q: usize,
    pub n: usize,
    /// Training length T; the test window holds `round(test_fraction * T)`
    /// further steps.
    pub t_len: usize,
    /// Signal strengths, one per lag (their count is the true order).
    pub kappas: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub tuning: TuningConfig,
    pub test_fraction: f64,
    pub grid_kind: GridKind,
    pub burn_in: usize,
    pub bosq_num_basis: usize,
    pub anh_num_basis: usize,
    pub bosq_tau: f64,
}

impl ExperimentConfig {
    /// True autoregressive order of the data-generating process.
    pub fn true_order(&self) -> usize {
        self.kappas.len()
    }

    /// Number of held-out steps.
    pub fn test_len(&self) -> usize {
        ((self.test_fraction * self.t_len as f64).round() as usize).max(1)
    }

    /// Compact label used in emitted tables, e.g. `A_q6_n20_T100_k0.5`.
    pub fn setting_label(&self) -> String {
        let kappas = self
            .kappas
            .iter()
            .map(|k| format!("{k}"))
            .collect::<Vec<_>>()
            .join("-");
        format!("{}_q{}_n{}_T{}_k{kappas}", self.scenario, self.q, self.n, self.t_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.n == 0 || self.t_len == 0 {
            return Err(Error::invalid("q, n and T must be positive"));
        }
        if self.kappas.is_empty() {
            return Err(Error::invalid("at least one kappa is required"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction must lie in (0,1)"));
        }
        if (self.test_fraction * self.t_len as f64).round() < 1.0 {
            return Err(Error::invalid("test window would be empty; increase T"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.tuning.d_max == 0 {
            return Err(Error::invalid("d_max must be at least 1"));
        }
        Ok(())
    }
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        scenario: Scenario::A,
        q: 6,
        n: 20,
        t_len: 100,
        kappas: vec![0.5],
        replications: 10,
        seed: 1,
        methods: vec![Method::Rkhs, Method::Anh, Method::Bosq],
        tuning: TuningConfig::default(),
        test_fraction: 0.2,
        grid_kind: GridKind::MidpointEquispaced,
        burn_in: crate::sim::DEFAULT_BURN_IN,
        bosq_num_basis: 10,
        anh_num_basis: 10,
        bosq_tau: 0.8,
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_num::<f64>(key, v))
        .collect()
}

/// Parses the flat `key = value` experiment format. Unknown keys are errors;
/// `#` starts a comment. Every key is optional and falls back to a default.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut config = default_config();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::invalid(format!("config line {}: expected key = value", line_no + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "scenario" => config.scenario = value.parse()?,
            "q" => config.q = parse_num(key, value)?,
            "n" => config.n = parse_num(key, value)?,
            "T" | "t" => config.t_len = parse_num(key, value)?,
            "kappas" => config.kappas = parse_list(key, value)?,
            "replications" => config.replications = parse_num(key, value)?,
            "seed" => config.seed = parse_num(key, value)?,
            "methods" => {
                config.methods = value
                    .split(',')
                    .map(|m| m.parse())
                    .collect::<Result<Vec<Method>>>()?;
            }
            "d_max" => config.tuning.d_max = parse_num(key, value)?,
            "folds" => config.tuning.folds = parse_num(key, value)?,
            "lambda_grid" => {
                config.tuning.lambda_grid = if value.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_list(key, value)?)
                };
            }
            "cv_max_iter" => config.tuning.cv_max_iter = parse_num(key, value)?,
            "test_fraction" => config.test_fraction = parse_num(key, value)?,
            "grid" => {
                config.grid_kind = match value {
                    "midpoint" => GridKind::MidpointEquispaced,
                    "random" => GridKind::UniformRandom,
                    other => {
                        return Err(Error::invalid(format!("unknown grid kind {other:?}")))
                    }
                };
            }
            "burn_in" => config.burn_in = parse_num(key, value)?,
            "bosq_num_basis" => config.bosq_num_basis = parse_num(key, value)?,
            "anh_num_basis" => config.anh_num_basis = parse_num(key, value)?,
            "bosq_tau" => config.bosq_tau = parse_num(key, value)?,
            other => {
                return Err(Error::invalid(format!("unknown config key {other:?}")));
            }
        }
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
# comment
scenario = A
q = 12
n = 20
T = 400
kappas = 0.8
replications = 10
seed = 7
methods = rkhs,anh,bosq,naive,mean_zero
d_max = 2
folds = 5
lambda_grid = auto
test_fraction = 0.2
grid = midpoint
anh_num_basis = 10
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.q, 12);
        assert_eq!(c.t_len, 400);
        assert_eq!(c.kappas, vec![0.8]);
        assert_eq!(c.methods.len(), 5);
        assert_eq!(c.tuning.d_max, 2);
        assert_eq!(c.test_len(), 80);
        assert_eq!(c.setting_label(), "A_q12_n20_T400_k0.8");
    }

    #[test]
    fn explicit_lambda_grid_and_multi_kappa() {
        let c = parse_config("kappas = 0.5,0.3\nlambda_grid = 0.1,1,10\n").unwrap();
        assert_eq!(c.true_order(), 2);
        assert_eq!(c.tuning.lambda_grid, Some(vec![0.1, 1.0, 10.0]));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(parse_config("unknown_key = 3\n").is_err());
        assert!(parse_config("q = not_a_number\n").is_err());
        assert!(parse_config("test_fraction = 1.5\n").is_err());
        assert!(parse_config("methods = sorcery\n").is_err());
        assert!(parse_config("replications = 0\n").is_err());
    }
}
