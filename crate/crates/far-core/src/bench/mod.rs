//! Configuration-driven experiment harness: seeded replications over
//! simulation scenarios, train/test forecast evaluation, and machine-readable
//! result emission.

mod config;
mod emit;
mod experiment;
mod forecast;
mod model;

pub use config::{parse_config, ExperimentConfig, Method, TuningConfig};
pub use emit::{emit_plot_points, emit_results, read_json_result, EmitFormat};
pub use experiment::{
    prediction_error, run_experiment, ExperimentResult, MethodAggregate, MethodRecord,
    ReplicationRecord,
};
pub use forecast::{forecast_eval, ForecastEval, ForecastOptions, MethodForecast};
pub use model::{load_model, save_model, FittedModel};
