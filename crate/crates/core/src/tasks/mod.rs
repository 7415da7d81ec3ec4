//! Metrics, datasets, built-in fixture tasks and the allocation simulator.

mod builtin;
mod dataset;
mod metrics;
pub mod simulator;

pub use builtin::{builtin_asset, builtin_task, BuiltinTask, BUILTIN_TASKS, FIXTURE_FILES};
pub use dataset::{load_dataset, parse_dataset, Example};
pub use metrics::{
    default_threshold, evaluate_metric, metric_by_id, normalize, ExactMatch, TokenF1, METRIC_IDS,
};
pub use simulator::{simulate_allocation, Policy, SimulationResult, SimulationSettings, SyntheticStep};
