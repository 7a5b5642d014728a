//! Evaluation protocol, run configuration, reports and pipeline stages.

pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use evaluate::{evaluate, Evaluation, LabeledTrace};
pub use metrics::{fuel_saving, interpolate_fuel_at, mae_mse, sim_cost};
pub use pipeline::Method;
pub use report::write_report;
