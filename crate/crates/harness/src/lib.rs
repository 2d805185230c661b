//! Experiment harness for the emergency mesh simulator: scenario files,
//! help-request campaigns, CSV and SVG output, and loss/hop calibration.

pub mod calibrate;
pub mod experiment;
pub mod report;
pub mod scenario;

pub use experiment::{hop_count, run_campaign, run_experiment, ExperimentPlan, ExperimentResult, MessageRecord};
pub use scenario::{load_scenario, ScenarioConfig};
