//! Twin-run experiments, epsilon sweeps, configuration and reports for the
//! quasineutral toolkit.

pub mod calibrate;
pub mod config;
pub mod error;
pub mod report;
pub mod scenario;
pub mod sweep;
pub mod twin;

pub use calibrate::{calibrate, calibrate_report, Calibration};
pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use report::write_report;
pub use sweep::{sweep_epsilon, Sweep, SweepRow};
pub use twin::{run_twin, TwinReport, TwinSample};
