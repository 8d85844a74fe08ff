//! Twin runs across a list of epsilons with `phi` tied to `eps`.

use rayon::prelude::*;

use crate::config::{ExperimentConfig, PhiSchedule};
use crate::error::{HarnessError, Result};
use crate::twin::{run_twin, TwinReport};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub phi: f64,
    pub sup_w2: f64,
    pub sup_w1_filtered: f64,
    pub sup_w1_to_limit: f64,
    /// Smallest `env_w2 - W_2` over the samples.
    pub envelope_margin: f64,
    /// Smallest `env_V - V` over the samples.
    pub support_margin: f64,
    /// Dominant angular frequency of the kinetic density mode.
    pub frequency: Option<f64>,
    pub passed: bool,
}

impl SweepRow {
    pub fn from_report(report: &TwinReport) -> Self {
        let min = |f: &dyn Fn(&crate::twin::TwinSample) -> f64| report.samples.iter().map(f).fold(f64::INFINITY, f64::min);
        Self {
            epsilon: report.config.params.epsilon,
            phi: report.config.phi,
            sup_w2: report.sup(|s| s.w2),
            sup_w1_filtered: report.sup(|s| s.w1_filtered),
            sup_w1_to_limit: report.sup(|s| s.w1_to_limit),
            envelope_margin: min(&|s| s.env_w2 - s.w2),
            support_margin: min(&|s| s.env_support - s.support),
            frequency: report.oscillation_frequency(),
            passed: report.passed(),
        }
    }
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "epsilon",
    "phi",
    "sup_w2",
    "sup_w1_filtered",
    "sup_w1_to_limit",
    "envelope_margin",
    "support_margin",
    "frequency",
    "passed",
];

#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<TwinReport>,
}

/// The config used for one epsilon of the sweep.
pub fn config_for(config: &ExperimentConfig, epsilon: f64) -> ExperimentConfig {
    let mut c = config.clone();
    c.params.epsilon = epsilon;
    if let PhiSchedule::Power(e) = c.schedule {
        c.phi = epsilon.powf(e);
    }
    c
}

/// One twin run per epsilon, in parallel; rows keep the input order.
pub fn sweep_epsilon(config: &ExperimentConfig, epsilons: &[f64]) -> Result<Sweep> {
    if epsilons.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one epsilon".into()));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(HarnessError::Config(format!("epsilon {e} not in (0, 1]")));
    }
    let reports = epsilons
        .par_iter()
        .map(|&e| run_twin(&config_for(config, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep {
        rows: reports.iter().map(SweepRow::from_report).collect(),
        reports,
    })
}
