//! Fitting the envelope constants on a reference run.

use quasineutral::bounds::{calibrate_c0, calibrate_c_alpha};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::twin::{run_twin, TwinReport};

/// Multiplier applied to the fitted constants before they are frozen.
pub const CALIBRATION_MARGIN: f64 = 1.5;
/// Smallest frozen `c_alpha`, in units of `eps^{1+alpha}`. Stops a run whose
/// support never grew from freezing a zero constant.
pub const C_ALPHA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub fitted_c0: f64,
    pub fitted_c_alpha: f64,
    pub c0: f64,
    pub c_alpha: f64,
}

impl Calibration {
    /// Copy of `config` with the frozen constants.
    pub fn apply(&self, config: &ExperimentConfig) -> ExperimentConfig {
        let mut c = config.clone();
        c.envelope_c0 = self.c0;
        c.envelope_c_alpha = self.c_alpha;
        c
    }
}

/// Fit on an existing report.
pub fn calibrate_report(report: &TwinReport) -> Result<Calibration> {
    let config = &report.config;
    let eps = config.params.epsilon;
    let w2: Vec<(f64, f64)> = report.samples.iter().map(|s| (s.t, s.w2)).collect();
    let support: Vec<(f64, f64)> = report.samples.iter().map(|s| (s.t, s.support)).collect();
    let fitted_c0 = calibrate_c0(report.samples[0].w2, &report.a_series()?, &w2, config.dim)?;
    let fitted_c_alpha = calibrate_c_alpha(report.samples[0].support, &support, eps, config.params.alpha)?;
    Ok(Calibration {
        fitted_c0,
        fitted_c_alpha,
        c0: CALIBRATION_MARGIN * fitted_c0,
        c_alpha: (CALIBRATION_MARGIN * fitted_c_alpha).max(C_ALPHA_FLOOR * eps.powf(1.0 + config.params.alpha)),
    })
}

/// Run the reference twin at `config.seed` and fit the constants.
pub fn calibrate(config: &ExperimentConfig) -> Result<Calibration> {
    calibrate_report(&run_twin(config)?)
}
