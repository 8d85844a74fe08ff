//! Dimensionless parameters shared by the kinetic, fluid and envelope code.

use crate::error::{invalid, Result};

/// Scaling and envelope parameters of the quasineutral problem.
///
/// `epsilon` is the ratio of Debye length to box size, `gamma` the allowed
/// polynomial growth of the initial velocity support (`|v| <= c0 / eps^gamma`),
/// `alpha`/`beta` the exponents of the two-dimensional support envelopes and
/// `cap_k` the constant of the admissible perturbation threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasineutralParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub cap_k: f64,
    pub c0: f64,
    pub c_alpha: f64,
    pub final_time: f64,
}

impl Default for QuasineutralParams {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            gamma: 1.0,
            alpha: 0.5,
            beta: 3.0,
            cap_k: 1.0,
            c0: 2.0,
            c_alpha: 1.0,
            final_time: 1.0,
        }
    }
}

impl QuasineutralParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(invalid("epsilon", format!("{} not in (0, 1]", self.epsilon)));
        }
        if !(self.gamma >= 0.0) {
            return Err(invalid("gamma", format!("{} must be >= 0", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("{} not in (0, 1)", self.alpha)));
        }
        if !(self.beta > 2.0) {
            return Err(invalid("beta", format!("{} must be > 2", self.beta)));
        }
        if !(self.cap_k > 0.0) {
            return Err(invalid("cap_k", format!("{} must be > 0", self.cap_k)));
        }
        if !(self.c0 > 1.0) {
            return Err(invalid("c0", format!("{} must be > 1", self.c0)));
        }
        if !(self.c_alpha > 0.0) {
            return Err(invalid("c_alpha", format!("{} must be > 0", self.c_alpha)));
        }
        if !(self.final_time > 0.0) {
            return Err(invalid("final_time", format!("{} must be > 0", self.final_time)));
        }
        Ok(())
    }

    /// Velocity-support radius `c0 / eps^gamma` admitted for initial data.
    pub fn velocity_support_bound(&self) -> f64 {
        self.c0 / self.epsilon.powf(self.gamma)
    }
}
