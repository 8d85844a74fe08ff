//! Explicit envelopes: the log-Lipschitz Gronwall bound on the squared `W_2`
//! distance, velocity-support growth in two and three dimensions, the
//! Batt-Rein exponent chain and the admissible perturbation scale, together
//! with the calibration of their unspecified constants against measured runs.

use std::collections::HashMap;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::field::{forward_transform, GriddedField};
use crate::grid::{periodic_distance, MAX_DIM};
use crate::poisson::field_spectrum;
use crate::transport::w_exact;

fn check_nonnegative(name: &'static str, x: f64) -> Result<()> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(invalid(name, format!("{x} must be finite and >= 0")));
    }
    Ok(())
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(invalid(name, format!("{x} must be finite and > 0")));
    }
    Ok(())
}

/// `A(t) = 1 + eps^-2 sqrt(rho2_inf) sqrt(rho_max_inf) + eps^-2 rho1_minus1_inf`.
pub fn a_of_t(rho2_inf: f64, rho_max_inf: f64, rho1_minus1_inf: f64, epsilon: f64) -> Result<f64> {
    check_nonnegative("rho2_inf", rho2_inf)?;
    check_nonnegative("rho_max_inf", rho_max_inf)?;
    check_nonnegative("rho1_minus1_inf", rho1_minus1_inf)?;
    check_positive("epsilon", epsilon)?;
    let e2 = epsilon * epsilon;
    Ok(1.0 + rho2_inf.sqrt() * rho_max_inf.sqrt() / e2 + rho1_minus1_inf / e2)
}

/// `H(z) = z ln^2(16d/z)` on `[0, d]`, continued by the constant `d ln^2 16`.
pub fn h_of_z(z: f64, d: usize) -> f64 {
    let d = d as f64;
    if z <= 0.0 {
        0.0
    } else if z >= d {
        d * 16f64.ln().powi(2)
    } else {
        z * (16.0 * d / z).ln().powi(2)
    }
}

/// Sign of the inner exponent of `F_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FtSign {
    /// `exp(-c0 int A)`: the exact solution of `Q' = c0 A Q ln(16d/Q)`.
    #[default]
    OdeConsistent,
    /// `exp(+c0 int A)`, as typeset; decreasing in time. Kept for comparison only.
    Typeset,
}

/// `F_t[z] = 16d exp(ln(z/16d) exp(-c0 int_0^t A))`.
pub fn f_t(z: f64, a_integral: f64, c0: f64, d: usize) -> Result<f64> {
    f_t_with(z, a_integral, c0, d, FtSign::OdeConsistent)
}

pub fn f_t_with(z: f64, a_integral: f64, c0: f64, d: usize, sign: FtSign) -> Result<f64> {
    let top = 16.0 * d as f64;
    if !(z > 0.0 && z <= top) {
        return Err(invalid("z", format!("{z} not in (0, {top}]")));
    }
    check_nonnegative("a_integral", a_integral)?;
    check_nonnegative("c0", c0)?;
    let s = match sign {
        FtSign::OdeConsistent => -1.0,
        FtSign::Typeset => 1.0,
    };
    Ok(top * ((z / top).ln() * (s * c0 * a_integral).exp()).exp())
}

/// Samples of `A(t)`, linearly interpolated between sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct ASeries {
    times: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ASeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(invalid("a_series", "need equally many (>= 1) times and values"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || !times[0].is_finite() {
            return Err(invalid("a_series", "times must be strictly increasing"));
        }
        for &a in &values {
            check_nonnegative("A", a)?;
        }
        let mut cumulative = vec![0.0; times.len()];
        for k in 1..times.len() {
            cumulative[k] = cumulative[k - 1] + 0.5 * (values[k] + values[k - 1]) * (times[k] - times[k - 1]);
        }
        Ok(Self {
            times,
            values,
            cumulative,
        })
    }

    /// `A` sampled at `n + 1` equispaced times on `[0, horizon]`.
    pub fn from_fn(horizon: f64, n: usize, a: impl Fn(f64) -> f64) -> Result<Self> {
        check_positive("horizon", horizon)?;
        let times: Vec<f64> = (0..=n.max(1)).map(|k| horizon * k as f64 / n.max(1) as f64).collect();
        let values = times.iter().map(|&t| a(t)).collect();
        Self::new(times, values)
    }

    pub fn constant(a: f64, horizon: f64, n: usize) -> Result<Self> {
        Self::from_fn(horizon, n, |_| a)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `int_{t_0}^{t_k} A` at every sample time (exact for the interpolant).
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => k.min(self.times.len().saturating_sub(2)),
            Err(0) => 0,
            Err(k) => (k - 1).min(self.times.len().saturating_sub(2)),
        }
    }

    /// Interpolated `A(t)`; constant beyond the sampled range.
    pub fn value_at(&self, t: f64) -> f64 {
        if self.times.len() == 1 || t <= self.start() {
            return self.values[0];
        }
        if t >= self.end() {
            return *self.values.last().unwrap();
        }
        let k = self.segment(t);
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.values[k] + s * (self.values[k + 1] - self.values[k])
    }

    /// `int_{t_0}^t A` of the interpolant.
    pub fn integral_at(&self, t: f64) -> f64 {
        if self.times.len() == 1 || t <= self.start() {
            return self.values[0] * (t - self.start()).max(0.0);
        }
        if t >= self.end() {
            return self.cumulative.last().unwrap() + self.values.last().unwrap() * (t - self.end());
        }
        let k = self.segment(t);
        let dt = t - self.times[k];
        self.cumulative[k] + 0.5 * (self.values[k] + self.value_at(t)) * dt
    }
}

fn gronwall_rhs(q: f64, a: f64, c0: f64, d: f64, log_regime: bool) -> f64 {
    if log_regime {
        c0 * a * q * (16.0 * d / q).ln()
    } else {
        c0 * a * q
    }
}

fn rk4_step(q: f64, t: f64, h: f64, a: &ASeries, c0: f64, d: f64, log_regime: bool) -> f64 {
    let f = |t: f64, q: f64| gronwall_rhs(q, a.value_at(t), c0, d, log_regime);
    let k1 = f(t, q);
    let k2 = f(t + 0.5 * h, q + 0.5 * h * k1);
    let k3 = f(t + 0.5 * h, q + 0.5 * h * k2);
    let k4 = f(t + h, q + h * k3);
    q + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// One pass of the fixed-step integrator with `m` steps per sample interval.
fn gronwall_pass(q0: f64, a: &ASeries, c0: f64, d: f64, m: usize) -> Vec<f64> {
    let times = a.times();
    let mut out = Vec::with_capacity(times.len());
    let mut q = q0;
    let mut log_regime = q0 < d;
    out.push(q);
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / m as f64;
        for s in 0..m {
            let t = w[0] + s as f64 * h;
            let next = rk4_step(q, t, h, a, c0, d, log_regime);
            if log_regime && next >= d {
                // Locate the switch Q = d inside the step, then finish the
                // step in the exponential regime.
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if rk4_step(q, t, mid * h, a, c0, d, true) < d {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                log_regime = false;
                q = rk4_step(d, t + hi * h, (1.0 - hi) * h, a, c0, d, false);
            } else {
                q = next;
            }
        }
        out.push(q);
    }
    out
}

/// Numerical solution of `Q' = c0 A Q ln(16d/Q)` while `Q < d` and
/// `Q' = c0 A Q` from then on, sampled at the times of `a`. The step count is
/// doubled until the samples change by less than `1e-8` relatively.
pub fn gronwall_oracle(q0: f64, a: &ASeries, c0: f64, d: usize) -> Result<Vec<f64>> {
    check_positive("q0", q0)?;
    check_nonnegative("c0", c0)?;
    let d = d as f64;
    let mut m = 4;
    let mut prev = gronwall_pass(q0, a, c0, d, m);
    while m < 1 << 16 {
        m *= 2;
        let next = gronwall_pass(q0, a, c0, d, m);
        let change = prev
            .iter()
            .zip(&next)
            .map(|(p, n)| (p - n).abs() / n.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if change < 1e-8 {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NonConvergence {
        method: "gronwall_oracle",
        detail: format!("no 1e-8 agreement with {m} steps per interval"),
    })
}

/// Which form of the piecewise `W_2` envelope to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnvelopeForm {
    /// `F_t[z]` until it reaches `d`, then exponential growth from `d`:
    /// the exact solution of the comparison ODE, continuous in every input.
    #[default]
    Sharp,
    /// The three-branch statement: the branch is chosen once from
    /// `F_horizon[z]`, and the exponential branch restarts from `d` at time 0.
    Literal,
}

/// Envelope for `W_2(t)` given `W_2(0)`, `A(t)` and the constant `c0`.
#[derive(Debug, Clone)]
pub struct StabilityEnvelope {
    pub w2_initial: f64,
    pub a: ASeries,
    pub c0: f64,
    pub d: usize,
    pub horizon: f64,
    pub form: EnvelopeForm,
}

/// Squared envelope as a function of `b = int_0^t A`.
fn envelope_sq(z: f64, b: f64, b_horizon: f64, c0: f64, d: usize, form: EnvelopeForm) -> f64 {
    let df = d as f64;
    if z == 0.0 {
        return 0.0;
    }
    if z >= df {
        return z * (c0 * b).exp();
    }
    // 16d exp(ln(z/16d) e^{-c0 b}) = d exactly at c0 b = ln(ln(16d/z)/ln 16).
    let switch = ((16.0 * df / z).ln() / 16f64.ln()).ln();
    let f = |b: f64| 16.0 * df * ((z / (16.0 * df)).ln() * (-c0 * b).exp()).exp();
    match form {
        EnvelopeForm::Sharp => {
            if c0 * b <= switch {
                f(b)
            } else {
                df * (c0 * b - switch).exp()
            }
        }
        EnvelopeForm::Literal => {
            if f(b_horizon) <= df {
                f(b)
            } else {
                df * (c0 * b).exp()
            }
        }
    }
}

/// Value of `int A` at which the sharp envelope of `z < d` reaches `d`.
pub fn switching_integral(z: f64, c0: f64, d: usize) -> Option<f64> {
    let df = d as f64;
    if !(z > 0.0 && z < df && c0 > 0.0) {
        return None;
    }
    Some(((16.0 * df / z).ln() / 16f64.ln()).ln() / c0)
}

/// Squared sharp envelope as a function of `int_0^t A`.
pub fn sharp_envelope_sq(z: f64, a_integral: f64, c0: f64, d: usize) -> f64 {
    envelope_sq(z, a_integral, a_integral, c0, d, EnvelopeForm::Sharp)
}

pub fn stability_envelope(
    w2_initial: f64,
    a: &ASeries,
    c0: f64,
    d: usize,
    horizon: f64,
    form: EnvelopeForm,
) -> Result<StabilityEnvelope> {
    check_nonnegative("w2_initial", w2_initial)?;
    check_nonnegative("c0", c0)?;
    check_nonnegative("horizon", horizon)?;
    Ok(StabilityEnvelope {
        w2_initial,
        a: a.clone(),
        c0,
        d,
        horizon,
        form,
    })
}

impl StabilityEnvelope {
    /// Envelope for `W_2` at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        let z = self.w2_initial * self.w2_initial;
        let b = self.a.integral_at(t);
        let bh = self.a.integral_at(self.horizon);
        envelope_sq(z, b, bh, self.c0, self.d, self.form).sqrt()
    }

    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.at(t)).collect()
    }
}

/// Two-dimensional velocity-support envelope in the rescaled time frame:
/// `(c_alpha eps^-(1+alpha) t + (1+v0)^(1-alpha))^(1/(1-alpha)) - 1`.
pub fn support_envelope_2d(v0: f64, t: f64, epsilon: f64, alpha: f64, c_alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} not in (0, 1)")));
    }
    check_nonnegative("v0", v0)?;
    check_nonnegative("t", t)?;
    check_positive("epsilon", epsilon)?;
    check_nonnegative("c_alpha", c_alpha)?;
    let base = c_alpha * epsilon.powf(-(1.0 + alpha)) * t + (1.0 + v0).powf(1.0 - alpha);
    Ok(base.powf(1.0 / (1.0 - alpha)) - 1.0)
}

/// Three-dimensional velocity-support envelope at rescaled horizon `h`:
/// the larger of `v0 eps^-g - c1 eps^(-32/3) + sqrt(c1^2 eps^(-64/3) h^4 + 4 c1 eps^-(32/3+g))`
/// and `v0 eps^-g + h^(-7/2)`.
pub fn support_envelope_3d(v0_coeff: f64, epsilon: f64, gamma: f64, horizon: f64, c1: f64) -> Result<f64> {
    check_positive("horizon", horizon)?;
    check_positive("epsilon", epsilon)?;
    check_nonnegative("v0_coeff", v0_coeff)?;
    check_nonnegative("gamma", gamma)?;
    check_nonnegative("c1", c1)?;
    let base = v0_coeff * epsilon.powf(-gamma);
    let e = epsilon.powf(-32.0 / 3.0);
    let root = (c1 * c1 * e * e * horizon.powi(4) + 4.0 * c1 * e * epsilon.powf(-gamma)).sqrt();
    let first = base + (root - c1 * e);
    let second = base + horizon.powf(-3.5);
    Ok(first.max(second))
}

/// Both field bounds of the two-dimensional a-priori estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBound2d {
    /// `c2 (1 + eps^-1 sqrt(ln((1+V)/eps)))`.
    pub closed_form: f64,
    /// `c2 (R(|eta|_inf + 1) + (|eta|_2 + 1/eps) sqrt(ln(1/(eps R))))` at
    /// `R = 1/(|eta|_inf + 1)`.
    pub optimized: f64,
}

/// Logarithms are clamped at 0, where the estimate is vacuous anyway.
pub fn field_bound_2d(eta_l2: f64, eta_inf: f64, v: f64, epsilon: f64, c2: f64) -> Result<FieldBound2d> {
    check_nonnegative("eta_l2", eta_l2)?;
    check_nonnegative("eta_inf", eta_inf)?;
    check_nonnegative("v", v)?;
    check_positive("epsilon", epsilon)?;
    check_nonnegative("c2", c2)?;
    let closed_form = c2 * (1.0 + ((1.0 + v) / epsilon).ln().max(0.0).sqrt() / epsilon);
    let r = 1.0 / (eta_inf + 1.0);
    let optimized = c2 * (r * (eta_inf + 1.0) + (eta_l2 + 1.0 / epsilon) * (1.0 / (epsilon * r)).ln().max(0.0).sqrt());
    Ok(FieldBound2d {
        closed_form,
        optimized,
    })
}

/// One bootstrap step of the three-dimensional support bound: `beta -> 2 beta / 3`.
pub fn batt_rein_exponent(beta: Rational64) -> Result<Rational64> {
    if beta <= Rational64::from_integer(0) {
        return Err(invalid("beta", format!("{beta} must be > 0")));
    }
    Ok(beta * Rational64::new(2, 3))
}

/// Iterates of [`batt_rein_exponent`] from `start` until one falls below `target`.
pub fn batt_rein_chain(start: Rational64, target: Rational64) -> Result<Vec<Rational64>> {
    let mut chain = vec![start];
    while *chain.last().unwrap() >= target {
        if chain.len() > 64 {
            return Err(invalid("target", format!("{target} not reached from {start}")));
        }
        chain.push(batt_rein_exponent(*chain.last().unwrap())?);
    }
    Ok(chain)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiThreshold {
    /// `exp(-exp(k eps^-s))`; underflows to 0 for all but large `eps`.
    pub value: f64,
    /// `ln phi = -exp(k eps^-s)`.
    pub log_value: f64,
    pub exponent: f64,
}

/// Admissible perturbation scale `exp(-exp(k eps^-s))` with
/// `s = 2(1 + max(beta, gamma))` in 2D and `s = 2 + max(38, 3 gamma)` in 3D.
pub fn phi_threshold(epsilon: f64, d: usize, gamma: f64, beta: f64, k: f64) -> Result<PhiThreshold> {
    check_positive("epsilon", epsilon)?;
    check_nonnegative("k", k)?;
    let exponent = match d {
        2 => {
            if !(beta > 2.0) {
                return Err(invalid("beta", format!("{beta} must be > 2 in 2D")));
            }
            2.0 * (1.0 + beta.max(gamma))
        }
        3 => 2.0 + 38f64.max(3.0 * gamma),
        _ => return Err(invalid("d", format!("{d} not in {{2, 3}}"))),
    };
    let log_value = -(k * epsilon.powf(-exponent)).exp();
    Ok(PhiThreshold {
        value: log_value.exp(),
        log_value,
        exponent,
    })
}

/// Constants of the envelopes. None is given numerically; they are fitted by
/// the calibration routines and frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConstants {
    pub d: usize,
    pub c0: f64,
    pub c_alpha: f64,
    pub alpha: f64,
    pub c_beta: f64,
    pub c1: f64,
    pub c_prime: f64,
    pub gamma: f64,
    pub k: f64,
}

impl EnvelopeConstants {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            c0: 1.0,
            c_alpha: 1.0,
            alpha: 0.5,
            c_beta: 1.0,
            c1: 1.0,
            c_prime: 1.0,
            gamma: 1.0,
            k: 1.0,
        }
    }

    /// Velocity-support envelope at physical time `t`, evaluated at `t/eps`.
    pub fn support_envelope(&self, v0: f64, t: f64, epsilon: f64) -> Result<f64> {
        let tr = t / epsilon;
        match self.d {
            2 => support_envelope_2d(v0, tr, epsilon, self.alpha, self.c_alpha),
            3 if tr > 0.0 => support_envelope_3d(v0, epsilon, self.gamma, tr, self.c1),
            3 => Ok(v0),
            d => Err(invalid("d", format!("{d} not in {{2, 3}}"))),
        }
    }
}

/// Envelope data sampled at the times of an `A(t)` series.
#[derive(Debug, Clone)]
pub struct BoundEnvelope {
    pub times: Vec<f64>,
    pub a_values: Vec<f64>,
    pub a_integral: Vec<f64>,
    pub envelope_w2: Vec<f64>,
    /// `sqrt(Q(t))` from [`gronwall_oracle`]; `None` when `W_2(0) = 0`.
    pub q_oracle: Option<Vec<f64>>,
    pub support_envelope: Vec<f64>,
    pub constants: EnvelopeConstants,
}

impl BoundEnvelope {
    pub fn build(a: &ASeries, w2_initial: f64, v0: f64, epsilon: f64, constants: EnvelopeConstants, form: EnvelopeForm) -> Result<Self> {
        let env = stability_envelope(w2_initial, a, constants.c0, constants.d, a.end(), form)?;
        let times = a.times().to_vec();
        let q_oracle = if w2_initial > 0.0 {
            Some(
                gronwall_oracle(w2_initial * w2_initial, a, constants.c0, constants.d)?
                    .into_iter()
                    .map(f64::sqrt)
                    .collect(),
            )
        } else {
            None
        };
        let support_envelope = times
            .iter()
            .map(|&t| constants.support_envelope(v0, t - a.start(), epsilon))
            .collect::<Result<_>>()?;
        Ok(Self {
            envelope_w2: env.sample(&times),
            a_values: a.values().to_vec(),
            a_integral: a.cumulative().to_vec(),
            times,
            q_oracle,
            support_envelope,
            constants,
        })
    }
}

/// Smallest `c0` for which the sharp envelope dominates every measured
/// `(t, W_2)` sample. Fails when `W_2(0) = 0`, where no constant can help.
pub fn calibrate_c0(w2_initial: f64, a: &ASeries, measured: &[(f64, f64)], d: usize) -> Result<f64> {
    check_nonnegative("w2_initial", w2_initial)?;
    let z = w2_initial * w2_initial;
    let dominates = |c0: f64| {
        measured.iter().all(|&(t, w)| {
            let env = sharp_envelope_sq(z, a.integral_at(t), c0, d).sqrt();
            env >= w * (1.0 - 1e-12)
        })
    };
    if dominates(0.0) {
        return Ok(0.0);
    }
    if z == 0.0 {
        return Err(invalid("w2_initial", "a zero initial distance admits no envelope above 0"));
    }
    let mut hi = 1e-3;
    while !dominates(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NonConvergence {
                method: "calibrate_c0",
                detail: "no constant below 1e12 dominates the samples".into(),
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if dominates(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Smallest `c_alpha` for which the 2D support envelope dominates every
/// measured `(t, V)` sample, with `t` in physical time.
pub fn calibrate_c_alpha(v0: f64, measured: &[(f64, f64)], epsilon: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} not in (0, 1)")));
    }
    check_positive("epsilon", epsilon)?;
    let base = (1.0 + v0).powf(1.0 - alpha);
    let mut c: f64 = 0.0;
    for &(t, v) in measured {
        let need = (1.0 + v).powf(1.0 - alpha) - base;
        if need <= 0.0 {
            continue;
        }
        if t <= 0.0 {
            return Err(invalid("measured", format!("V = {v} exceeds v0 = {v0} at t = {t}")));
        }
        c = c.max(need * epsilon.powf(1.0 + alpha) / (t / epsilon));
    }
    Ok(c)
}

/// Outcome of [`loeper_field_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoeperReport {
    /// `eps^2 |grad Psi_1 - grad Psi_2|_2`.
    pub field_difference: f64,
    /// `W_2(rho_1, rho_2)` between the sampled ensembles.
    pub w2: f64,
    /// `W_2` between two differently placed samples of `rho_1`: the sampling scale.
    pub w2_floor: f64,
    pub rho_max: f64,
    /// `field_difference / (sqrt(rho_max) w2)`; 0 when both vanish.
    pub ratio: f64,
    /// Smallest `C` in the log-Lipschitz bound over the sampled pairs, per density.
    pub log_lipschitz: [f64; 2],
}

/// Sampling lattice per axis used by [`loeper_field_check`].
fn lattice_per_axis(d: usize) -> usize {
    match d {
        1 => 1024,
        2 => 32,
        _ => 10,
    }
}

/// Deterministic sample of a cellwise-constant grid density: the points of an
/// offset lattice pushed through the sequential conditional inverse CDF
/// (Knothe-Rosenblatt map) of the density.
pub fn quantize_density(rho: &GriddedField, per_axis: usize, offset: f64) -> Result<ParticleEnsemble> {
    let grid = rho.grid();
    let d = grid.dim();
    if rho.components() != 1 || rho.min_value() < 0.0 {
        return Err(invalid("rho", "density must be scalar and nonnegative"));
    }
    let mut cache: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    // Cumulative weights along axis `prefix.len()`, summed over later axes.
    let mut cdf = |prefix: &[usize]| -> Vec<f64> {
        cache
            .entry(prefix.to_vec())
            .or_insert_with(|| {
                let axis = prefix.len();
                let n = grid.cells_along(axis);
                let mut w = vec![0.0; n];
                for flat in 0..grid.len() {
                    let idx = grid.multi_index(flat);
                    if idx[..axis] == *prefix {
                        w[idx[axis]] += rho.at(0, flat);
                    }
                }
                let mut acc = 0.0;
                let mut c = Vec::with_capacity(n + 1);
                c.push(0.0);
                for x in w {
                    acc += x;
                    c.push(acc);
                }
                c
            })
            .clone()
    };
    let total = per_axis.pow(d as u32);
    let mut positions = Vec::with_capacity(total * d);
    for s in 0..total {
        let mut rem = s;
        let mut u = [0.0; MAX_DIM];
        for a in (0..d).rev() {
            u[a] = ((rem % per_axis) as f64 + offset) / per_axis as f64;
            rem /= per_axis;
        }
        let mut prefix = Vec::with_capacity(d);
        for a in 0..d {
            let c = cdf(&prefix);
            let target = u[a] * c.last().unwrap();
            let cell = c.partition_point(|&x| x <= target).clamp(1, c.len() - 1) - 1;
            let width = c[cell + 1] - c[cell];
            let frac = if width > 0.0 { (target - c[cell]) / width } else { 0.5 };
            // Cell `j` spans [(j - 1/2) h, (j + 1/2) h].
            positions.push((cell as f64 - 0.5 + frac) * grid.spacing(a));
            prefix.push(cell);
        }
    }
    ParticleEnsemble::equal_weight(d, positions, vec![0.0; total * d], 1.0)
}

/// Numerical check of the Loeper field inequality and of the log-Lipschitz
/// regularity of the fields of two unit-mean densities.
pub fn loeper_field_check(rho1: &GriddedField, rho2: &GriddedField, epsilon: f64, sample_pairs: usize) -> Result<LoeperReport> {
    check_positive("epsilon", epsilon)?;
    rho1.grid().check_same(rho2.grid())?;
    for rho in [rho1, rho2] {
        if rho.components() != 1 {
            return Err(invalid("rho", "density must be scalar"));
        }
        let mean = rho.mean(0);
        if (mean - 1.0).abs() > 1e-9 {
            return Err(invalid("rho", format!("mean {mean} differs from 1")));
        }
    }
    let grid = rho1.grid();
    let d = grid.dim();
    // eps^2 grad Psi = -E at eps = 1, independent of eps.
    let e1 = field_spectrum(&forward_transform(rho1), 1.0)?;
    let e2 = field_spectrum(&forward_transform(rho2), 1.0)?;
    let mut diff = e1.clone();
    diff.axpy(-1.0, &e2)?;
    let field_difference = diff.energy().sqrt();

    let m = lattice_per_axis(d);
    let s1 = quantize_density(rho1, m, 0.5)?;
    let s2 = quantize_density(rho2, m, 0.5)?;
    let w2 = w_exact(&s1, &s2, 2)?.0;
    let w2_floor = w_exact(&s1, &quantize_density(rho1, m, 0.25)?, 2)?.0;
    let rho_max = rho1.sup_norm().max(rho2.sup_norm());
    let rhs = rho_max.sqrt() * w2;
    let ratio = if field_difference == 0.0 { 0.0 } else { field_difference / rhs };

    let mut rng = ChaCha8Rng::seed_from_u64(0x10e9e7);
    let mut log_lipschitz = [0.0f64; 2];
    let sqrt_d = (d as f64).sqrt();
    for (slot, (rho, e)) in [(rho1, &e1), (rho2, &e2)].into_iter().enumerate() {
        let dev = rho.values().iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        for _ in 0..sample_pairs {
            let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let r = periodic_distance(&x, &y);
            let num: f64 = (0..d)
                .map(|c| (e.evaluate(c, &x) - e.evaluate(c, &y)).re.powi(2))
                .sum::<f64>()
                .sqrt();
            if num == 0.0 {
                continue;
            }
            let den = r * (4.0 * sqrt_d / r).ln() * dev;
            log_lipschitz[slot] = log_lipschitz[slot].max(if den > 0.0 { num / den } else { f64::INFINITY });
        }
    }
    Ok(LoeperReport {
        field_difference,
        w2,
        w2_floor,
        rho_max,
        ratio,
        log_lipschitz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn a_of_t_examples() {
        assert_eq!(a_of_t(1.0, 1.0, 0.0, 1.0).unwrap(), 2.0);
        assert_eq!(a_of_t(4.0, 4.0, 3.0, 0.5).unwrap(), 29.0);
        assert_eq!(a_of_t(0.0, 0.0, 0.0, 0.3).unwrap(), 1.0);
        assert!(a_of_t(-1.0, 0.0, 0.0, 1.0).is_err());
        assert!(a_of_t(1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn h_of_z_examples() {
        assert_eq!(h_of_z(0.0, 2), 0.0);
        let at_d = 2.0 * 16f64.ln().powi(2);
        assert!((h_of_z(2.0, 2) - at_d).abs() < 1e-14);
        assert!((h_of_z(2.0 - 1e-12, 2) - at_d).abs() < 1e-10);
        assert_eq!(h_of_z(5.0, 2), at_d);
        assert!((h_of_z(1.0, 2) - 32f64.ln().powi(2)).abs() < 1e-12);
        assert!((h_of_z(1.0, 2) - 12.0113).abs() < 1e-4);
        assert!(h_of_z(1e-300, 3) > 0.0);
    }

    #[test]
    fn h_of_z_is_concave_below_d() {
        for d in [1, 2, 3] {
            let n = 2000;
            let z = |k: usize| d as f64 * k as f64 / n as f64;
            for k in 1..n {
                let mid = h_of_z(z(k), d);
                let chord = 0.5 * (h_of_z(z(k - 1), d) + h_of_z(z(k + 1), d));
                assert!(mid >= chord - 1e-12, "d={d} k={k}");
            }
        }
    }

    #[test]
    fn f_t_examples() {
        assert!((f_t(0.3, 0.0, 2.0, 2).unwrap() - 0.3).abs() < 1e-15);
        for a in [0.0, 0.5, 10.0] {
            assert!((f_t(32.0, a, 1.3, 2).unwrap() - 32.0).abs() < 1e-12);
        }
        assert!(f_t(0.0, 1.0, 1.0, 2).is_err());
        assert!(f_t(33.0, 1.0, 1.0, 2).is_err());
        // Typeset sign decreases in time.
        assert!(f_t_with(0.5, 1.0, 1.0, 2, FtSign::Typeset).unwrap() < 0.5);
        assert!(f_t(0.5, 1.0, 1.0, 2).unwrap() > 0.5);
    }

    #[test]
    fn f_t_matches_runge_kutta() {
        let a = ASeries::constant(2.0, 0.5, 10).unwrap();
        let q = gronwall_oracle(0.01, &a, 1.0, 2).unwrap();
        let ft = f_t(0.01, 1.0, 1.0, 2).unwrap();
        assert!(*q.last().unwrap() < 2.0);
        assert!((q.last().unwrap() - ft).abs() < 1e-6 * ft);
    }

    #[test]
    fn oracle_examples() {
        let zero = ASeries::constant(0.0, 1.0, 4).unwrap();
        assert!(gronwall_oracle(0.7, &zero, 1.0, 2).unwrap().iter().all(|&q| q == 0.7));
        let a = ASeries::constant(1.5, 1.0, 8).unwrap();
        let q = gronwall_oracle(2.0, &a, 0.8, 2).unwrap();
        for (t, q) in a.times().iter().zip(&q) {
            let exact = 2.0 * (0.8 * 1.5 * t).exp();
            assert!((q - exact).abs() < 1e-9 * exact);
        }
        assert!(gronwall_oracle(0.0, &a, 1.0, 2).is_err());
    }

    #[test]
    fn oracle_crosses_into_exponential_regime() {
        let a = ASeries::constant(2.0, 3.0, 60).unwrap();
        let (q0, c0, d) = (1e-4, 1.0, 2);
        let q = gronwall_oracle(q0, &a, c0, d).unwrap();
        let b_star = switching_integral(q0, c0, d).unwrap();
        assert!(b_star < a.cumulative().last().unwrap() / 2.0);
        for (k, &qk) in q.iter().enumerate() {
            let b = a.cumulative()[k];
            let closed = if b <= b_star {
                f_t(q0, b, c0, d).unwrap()
            } else {
                2.0 * (c0 * (b - b_star)).exp()
            };
            assert!((qk - closed).abs() < 1e-7 * closed, "k={k}: {qk} vs {closed}");
        }
    }

    #[test]
    fn envelope_examples() {
        let a = ASeries::constant(3.0, 1.0, 10).unwrap();
        let zero = stability_envelope(0.0, &a, 1.0, 2, 1.0, EnvelopeForm::Sharp).unwrap();
        assert!(zero.sample(a.times()).iter().all(|&e| e == 0.0));
        let no_a = ASeries::constant(0.0, 1.0, 10).unwrap();
        let flat = stability_envelope(0.4, &no_a, 1.0, 2, 1.0, EnvelopeForm::Literal).unwrap();
        assert!(flat.sample(no_a.times()).iter().all(|&e| (e - 0.4).abs() < 1e-15));
        let env = stability_envelope(0.4, &a, 0.5, 2, 1.0, EnvelopeForm::Sharp).unwrap();
        assert!((env.at(0.0) - 0.4).abs() < 1e-15);
        let s = env.sample(a.times());
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
        assert!(stability_envelope(-0.1, &a, 0.5, 2, 1.0, EnvelopeForm::Sharp).is_err());
        // Above d: pure exponential growth.
        let big = stability_envelope(2.0, &a, 0.5, 2, 1.0, EnvelopeForm::Literal).unwrap();
        assert!((big.at(1.0) - (4.0 * (0.5f64 * 3.0).exp()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn envelope_dominates_oracle() {
        let a = ASeries::from_fn(2.0, 40, |t| 1.0 + (3.0 * t).sin().powi(2)).unwrap();
        for w in [1e-3, 0.1, 0.9, 1.5] {
            let env = stability_envelope(w, &a, 1.2, 2, 2.0, EnvelopeForm::Sharp).unwrap();
            let q = gronwall_oracle(w * w, &a, 1.2, 2).unwrap();
            for (t, q) in a.times().iter().zip(q) {
                assert!(env.at(*t).powi(2) >= q * (1.0 - 1e-7));
            }
        }
    }

    #[test]
    fn sharp_branch_switch_is_continuous() {
        let (z, c0, d) = (0.05, 0.7, 2);
        let b = switching_integral(z, c0, d).unwrap();
        let below = sharp_envelope_sq(z, b * (1.0 - 1e-13), c0, d);
        let above = sharp_envelope_sq(z, b * (1.0 + 1e-13), c0, d);
        assert!((below - above).abs() < 1e-8);
        assert!((below - 2.0).abs() < 1e-8);
    }

    #[test]
    fn literal_form_jumps_at_the_switch() {
        // As the horizon crosses the switching time, the literal envelope at
        // that time jumps from d to d exp(c0 int A).
        let a = ASeries::constant(1.0, 4.0, 400).unwrap();
        let (z, c0, d) = (0.05, 0.7, 2);
        let t_star = switching_integral(z, c0, d).unwrap();
        let before = stability_envelope(z.sqrt(), &a, c0, d, t_star * (1.0 - 1e-9), EnvelopeForm::Literal).unwrap();
        let after = stability_envelope(z.sqrt(), &a, c0, d, t_star * (1.0 + 1e-9), EnvelopeForm::Literal).unwrap();
        let jump = after.at(t_star).powi(2) - before.at(t_star).powi(2);
        assert!((jump - 2.0 * ((c0 * t_star).exp() - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn a_series_integral_is_exact_for_linear_profiles() {
        let a = ASeries::from_fn(2.0, 7, |t| 1.0 + 3.0 * t).unwrap();
        for t in [0.0, 0.1, 0.77, 1.5, 2.0] {
            assert!((a.integral_at(t) - (t + 1.5 * t * t)).abs() < 1e-12);
            assert!((a.value_at(t) - (1.0 + 3.0 * t)).abs() < 1e-12);
        }
        assert!(ASeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ASeries::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn support_2d_examples() {
        assert!((support_envelope_2d(0.7, 0.0, 0.3, 0.4, 2.0).unwrap() - 0.7).abs() < 1e-12);
        assert!((support_envelope_2d(0.0, 1.0, 1.0, 0.5, 1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(support_envelope_2d(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(support_envelope_2d(0.0, 1.0, 1.0, 0.0, 1.0).is_err());
        let mut last = -1.0;
        for k in 0..50 {
            let v = support_envelope_2d(0.2, k as f64 * 0.1, 0.5, 0.3, 1.0).unwrap();
            assert!(v > last);
            last = v;
        }
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let v = support_envelope_2d(0.2, 1.0, 0.05 * k as f64, 0.3, 1.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn support_2d_satisfies_integral_inequality() {
        let (v0, eps, alpha, c) = (0.3, 0.4, 0.6, 0.8);
        let v = |t: f64| support_envelope_2d(v0, t, eps, alpha, c).unwrap();
        let quad = crate::quadrature::Composite::new(0.0, 1.0, 8, 8).unwrap();
        for (t0, t1) in [(0.0, 0.5), (0.2, 1.0), (1.0, 3.0)] {
            let integral = (t1 - t0) * quad.integrate(|s| (1.0 + v(t0 + s * (t1 - t0))).powf(alpha));
            let lhs = v(t1);
            let rhs = v(t0) + c * eps.powf(-(1.0 + alpha)) * integral;
            assert!(lhs >= rhs - 1e-9, "{lhs} < {rhs}");
        }
    }

    #[test]
    fn support_3d_examples() {
        let v = support_envelope_3d(1.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((v - (5f64.sqrt())).abs() < 1e-12);
        assert!((v - 2.23607).abs() < 1e-5);
        let v0 = 0.4 * 0.5f64.powf(-1.5);
        assert!((support_envelope_3d(0.4, 0.5, 1.5, 1e6, 0.0).unwrap() - v0).abs() < 1e-12);
        assert!((support_envelope_3d(0.4, 0.5, 1.5, 1e8, 0.0).unwrap() - v0).abs() < 1e-20 + 1e-12);
        assert!(support_envelope_3d(1.0, 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn field_bound_examples() {
        let eps = 0.2;
        let base = 1.5 * (1.0 + (1.0f64 / eps).ln().sqrt() / eps);
        let b = field_bound_2d(0.0, 0.0, 0.0, eps, 1.5).unwrap();
        assert!((b.closed_form - base).abs() < 1e-12);
        assert!((b.optimized - base).abs() < 1e-12);
        let mut last = 0.0;
        for k in 0..20 {
            let b = field_bound_2d(1.0, 2.0, k as f64, eps, 1.5).unwrap();
            assert!(b.closed_form > last);
            last = b.closed_form;
        }
    }

    #[test]
    fn batt_rein_examples() {
        assert_eq!(batt_rein_exponent(r(4, 9)).unwrap(), r(8, 27));
        assert_eq!(batt_rein_exponent(r(8, 27)).unwrap(), r(16, 81));
        assert_eq!(batt_rein_exponent(r(16, 81)).unwrap(), r(32, 243));
        assert!(r(32, 243) < r(1, 6));
        let chain = batt_rein_chain(r(4, 9), r(1, 6)).unwrap();
        assert_eq!(chain, vec![r(4, 9), r(8, 27), r(16, 81), r(32, 243)]);
        assert!(chain[..3].iter().all(|&b| b >= r(1, 6)));
        assert!(batt_rein_exponent(r(0, 1)).is_err());
    }

    #[test]
    fn phi_threshold_examples() {
        assert_eq!(phi_threshold(0.5, 2, 1.0, 3.0, 1.0).unwrap().exponent, 8.0);
        assert_eq!(phi_threshold(0.5, 3, 1.0, 3.0, 1.0).unwrap().exponent, 40.0);
        assert!(phi_threshold(0.5, 2, 1.0, 2.0, 1.0).is_err());
        assert!(phi_threshold(0.5, 4, 1.0, 3.0, 1.0).is_err());
        let mut last = 1.0;
        for k in 0..40 {
            let eps = 4.0 - 0.09 * k as f64;
            let p = phi_threshold(eps, 2, 1.0, 3.0, 0.1).unwrap();
            assert!(p.log_value < last, "eps={eps}");
            assert!(p.value <= 1.0 && p.value >= 0.0);
            last = p.log_value;
        }
        // Underflows well before any interesting eps.
        assert_eq!(phi_threshold(0.5, 2, 1.0, 3.0, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn calibration_finds_the_smallest_constant() {
        let a = ASeries::constant(2.0, 1.0, 20).unwrap();
        let truth = 0.37;
        let env = stability_envelope(0.1, &a, truth, 2, 1.0, EnvelopeForm::Sharp).unwrap();
        let measured: Vec<(f64, f64)> = a.times().iter().map(|&t| (t, env.at(t))).collect();
        let c0 = calibrate_c0(0.1, &a, &measured, 2).unwrap();
        assert!((c0 - truth).abs() < 1e-9, "{c0}");
        let flat: Vec<(f64, f64)> = a.times().iter().map(|&t| (t, 0.1)).collect();
        assert_eq!(calibrate_c0(0.1, &a, &flat, 2).unwrap(), 0.0);
        assert!(calibrate_c0(0.0, &a, &measured, 2).is_err());

        let (v0, eps, alpha) = (0.5, 0.25, 0.5);
        let samples: Vec<(f64, f64)> = (0..10)
            .map(|k| {
                let t = 0.1 * k as f64;
                (t, support_envelope_2d(v0, t / eps, eps, alpha, 0.2).unwrap())
            })
            .collect();
        let c = calibrate_c_alpha(v0, &samples, eps, alpha).unwrap();
        assert!((c - 0.2).abs() < 1e-12, "{c}");
    }

    #[test]
    fn loeper_examples() {
        let g = make_grid(2, 32).unwrap();
        let one = GriddedField::from_fn(&g, 1, |_, _| 1.0);
        let rep = loeper_field_check(&one, &one, 0.5, 20).unwrap();
        assert_eq!(rep.field_difference, 0.0);
        assert_eq!(rep.log_lipschitz, [0.0, 0.0]);
        let m = GriddedField::from_fn(&g, 1, |x, _| 1.0 + 0.4 * (2.0 * PI * x[0]).cos());
        let rep = loeper_field_check(&m, &m, 0.5, 20).unwrap();
        assert_eq!(rep.field_difference, 0.0);
        assert_eq!(rep.ratio, 0.0);
        let bad = GriddedField::from_fn(&g, 1, |_, _| 1.1);
        assert!(loeper_field_check(&bad, &one, 0.5, 1).is_err());
    }

    #[test]
    fn loeper_single_mode_pair() {
        let g = make_grid(2, 128).unwrap();
        let a = 0.3;
        let rho = |s: f64| GriddedField::from_fn(&g, 1, move |x, _| 1.0 + a * (2.0 * PI * (x[0] + s)).cos());
        let rep = loeper_field_check(&rho(0.0), &rho(0.08), 0.25, 200).unwrap();
        assert!(rep.ratio <= 1.0 + rep.w2_floor / rep.w2, "{rep:?}");
        // Field of a single mode: |grad Psi| = a sin / (2 pi), explicit difference.
        let exact = a * (PI * 0.08).sin() / (PI * 2f64.sqrt());
        assert!((rep.field_difference - exact).abs() < 1e-12);
        assert!(rep.log_lipschitz.iter().all(|c| c.is_finite() && *c > 0.0));
    }

    #[test]
    fn quantized_density_has_the_right_marginal() {
        let g = make_grid(2, 64).unwrap();
        let rho = GriddedField::from_fn(&g, 1, |x, _| 1.0 + 0.5 * (2.0 * PI * x[1]).sin());
        let e = quantize_density(&rho, 40, 0.5).unwrap();
        // First Fourier moment of the sample versus the density (-i/2 * 0.5).
        let m: num_complex::Complex64 = (0..e.len())
            .map(|i| num_complex::Complex64::from_polar(1.0 / e.len() as f64, -2.0 * PI * e.position(i)[1]))
            .sum();
        assert!((m.im - (-0.25)).abs() < 5e-3 && m.re.abs() < 5e-3, "{m}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn f_t_monotone_and_in_range(z in 1e-6f64..32.0, a in 0.0f64..5.0, da in 1e-3f64..1.0, c0 in 0.01f64..3.0) {
            let f = f_t(z, a, c0, 2).unwrap();
            prop_assert!(f > 0.0 && f <= 32.0);
            prop_assert!(f_t((z * 1.01).min(32.0), a, c0, 2).unwrap() >= f);
            if z < 32.0 {
                prop_assert!(f_t(z, a + da, c0, 2).unwrap() > f);
            }
        }

        #[test]
        fn f_t_agrees_with_oracle(z in 1e-5f64..1.5, a0 in 0.0f64..3.0, a1 in 0.0f64..3.0, c0 in 0.05f64..2.0, t in 0.05f64..1.0) {
            let a = ASeries::from_fn(t, 16, |s| a0 + (a1 - a0) * s / t).unwrap();
            let q = gronwall_oracle(z, &a, c0, 2).unwrap();
            for (k, qk) in q.iter().enumerate() {
                if *qk < 2.0 {
                    let ft = f_t(z, a.cumulative()[k], c0, 2).unwrap();
                    prop_assert!((qk - ft).abs() < 1e-6 * ft);
                }
            }
        }
    }
}
