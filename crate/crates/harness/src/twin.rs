//! The twin-run experiment: a perturbed kinetic solution against the fluid
//! family it was sampled from and against the incompressible limit.

use quasineutral::bounds::{a_of_t, stability_envelope, ASeries, EnvelopeConstants, EnvelopeForm};
use quasineutral::correctors::{advance_correctors, corrector_initial, filter_ensemble, CorrectorState};
use quasineutral::ensemble::ParticleEnsemble;
use quasineutral::multifluid::{limit_initial, limit_step, multifluid_step, superpose, FluidFamily};
use quasineutral::transport::w_exact;
use quasineutral::vlasov::{density_mode, energy, push, run, support_radius, KineticState, RunOutput};
use quasineutral::Error;

use crate::config::{DtPolicy, ExperimentConfig};
use crate::error::Result;
use crate::scenario::{equal_weight_subset, grid_of, initial_family, perturb, resample_indices, restrict_markers};

/// Slack of the triangle-decomposition check.
pub const TRIANGLE_SLACK: f64 = 1e-9;

/// Distances and envelope values at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinSample {
    pub t: f64,
    /// `W_2(f_eps, g_eps)`.
    pub w2: f64,
    /// `W_1(f_eps, g_eps)` without filtering.
    pub w1_unfiltered: f64,
    /// `W_1(f~_eps, g~_eps)`.
    pub w1_filtered: f64,
    /// `W_1(f~_eps, g)`, `g` the limit solution.
    pub w1_to_limit: f64,
    /// `W_1(g~_eps, g)`.
    pub w1_fluid_to_limit: f64,
    pub rho_f_inf: f64,
    pub rho_g_inf: f64,
    pub rho_g_dev: f64,
    pub a: f64,
    pub int_a: f64,
    pub env_w2: f64,
    pub support: f64,
    pub env_support: f64,
}

impl TwinSample {
    pub fn triangle_ok(&self) -> bool {
        self.w1_to_limit <= self.w1_filtered + self.w1_fluid_to_limit + TRIANGLE_SLACK
    }

    pub fn envelope_ok(&self) -> bool {
        self.w2 <= self.env_w2 * (1.0 + 1e-12) + 1e-15
    }

    pub fn support_ok(&self) -> bool {
        self.support <= self.env_support * (1.0 + 1e-12) + 1e-15
    }
}

/// Per-step diagnostics of the kinetic run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepSeries {
    pub t: Vec<f64>,
    pub mass: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
    pub field_energy: Vec<f64>,
    /// Real part of the kinetic density mode at the scenario wavevector.
    pub density_mode: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TwinReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    pub dt: f64,
    pub particles: usize,
    pub perturbation_amplitude: f64,
    /// `||div d+(0)||_2` of the correctors.
    pub corrector_divergence: f64,
    pub samples: Vec<TwinSample>,
    pub steps: StepSeries,
}

impl TwinReport {
    pub fn triangle_ok(&self) -> bool {
        self.samples.iter().all(TwinSample::triangle_ok)
    }

    pub fn envelope_ok(&self) -> bool {
        self.samples.iter().all(TwinSample::envelope_ok)
    }

    pub fn support_ok(&self) -> bool {
        self.samples.iter().all(TwinSample::support_ok)
    }

    pub fn passed(&self) -> bool {
        self.triangle_ok() && self.envelope_ok() && self.support_ok()
    }

    pub fn sup(&self, f: impl Fn(&TwinSample) -> f64) -> f64 {
        self.samples.iter().map(f).fold(0.0, f64::max)
    }

    /// `A(t)` at the sample times.
    pub fn a_series(&self) -> Result<ASeries> {
        Ok(ASeries::new(
            self.samples.iter().map(|s| s.t).collect(),
            self.samples.iter().map(|s| s.a).collect(),
        )?)
    }

    /// Dominant angular frequency of the kinetic density mode.
    pub fn oscillation_frequency(&self) -> Option<f64> {
        dominant_frequency(&self.steps.t, &self.steps.density_mode)
    }
}

/// Step count, step size and sampling stride.
pub fn time_grid(config: &ExperimentConfig, v0: f64) -> Result<(usize, f64, usize)> {
    let horizon = config.params.final_time;
    let wanted = match config.dt {
        DtPolicy::Fixed(dt) => dt,
        DtPolicy::Courant(c) => {
            let h = 1.0 / config.cells as f64;
            let cfl = if v0 > 0.0 { c * h / v0 } else { horizon };
            cfl.min(config.params.epsilon / 20.0)
        }
    };
    let intervals = config.samples - 1;
    let per_sample = ((horizon / wanted) / intervals as f64).ceil().max(1.0) as usize;
    let steps = per_sample * intervals;
    Ok((steps, horizon / steps as f64, per_sample))
}

/// Envelope constants for a config.
pub fn envelope_constants(config: &ExperimentConfig) -> EnvelopeConstants {
    EnvelopeConstants {
        c0: config.envelope_c0,
        c_alpha: config.envelope_c_alpha,
        alpha: config.params.alpha,
        gamma: config.params.gamma,
        ..EnvelopeConstants::new(config.dim)
    }
}

struct Recorder<'a> {
    indices: &'a [usize],
}

impl Recorder<'_> {
    fn sample(
        &self,
        t: f64,
        kinetic: &KineticState,
        fluid: &FluidFamily,
        limit: &FluidFamily,
        correctors: &CorrectorState,
    ) -> Result<TwinSample> {
        let markers = |family: &FluidFamily| -> Result<ParticleEnsemble> {
            let m = family.marker_ensemble()?;
            let d = m.dim();
            Ok(ParticleEnsemble::equal_weight(d, m.positions().to_vec(), m.velocities().to_vec(), 1.0)?)
        };
        let f = equal_weight_subset(&kinetic.ensemble, self.indices)?;
        let g_eps = markers(fluid)?;
        let g = markers(limit)?;
        let f_tilde = filter_ensemble(&f, correctors, t)?;
        let g_tilde = filter_ensemble(&g_eps, correctors, t)?;
        let rho_g = fluid.total_density();
        Ok(TwinSample {
            t,
            w2: w_exact(&f, &g_eps, 2)?.0,
            w1_unfiltered: w_exact(&f, &g_eps, 1)?.0,
            w1_filtered: w_exact(&f_tilde, &g_tilde, 1)?.0,
            w1_to_limit: w_exact(&f_tilde, &g, 1)?.0,
            w1_fluid_to_limit: w_exact(&g_tilde, &g, 1)?.0,
            rho_f_inf: kinetic.density.sup_norm(),
            rho_g_inf: rho_g.sup_norm(),
            rho_g_dev: rho_g.values().iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max),
            a: 0.0,
            int_a: 0.0,
            env_w2: 0.0,
            support: support_radius(&kinetic.ensemble)?,
            env_support: 0.0,
        })
    }
}

/// Fill `A`, its integral and both envelopes from the recorded samples.
pub fn apply_envelopes(samples: &mut [TwinSample], config: &ExperimentConfig) -> Result<()> {
    let eps = config.params.epsilon;
    for s in samples.iter_mut() {
        s.a = a_of_t(s.rho_f_inf, s.rho_f_inf.max(s.rho_g_inf), s.rho_g_dev, eps)?;
    }
    let a = ASeries::new(samples.iter().map(|s| s.t).collect(), samples.iter().map(|s| s.a).collect())?;
    let constants = envelope_constants(config);
    let horizon = a.end();
    let env = stability_envelope(samples[0].w2, &a, constants.c0, constants.d, horizon, EnvelopeForm::Sharp)?;
    let v0 = samples[0].support;
    for (s, int_a) in samples.iter_mut().zip(a.cumulative()) {
        s.int_a = *int_a;
        s.env_w2 = env.at(s.t);
        s.env_support = constants.support_envelope(v0, s.t, eps)?;
    }
    Ok(())
}

/// Run the twin experiment described by `config`.
pub fn run_twin(config: &ExperimentConfig) -> Result<TwinReport> {
    config.validate()?;
    if config.dim < 2 {
        return Err(Error::InvalidParameter {
            name: "grid.dim",
            reason: "the envelopes need dim 2 or 3".into(),
        }
        .into());
    }
    let grid = grid_of(config)?;
    let eps = config.params.epsilon;

    // (1) analytic family and its kinetic superposition
    let mut fluid = initial_family(config)?;
    let reference = superpose(&fluid, config.particles_per_cell)?;
    let indices = resample_indices(reference.weights(), config.transport_points, config.seed)?;
    fluid.attach_markers(config.particles_per_cell)?;
    let all_markers = fluid.markers.take().ok_or(Error::EmptyEnsemble)?;
    let markers = restrict_markers(&all_markers, &indices, config.dim);
    drop(all_markers);
    let mut limit = limit_initial(&fluid)?;
    fluid.markers = Some(markers.clone());
    limit.markers = Some(markers);

    // (2) perturbed kinetic data
    let (initial, pert, _) = perturb(config, &reference, &indices, config.seed)?;
    let perturbation_amplitude = pert.amplitude;
    let particles = initial.len();
    let mut kinetic = KineticState::new(initial, grid.clone(), config.params)?;

    // (4) correctors from the fluid field and current at t = 0
    let mut correctors = corrector_initial(&fluid.field()?, &fluid.current(), eps, config.corrector_frequency)?;
    let corrector_divergence = correctors.initial_divergence;

    // (3) + (5) evolve all three and record
    let (steps, dt, stride) = time_grid(config, support_radius(&kinetic.ensemble)?)?;
    let recorder = Recorder { indices: &indices };
    let k = mode_wavevector(config);
    let mut samples = Vec::with_capacity(config.samples);
    let mut series = StepSeries::default();
    for step in 0..=steps {
        let t = step as f64 * dt;
        let (ekin, efield, _) = energy(&kinetic);
        series.t.push(t);
        series.mass.push(kinetic.density.integral(0));
        series.kinetic_energy.push(ekin);
        series.field_energy.push(efield);
        series.density_mode.push(density_mode(&kinetic.ensemble, &k).re);
        if step % stride == 0 {
            samples.push(recorder.sample(t, &kinetic, &fluid, &limit, &correctors)?);
        }
        if step == steps {
            break;
        }
        let current = fluid.current();
        kinetic = push(&kinetic, dt)?;
        kinetic.time = t + dt;
        correctors = advance_correctors(&correctors, &current, dt)?;
        fluid = multifluid_step(&fluid, dt)?;
        limit = limit_step(&limit, dt)?;
    }
    apply_envelopes(&mut samples, config)?;
    Ok(TwinReport {
        config: config.clone(),
        config_hash: config.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        dt,
        particles,
        perturbation_amplitude,
        corrector_divergence,
        samples,
        steps: series,
    })
}

/// Single kinetic run of the perturbed data, without the fluid twins.
/// Returns the initial ensemble and the run output.
pub fn run_single(config: &ExperimentConfig) -> Result<(ParticleEnsemble, RunOutput)> {
    config.validate()?;
    let fluid = initial_family(config)?;
    let reference = superpose(&fluid, config.particles_per_cell)?;
    let indices = resample_indices(reference.weights(), config.transport_points, config.seed)?;
    let (initial, _, _) = perturb(config, &reference, &indices, config.seed)?;
    let state = KineticState::new(initial.clone(), grid_of(config)?, config.params)?;
    let (steps, dt, stride) = time_grid(config, support_radius(&state.ensemble)?)?;
    let out = run(&state, steps as f64 * dt, dt, stride)?;
    Ok((initial, out))
}

fn mode_wavevector(config: &ExperimentConfig) -> Vec<i64> {
    let mut k = vec![0; config.dim];
    let axis = match config.scenario {
        crate::config::Scenario::PlasmaWave => 0,
        crate::config::Scenario::Shear => 1,
    };
    k[axis] = config.scenario_wavenumber;
    k
}

/// Angular frequency of the best least-squares fit
/// `a cos(w t) + b sin(w t) + c` to the series. `None` for a flat series.
pub fn dominant_frequency(t: &[f64], x: &[f64]) -> Option<f64> {
    if t.len() < 4 || t.len() != x.len() {
        return None;
    }
    let span = t[t.len() - 1] - t[0];
    let dt = span / (t.len() - 1) as f64;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let scale = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if !(scale > 1e-14) || !(span > 0.0) {
        return None;
    }
    let residual = |w: f64| fit_residual(t, x, w);
    let (lo, hi) = (0.5 / span, std::f64::consts::PI / dt);
    let n = 4000;
    let ratio = (hi / lo).powf(1.0 / n as f64);
    let mut best = (f64::INFINITY, lo);
    let mut w = lo;
    for _ in 0..=n {
        let r = residual(w);
        if r < best.0 {
            best = (r, w);
        }
        w *= ratio;
    }
    // golden-section refinement inside the neighbouring scan cells
    let (mut a, mut b) = (best.1 / ratio, best.1 * ratio);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (residual(c), residual(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = residual(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = residual(d);
        }
    }
    Some(0.5 * (a + b))
}

/// Residual sum of squares of the linear fit onto `{cos wt, sin wt, 1}`.
fn fit_residual(t: &[f64], x: &[f64], w: f64) -> f64 {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (&ti, &xi) in t.iter().zip(x) {
        let row = [(w * ti).cos(), (w * ti).sin(), 1.0];
        for i in 0..3 {
            atb[i] += row[i] * xi;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let coef = match solve3(ata, atb) {
        Some(c) => c,
        None => return f64::INFINITY,
    };
    t.iter()
        .zip(x)
        .map(|(&ti, &xi)| {
            let r = xi - coef[0] * (w * ti).cos() - coef[1] * (w * ti).sin() - coef[2];
            r * r
        })
        .sum()
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
