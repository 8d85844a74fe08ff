//! Initial data: the analytic fluid family, its particle superposition, the
//! perturbation and the transport subsample.

use std::f64::consts::PI;

use quasineutral::ensemble::ParticleEnsemble;
use quasineutral::grid::{make_grid, TorusGrid, MAX_DIM};
use quasineutral::multifluid::{discretize_mu, FluidFamily, FluidMode, Markers};
use quasineutral::transport::w_exact;
use quasineutral::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, PerturbationKind, Scenario};
use crate::error::Result;

/// Relative tolerance of the tuned perturbation distance.
pub const PHI_TOLERANCE: f64 = 0.05;
/// The tuner stops below this relative error.
const PHI_TARGET: f64 = 0.01;

pub fn grid_of(config: &ExperimentConfig) -> Result<TorusGrid> {
    Ok(make_grid(config.dim, config.cells)?)
}

/// The analytic family `g_0` in epsilon mode.
pub fn initial_family(config: &ExperimentConfig) -> Result<FluidFamily> {
    let grid = grid_of(config)?;
    let quadrature = discretize_mu(config.dim, config.theta_nodes, config.theta_cutoff)?;
    let b = config.scenario_amplitude;
    let k = config.scenario_wavenumber as f64;
    let axis = match config.scenario {
        Scenario::PlasmaWave => 0,
        Scenario::Shear => 1,
    };
    let family = FluidFamily::from_fn(
        &grid,
        &quadrature,
        |_, _| 1.0,
        |node, x, c| {
            let theta = quadrature.node(node)[c];
            theta + if c == 0 { b * (2.0 * PI * k * x[axis]).sin() } else { 0.0 }
        },
        FluidMode::Epsilon(config.params.epsilon),
    )?;
    Ok(family)
}

/// Unit-mass, equal-weight copy of the listed particles (indices may repeat).
pub fn equal_weight_subset(ensemble: &ParticleEnsemble, indices: &[usize]) -> Result<ParticleEnsemble> {
    let d = ensemble.dim();
    let mut pos = Vec::with_capacity(indices.len() * d);
    let mut vel = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        pos.extend_from_slice(ensemble.position(i));
        vel.extend_from_slice(ensemble.velocity(i));
    }
    Ok(ParticleEnsemble::equal_weight(d, pos, vel, 1.0)?)
}

/// Systematic resampling: `n` indices drawn with probability proportional to
/// the weights, so that equal weights on the result represent the ensemble.
pub fn resample_indices(weights: &[f64], n: usize, seed: u64) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || n == 0 {
        return Err(Error::EmptyEnsemble.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a3f);
    let u: f64 = rng.gen();
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut i = 0;
    for j in 0..n {
        let target = (j as f64 + u) / n as f64 * total;
        while i + 1 < weights.len() && acc + weights[i] <= target {
            acc += weights[i];
            i += 1;
        }
        out.push(i);
    }
    Ok(out)
}

/// Restrict a family's markers to the listed sub-lattice points.
pub fn restrict_markers(markers: &Markers, indices: &[usize], dim: usize) -> Markers {
    Markers {
        node: indices.iter().map(|&i| markers.node[i]).collect(),
        positions: indices.iter().flat_map(|&i| markers.positions[i * dim..(i + 1) * dim].to_vec()).collect(),
        weights: indices.iter().map(|&i| markers.weights[i]).collect(),
    }
}

/// Fixed displacement field with random phases and a random set of
/// displaced particles.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub selected: Vec<bool>,
    pub phases: [f64; MAX_DIM],
    pub wavenumber: f64,
    pub amplitude: f64,
}

impl Perturbation {
    pub fn draw(n: usize, fraction: f64, wavenumber: i64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phases = [0.0; MAX_DIM];
        for p in phases.iter_mut() {
            *p = 2.0 * PI * rng.gen::<f64>();
        }
        let selected = (0..n).map(|_| rng.gen::<f64>() < fraction).collect();
        Self {
            selected,
            phases,
            wavenumber: wavenumber as f64,
            amplitude: 0.0,
        }
    }

    /// Displacement direction at `x`: component `a` varies along the next axis.
    fn direction(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let d = x.len();
        let mut out = [0.0; MAX_DIM];
        for a in 0..d {
            let along = x[(a + 1) % d];
            out[a] = (2.0 * PI * self.wavenumber * along + self.phases[a]).cos();
        }
        out
    }

    pub fn apply(&self, ensemble: &ParticleEnsemble, amplitude: f64) -> ParticleEnsemble {
        ensemble.shift_velocities(|i, x| {
            let mut s = [0.0; MAX_DIM];
            if self.selected[i] {
                let dir = self.direction(x);
                for a in 0..x.len() {
                    s[a] = amplitude * dir[a];
                }
            }
            s
        })
    }
}

/// Perturbed copy of `reference` whose `W_2` distance to it, measured on the
/// transport subsample, is `phi` to within [`PHI_TOLERANCE`].
pub fn perturb(
    config: &ExperimentConfig,
    reference: &ParticleEnsemble,
    subsample: &[usize],
    seed: u64,
) -> Result<(ParticleEnsemble, Perturbation, f64)> {
    let mut pert = Perturbation::draw(reference.len(), config.perturbation_fraction, config.perturbation_wavenumber, seed);
    if config.perturbation == PerturbationKind::None || config.phi == 0.0 {
        return Ok((reference.clone(), pert, 0.0));
    }
    let phi = config.phi;
    let base = equal_weight_subset(reference, subsample)?;
    // The subsample is perturbed through the same field and selection as
    // the full ensemble.
    let sub_selected: Vec<bool> = subsample.iter().map(|&i| pert.selected[i]).collect();
    let sub_pert = Perturbation {
        selected: sub_selected,
        ..pert.clone()
    };
    let w2 = |amp: f64| -> Result<f64> { Ok(w_exact(&sub_pert.apply(&base, amp), &base, 2)?.0) };

    let mut amp = phi / config.perturbation_fraction.sqrt();
    let mut prev: Option<(f64, f64)> = None;
    let mut best = (f64::INFINITY, amp, 0.0);
    for _ in 0..40 {
        let w = w2(amp)?;
        let rel = (w / phi - 1.0).abs();
        if rel < best.0 {
            best = (rel, amp, w);
        }
        if rel < PHI_TARGET {
            break;
        }
        // secant on log W against log amplitude, falling back to a
        // proportional update when the slope is unusable
        let next = match prev {
            Some((pa, pw)) if w > 0.0 && pw > 0.0 && (amp / pa).ln().abs() > 1e-12 => {
                let slope = (w / pw).ln() / (amp / pa).ln();
                if slope > 0.05 {
                    amp * ((phi / w).ln() / slope).exp()
                } else {
                    amp * phi / w
                }
            }
            _ if w > 0.0 => amp * phi / w,
            _ => amp * 2.0,
        };
        prev = Some((amp, w));
        amp = next.clamp(amp / 10.0, amp * 10.0);
    }
    let (rel, amp, w) = best;
    if rel > PHI_TOLERANCE {
        return Err(Error::NonConvergence {
            method: "perturbation tuning",
            detail: format!("best W_2 {w:e} for target {phi:e}"),
        }
        .into());
    }
    pert.amplitude = amp;
    Ok((pert.apply(reference, amp), pert, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_follows_weights() {
        let w = [1.0, 3.0, 0.0, 4.0];
        let idx = resample_indices(&w, 8, 1).unwrap();
        let count = |k| idx.iter().filter(|&&i| i == k).count();
        assert_eq!((count(0), count(1), count(2), count(3)), (1, 3, 0, 4));
        assert!(resample_indices(&[0.0, 0.0], 4, 1).is_err());
    }

    #[test]
    fn equal_weights_resample_to_distinct_points() {
        let idx = resample_indices(&[0.25; 16], 16, 9).unwrap();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn plasma_wave_is_ill_prepared_and_shear_is_not() {
        use quasineutral::multifluid::current_divergence;
        let mut c = ExperimentConfig::with_required(0.25, 16, Scenario::PlasmaWave, 0.0);
        assert!(current_divergence(&initial_family(&c).unwrap()).unwrap() > 0.1);
        c.scenario = Scenario::Shear;
        assert!(current_divergence(&initial_family(&c).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn tuned_perturbation_hits_target() {
        use quasineutral::multifluid::superpose;
        let c = ExperimentConfig::with_required(0.25, 16, Scenario::Shear, 0.02);
        let g = superpose(&initial_family(&c).unwrap(), 4).unwrap();
        let idx = resample_indices(g.weights(), 256, 3).unwrap();
        let (f, pert, w) = perturb(&c, &g, &idx, 3).unwrap();
        assert!((w / 0.02 - 1.0).abs() < PHI_TARGET);
        let sub_f = equal_weight_subset(&f, &idx).unwrap();
        let sub_g = equal_weight_subset(&g, &idx).unwrap();
        let measured = w_exact(&sub_f, &sub_g, 2).unwrap().0;
        assert!((measured / 0.02 - 1.0).abs() < PHI_TOLERANCE, "{measured}");
        assert!(pert.amplitude > 0.0);
        // positions untouched
        assert_eq!(f.positions(), g.positions());
    }
}
