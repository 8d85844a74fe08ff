//! Deterministic sampling of separable phase-space densities.
//!
//! Every draw comes from a ChaCha stream keyed by the seed (positions and
//! velocities use distinct streams), so a given `(density, n, seed)` always
//! produces the same bits.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Result};
use crate::params::QuasineutralParams;

/// One cosine term `amplitude * cos(2 pi k.x + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosMode {
    pub wavevector: Vec<i64>,
    pub amplitude: f64,
    pub phase: f64,
}

/// Spatial density `1 + sum_m a_m cos(2 pi k_m.x + phi_m)` (unit mean).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpatialProfile {
    pub modes: Vec<CosMode>,
}

impl SpatialProfile {
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn single_mode(wavevector: Vec<i64>, amplitude: f64) -> Self {
        Self {
            modes: vec![CosMode {
                wavevector,
                amplitude,
                phase: 0.0,
            }],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        1.0 + self
            .modes
            .iter()
            .map(|m| {
                let arg: f64 = m.wavevector.iter().zip(x).map(|(&k, &x)| k as f64 * x).sum();
                m.amplitude * (2.0 * PI * arg + m.phase).cos()
            })
            .sum::<f64>()
    }

    /// Upper bound `1 + sum |a_m|` used for rejection sampling.
    pub fn upper_bound(&self) -> f64 {
        1.0 + self.modes.iter().map(|m| m.amplitude.abs()).sum::<f64>()
    }

    /// Lower bound `1 - sum |a_m|`; non-negative profiles are accepted.
    pub fn lower_bound(&self) -> f64 {
        1.0 - self.modes.iter().map(|m| m.amplitude.abs()).sum::<f64>()
    }
}

/// Velocity distribution, identical at every point of space.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityProfile {
    /// Monokinetic: every particle has this velocity.
    Dirac(Vec<f64>),
    /// Isotropic Gaussian of standard deviation `thermal_speed` per axis,
    /// truncated to `|v - drift| <= cutoff`.
    TruncatedMaxwellian {
        thermal_speed: f64,
        cutoff: f64,
        drift: Vec<f64>,
    },
    /// Uniform on the ball `|v - drift| <= radius`.
    UniformBall { radius: f64, drift: Vec<f64> },
}

impl VelocityProfile {
    /// Radius of the smallest centred ball containing the support.
    pub fn support_radius(&self) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        match self {
            VelocityProfile::Dirac(v) => norm(v),
            VelocityProfile::TruncatedMaxwellian { cutoff, drift, .. } => norm(drift) + cutoff,
            VelocityProfile::UniformBall { radius, drift } => norm(drift) + radius,
        }
    }
}

/// Separable density `rho(x) * m(v)` on `T^d x R^d` with unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticDensity {
    pub dim: usize,
    pub spatial: SpatialProfile,
    pub velocity: VelocityProfile,
}

impl AnalyticDensity {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 3 {
            return Err(invalid("dim", format!("{} not in {{1,2,3}}", self.dim)));
        }
        if self.spatial.lower_bound() < 0.0 {
            return Err(invalid("spatial", "profile may become negative"));
        }
        for m in &self.spatial.modes {
            if m.wavevector.len() != self.dim {
                return Err(invalid("spatial", "wavevector dimension mismatch"));
            }
        }
        let d = self.dim;
        match &self.velocity {
            VelocityProfile::Dirac(v) if v.len() != d => Err(invalid("velocity", "dimension mismatch")),
            VelocityProfile::TruncatedMaxwellian {
                thermal_speed,
                cutoff,
                drift,
            } => {
                if drift.len() != d {
                    return Err(invalid("velocity", "dimension mismatch"));
                }
                if !cutoff.is_finite() {
                    return Err(invalid("velocity", "unbounded velocity support"));
                }
                if !(*thermal_speed > 0.0 && *cutoff > 0.0) {
                    return Err(invalid("velocity", "thermal speed and cutoff must be > 0"));
                }
                Ok(())
            }
            VelocityProfile::UniformBall { radius, drift } => {
                if drift.len() != d {
                    return Err(invalid("velocity", "dimension mismatch"));
                }
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(invalid("velocity", "ball radius must be finite and > 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Check the compact-support hypothesis `|v| <= c0 / eps^gamma`.
    pub fn check_support(&self, params: &QuasineutralParams) -> Result<()> {
        let r = self.velocity.support_radius();
        let bound = params.velocity_support_bound();
        if r > bound {
            return Err(invalid(
                "velocity",
                format!("support radius {r} exceeds c0/eps^gamma = {bound}"),
            ));
        }
        Ok(())
    }
}

/// Draw `n` equal-weight particles (total mass 1) from `density`.
pub fn sample_ensemble(density: &AnalyticDensity, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    density.validate()?;
    if n == 0 {
        return Err(invalid("n", "at least one particle is required"));
    }
    let d = density.dim;
    let mut pos_rng = ChaCha8Rng::seed_from_u64(seed);
    pos_rng.set_stream(0);
    let mut vel_rng = ChaCha8Rng::seed_from_u64(seed);
    vel_rng.set_stream(1);

    let bound = density.spatial.upper_bound();
    let mut positions = Vec::with_capacity(n * d);
    let mut x = [0.0; 3];
    for _ in 0..n {
        loop {
            for xa in x.iter_mut().take(d) {
                *xa = pos_rng.gen::<f64>();
            }
            if density.spatial.modes.is_empty() || pos_rng.gen::<f64>() * bound <= density.spatial.value(&x[..d]) {
                break;
            }
        }
        positions.extend_from_slice(&x[..d]);
    }

    let mut velocities = Vec::with_capacity(n * d);
    for _ in 0..n {
        match &density.velocity {
            VelocityProfile::Dirac(v) => velocities.extend_from_slice(v),
            VelocityProfile::TruncatedMaxwellian {
                thermal_speed,
                cutoff,
                drift,
            } => loop {
                let mut v = [0.0; 3];
                for va in v.iter_mut().take(d) {
                    let z: f64 = vel_rng.sample(StandardNormal);
                    *va = thermal_speed * z;
                }
                let r2: f64 = v[..d].iter().map(|x| x * x).sum();
                if r2 <= cutoff * cutoff {
                    velocities.extend(v[..d].iter().zip(drift).map(|(v, u)| v + u));
                    break;
                }
            },
            VelocityProfile::UniformBall { radius, drift } => loop {
                let mut v = [0.0; 3];
                for va in v.iter_mut().take(d) {
                    *va = radius * (2.0 * vel_rng.gen::<f64>() - 1.0);
                }
                let r2: f64 = v[..d].iter().map(|x| x * x).sum();
                if r2 <= radius * radius {
                    velocities.extend(v[..d].iter().zip(drift).map(|(v, u)| v + u));
                    break;
                }
            },
        }
    }
    Ok(ParticleEnsemble::equal_weight(d, positions, velocities, 1.0)?.with_seed(seed))
}

/// Cold lattice start with `per_axis^dim` equal-weight particles displaced
/// along `axis` so that the density is `1 + amplitude * cos(2 pi x_axis)` to
/// first order in the amplitude. Velocities are zero.
pub fn quiet_cold_mode(dim: usize, per_axis: usize, axis: usize, amplitude: f64) -> Result<ParticleEnsemble> {
    if dim == 0 || dim > 3 || axis >= dim {
        return Err(invalid("axis", format!("axis {axis} invalid for dim {dim}")));
    }
    if per_axis == 0 {
        return Err(invalid("per_axis", "at least one particle per axis is required"));
    }
    if !(amplitude.abs() < 1.0) {
        return Err(invalid("amplitude", format!("{amplitude} must be below 1 in magnitude")));
    }
    let n = per_axis.pow(dim as u32);
    let mut positions = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut rest = i;
        let mut q = [0.0; 3];
        for a in (0..dim).rev() {
            q[a] = (rest % per_axis) as f64 / per_axis as f64;
            rest /= per_axis;
        }
        q[axis] -= amplitude / (2.0 * PI) * (2.0 * PI * q[axis]).sin();
        positions.extend_from_slice(&q[..dim]);
    }
    ParticleEnsemble::equal_weight(dim, positions, vec![0.0; n * dim], 1.0)
}
