//! Weighted empirical measures on `T^d x R^d`.

use crate::error::{invalid, Error, Result};
use crate::grid::{wrap, MAX_DIM};

/// Particles with positions in `[0,1)^d`, velocities in `R^d` and
/// non-negative weights. Storage is point-major (`d` consecutive coordinates
/// per particle).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    weights: Vec<f64>,
    seed: Option<u64>,
}

impl ParticleEnsemble {
    /// Build an ensemble, wrapping positions into the unit cell.
    pub fn new(dim: usize, mut positions: Vec<f64>, velocities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid("dim", format!("{dim} not in {{1,2,3}}")));
        }
        let n = weights.len();
        if positions.len() != n * dim || velocities.len() != n * dim {
            return Err(invalid(
                "ensemble",
                format!(
                    "{} positions / {} velocities for {} particles in {}D",
                    positions.len(),
                    velocities.len(),
                    n,
                    dim
                ),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights", format!("weight {w} is not a finite non-negative number")));
        }
        if velocities.iter().any(|v| !v.is_finite()) {
            return Err(invalid("velocities", "non-finite velocity"));
        }
        positions.iter_mut().for_each(|x| *x = wrap(*x));
        Ok(Self {
            dim,
            positions,
            velocities,
            weights,
            seed: None,
        })
    }

    /// `n` particles of weight `mass / n`.
    pub fn equal_weight(dim: usize, positions: Vec<f64>, velocities: Vec<f64>, mass: f64) -> Result<Self> {
        let n = positions.len() / dim.max(1);
        Self::new(dim, positions, velocities, vec![mass / n.max(1) as f64; n])
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when all weights coincide exactly.
    pub fn has_equal_weights(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }

    /// Raw mutable access for pushers; callers must keep positions wrapped.
    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &[f64]) {
        (&mut self.positions, &mut self.velocities, &self.weights)
    }

    /// Replace the velocities, keeping positions and weights.
    pub fn with_velocities(&self, velocities: Vec<f64>) -> Result<Self> {
        if velocities.len() != self.velocities.len() {
            return Err(invalid("velocities", "length mismatch"));
        }
        Ok(Self {
            velocities,
            ..self.clone()
        })
    }

    /// Apply `v -> v + shift(i)` to every particle.
    pub fn shift_velocities(&self, mut shift: impl FnMut(usize, &[f64]) -> [f64; MAX_DIM]) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            let s = shift(i, self.position(i));
            for a in 0..self.dim {
                out.velocities[i * self.dim + a] += s[a];
            }
        }
        out
    }

    /// Keep the listed particles, renormalising weights to the original mass.
    pub fn subsample(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let d = self.dim;
        let mut pos = Vec::with_capacity(indices.len() * d);
        let mut vel = Vec::with_capacity(indices.len() * d);
        let mut w = Vec::with_capacity(indices.len());
        for &i in indices {
            pos.extend_from_slice(self.position(i));
            vel.extend_from_slice(self.velocity(i));
            w.push(self.weights[i]);
        }
        let kept: f64 = w.iter().sum();
        let mass = self.total_mass();
        if kept > 0.0 {
            w.iter_mut().for_each(|x| *x *= mass / kept);
        }
        let mut out = Self::new(d, pos, vel, w)?;
        out.seed = self.seed;
        Ok(out)
    }

    /// Evenly strided subsample of at most `max_points` particles.
    pub fn strided(&self, max_points: usize) -> Result<Self> {
        if self.len() <= max_points {
            return Ok(self.clone());
        }
        let stride = self.len().div_ceil(max_points);
        let idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        self.subsample(&idx)
    }

    /// Concatenate ensembles of the same dimension (weights kept as-is).
    pub fn concat(parts: &[ParticleEnsemble]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyEnsemble)?;
        let mut pos = Vec::new();
        let mut vel = Vec::new();
        let mut w = Vec::new();
        for p in parts {
            if p.dim != first.dim {
                return Err(invalid("dim", "dimension mismatch in concat"));
            }
            pos.extend_from_slice(&p.positions);
            vel.extend_from_slice(&p.velocities);
            w.extend_from_slice(&p.weights);
        }
        Self::new(first.dim, pos, vel, w)
    }

    /// Sum of `w_i v_i`.
    pub fn momentum(&self) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        for i in 0..self.len() {
            for (a, v) in self.velocity(i).iter().enumerate() {
                p[a] += self.weights[i] * v;
            }
        }
        p
    }

    /// Sum of `w_i |v_i|^2 / 2`.
    pub fn kinetic_energy(&self) -> f64 {
        (0..self.len())
            .map(|i| 0.5 * self.weights[i] * self.velocity(i).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_wrapped() {
        let e = ParticleEnsemble::equal_weight(2, vec![1.25, -0.25], vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(e.position(0), &[0.25, 0.75]);
    }

    #[test]
    fn rejects_negative_weights_and_bad_lengths() {
        assert!(ParticleEnsemble::new(1, vec![0.1], vec![0.0], vec![-1.0]).is_err());
        assert!(ParticleEnsemble::new(1, vec![0.1, 0.2], vec![0.0], vec![1.0]).is_err());
        assert!(ParticleEnsemble::new(4, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn subsample_keeps_mass() {
        let e = ParticleEnsemble::equal_weight(1, vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
        let s = e.strided(2).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.total_mass() - 1.0).abs() < 1e-15);
        assert_eq!(s.velocity(1), &[3.0]);
    }
}
