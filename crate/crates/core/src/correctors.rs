//! Plasma-oscillation correctors `d+-` and the velocity filter they define.
//!
//! `d+` is curl free and is stored as `grad phi + m` with a complex scalar
//! potential `phi` and a constant vector `m`; `d- = conj(d+)`. The shift
//! applied to velocities is `C(t, x) = -2 Im(d+(x) exp(i omega t))`.

use std::path::Path;

use num_complex::Complex64;

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::field::{forward_transform, forward_transform_complex, inverse_transform_complex, GriddedField, SpectralField};
use crate::grid::{TorusGrid, MAX_DIM};
use crate::snapshot::{complex_to_field, save, Snapshot};
use crate::vlasov::interpolate_field;

/// Angular frequency of the oscillating phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectorFrequency {
    /// `1 / eps`, the linear plasma frequency of the scaled system.
    #[default]
    InverseEpsilon,
    /// `1 / sqrt(eps)`.
    InverseSqrtEpsilon,
}

impl CorrectorFrequency {
    pub fn omega(self, epsilon: f64) -> f64 {
        match self {
            Self::InverseEpsilon => 1.0 / epsilon,
            Self::InverseSqrtEpsilon => 1.0 / epsilon.sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorrectorState {
    pub grid: TorusGrid,
    /// Complex potential of `d+`.
    pub potential: SpectralField,
    /// Constant part of `d+`.
    pub mean: Vec<Complex64>,
    pub epsilon: f64,
    pub time: f64,
    pub frequency: CorrectorFrequency,
    /// `||div d+(0)||_2`.
    pub initial_divergence: f64,
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl CorrectorState {
    pub fn zero(grid: &TorusGrid, epsilon: f64, frequency: CorrectorFrequency) -> Self {
        Self {
            grid: grid.clone(),
            potential: SpectralField::zeros(grid, 1),
            mean: vec![zero(); grid.dim()],
            epsilon,
            time: 0.0,
            frequency,
            initial_divergence: 0.0,
        }
    }

    /// Spatially constant `d+ = a`.
    pub fn constant(grid: &TorusGrid, a: &[Complex64], epsilon: f64, frequency: CorrectorFrequency) -> Result<Self> {
        if a.len() != grid.dim() {
            return Err(invalid("d_plus", "constant needs d components"));
        }
        let mut s = Self::zero(grid, epsilon, frequency);
        s.mean = a.to_vec();
        Ok(s)
    }

    /// State whose divergence is the given complex field.
    pub fn from_divergence(divergence: SpectralField, epsilon: f64, frequency: CorrectorFrequency) -> Result<Self> {
        if divergence.components() != 1 {
            return Err(invalid("divergence", "must be scalar"));
        }
        let grid = divergence.grid().clone();
        let potential = divergence.inverse_laplacian();
        let mut s = Self::zero(&grid, epsilon, frequency);
        s.potential = potential;
        s.initial_divergence = s.divergence().energy().sqrt();
        Ok(s)
    }

    pub fn omega(&self) -> f64 {
        self.frequency.omega(self.epsilon)
    }

    /// Spectral `div d+`.
    pub fn divergence(&self) -> SpectralField {
        self.potential.laplacian()
    }

    /// Spectral `d+` without its constant part.
    pub fn d_plus_spectrum(&self) -> SpectralField {
        self.potential.gradient().expect("scalar potential")
    }

    /// Complex samples of `d+`, component-major.
    pub fn d_plus(&self) -> Vec<Complex64> {
        let n = self.grid.len();
        let mut data = inverse_transform_complex(&self.d_plus_spectrum());
        for (c, m) in self.mean.iter().enumerate() {
            data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += m);
        }
        data
    }

    /// Real shift `C(t, x) = -2 Im(d+ exp(i omega t))` on the grid.
    pub fn shift_field(&self, t: f64) -> GriddedField {
        let phase = Complex64::from_polar(1.0, self.omega() * t);
        let values = self.d_plus().into_iter().map(|z| -2.0 * (z * phase).im).collect();
        GriddedField::from_values(&self.grid, self.grid.dim(), values).expect("consistent sizes")
    }

    /// `sup_x |D_x d+|` (Frobenius norm), computed spectrally.
    pub fn gradient_sup(&self) -> f64 {
        let d = self.grid.dim();
        let n = self.grid.len();
        let dp = self.d_plus_spectrum();
        let mut acc = vec![0.0; n];
        for b in 0..d {
            let part = inverse_transform_complex(&dp.partial(b));
            for (i, a) in acc.iter_mut().enumerate() {
                for c in 0..d {
                    *a += part[c * n + i].norm_sqr();
                }
            }
        }
        acc.into_iter().fold(0.0, f64::max).sqrt()
    }

    /// `sup_x |D_x C(t, x)|` (Frobenius norm), computed spectrally.
    pub fn shift_gradient_sup(&self, t: f64) -> f64 {
        let c = forward_transform(&self.shift_field(t));
        let d = self.grid.dim();
        let n = self.grid.len();
        let mut acc = vec![0.0; n];
        for b in 0..d {
            let part = crate::field::inverse_transform(&c.partial(b));
            for (i, a) in acc.iter_mut().enumerate() {
                for comp in 0..d {
                    *a += part.at(comp, i).powi(2);
                }
            }
        }
        acc.into_iter().fold(0.0, f64::max).sqrt()
    }

    /// Write `d+` as a PSS1 field of interleaved real/imaginary planes.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = complex_to_field(&self.grid, self.grid.dim(), &self.d_plus())?;
        save(path, &Snapshot::Field(f))
    }
}

/// Initial correctors: `div d+(0) = div(E0 / omega + i j0) / 2`.
///
/// With the default frequency `1/eps` the weight of `E0` is `eps`, which
/// makes `div d+ exp(i t / eps)` the exact solution of the linearised
/// oscillation; the `1/sqrt(eps)` frequency gives the weight `sqrt(eps)`.
pub fn corrector_initial(
    e0: &GriddedField,
    j0: &GriddedField,
    epsilon: f64,
    frequency: CorrectorFrequency,
) -> Result<CorrectorState> {
    e0.grid().check_same(j0.grid())?;
    let d = e0.grid().dim();
    if e0.components() != d || j0.components() != d {
        return Err(invalid("field", "E0 and j0 must be d-vector fields"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("{epsilon} must be positive")));
    }
    let weight = 1.0 / frequency.omega(epsilon);
    let div_e = forward_transform(e0).divergence()?;
    let div_j = forward_transform(j0).divergence()?;
    let coeffs = div_e
        .coeffs()
        .iter()
        .zip(div_j.coeffs())
        .map(|(e, j)| (e * weight + Complex64::new(0.0, 1.0) * j) * 0.5)
        .collect();
    let divergence = SpectralField::from_coeffs(e0.grid(), 1, coeffs)?;
    CorrectorState::from_divergence(divergence, epsilon, frequency)
}

/// `-div((j . grad) d+)` for the divergence `div_hat`.
fn divergence_rate(state: &CorrectorState, div_hat: &SpectralField, j: &GriddedField) -> Result<SpectralField> {
    let grid = &state.grid;
    let d = grid.dim();
    let n = grid.len();
    let d_plus = div_hat.inverse_laplacian().gradient()?;
    let mut transport = vec![zero(); d * n];
    for b in 0..d {
        let part = inverse_transform_complex(&d_plus.partial(b));
        let jb = j.component(b);
        for c in 0..d {
            for i in 0..n {
                transport[c * n + i] += part[c * n + i] * jb[i];
            }
        }
    }
    let mut t_hat = forward_transform_complex(grid, d, transport)?;
    t_hat.dealias();
    let mut rate = t_hat.divergence()?;
    rate.scale(Complex64::new(-1.0, 0.0));
    Ok(rate)
}

/// One RK4 step of `div(d_t d+ + (j . grad) d+) = 0`, `curl d+ = 0`, with
/// the current held fixed over the step. The constant part of `d+` is frozen.
pub fn advance_correctors(state: &CorrectorState, j: &GriddedField, dt: f64) -> Result<CorrectorState> {
    state.grid.check_same(j.grid())?;
    if j.components() != state.grid.dim() {
        return Err(Error::GridMismatch("current must be a d-vector field".into()));
    }
    let d0 = state.divergence();
    let stage = |base: &SpectralField, k: &SpectralField, s: f64| -> Result<SpectralField> {
        let mut out = base.clone();
        out.axpy(s, k)?;
        Ok(out)
    };
    let k1 = divergence_rate(state, &d0, j)?;
    let k2 = divergence_rate(state, &stage(&d0, &k1, 0.5 * dt)?, j)?;
    let k3 = divergence_rate(state, &stage(&d0, &k2, 0.5 * dt)?, j)?;
    let k4 = divergence_rate(state, &stage(&d0, &k3, dt)?, j)?;
    let mut next_div = d0;
    for (s, k) in [(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)] {
        next_div.axpy(s * dt / 6.0, k)?;
    }
    let mut next = state.clone();
    next.potential = next_div.inverse_laplacian();
    next.time = state.time + dt;
    Ok(next)
}

/// Shift every velocity by `+C(t, x)` (CIC interpolation of the grid shift).
pub fn filter_ensemble(ensemble: &ParticleEnsemble, state: &CorrectorState, t: f64) -> Result<ParticleEnsemble> {
    shift_by(ensemble, state, t, 1.0)
}

/// Inverse of [`filter_ensemble`].
pub fn unfilter_ensemble(ensemble: &ParticleEnsemble, state: &CorrectorState, t: f64) -> Result<ParticleEnsemble> {
    shift_by(ensemble, state, t, -1.0)
}

fn shift_by(ensemble: &ParticleEnsemble, state: &CorrectorState, t: f64, sign: f64) -> Result<ParticleEnsemble> {
    if ensemble.dim() != state.grid.dim() {
        return Err(Error::GridMismatch("ensemble and corrector dimensions differ".into()));
    }
    let c = state.shift_field(t);
    Ok(ensemble.shift_velocities(|_, x| {
        let s = interpolate_field(&c, x);
        let mut out = [0.0; MAX_DIM];
        for a in 0..ensemble.dim() {
            out[a] = sign * s[a];
        }
        out
    }))
}

/// True iff `||div d+(0)||_2 <= tol`.
pub fn is_well_prepared(state: &CorrectorState, tol: f64) -> bool {
    state.initial_divergence <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    const DEFAULT: CorrectorFrequency = CorrectorFrequency::InverseEpsilon;

    fn field(g: &TorusGrid, f: impl Fn(&[f64], usize) -> f64) -> GriddedField {
        GriddedField::from_fn(g, g.dim(), f)
    }

    #[test]
    fn well_prepared_data_gives_zero_correctors() {
        let g = make_grid(2, 16).unwrap();
        let e0 = GriddedField::zeros(&g, 2);
        // div-free current
        let j0 = field(&g, |x, c| if c == 0 { (2.0 * PI * x[1]).sin() } else { (2.0 * PI * x[0]).cos() });
        let s = corrector_initial(&e0, &j0, 0.25, DEFAULT).unwrap();
        assert!(s.d_plus().iter().all(|z| z.norm() < 1e-14));
        assert!(is_well_prepared(&s, 1e-10));
    }

    #[test]
    fn single_term_initial_data() {
        let g = make_grid(2, 16).unwrap();
        let eps: f64 = 0.25;
        let e0 = field(&g, |x, c| if c == 0 { (2.0 * PI * x[0]).sin() } else { 0.0 });
        let j0 = GriddedField::zeros(&g, 2);
        for (freq, weight) in [(DEFAULT, eps), (CorrectorFrequency::InverseSqrtEpsilon, eps.sqrt())] {
            let s = corrector_initial(&e0, &j0, eps, freq).unwrap();
            let div_e = forward_transform(&e0).divergence().unwrap();
            let got = s.divergence();
            for i in 0..g.len() {
                let want = div_e.coeffs()[i] * (weight / 2.0);
                assert!((got.coeffs()[i] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn one_mode_hand_calculation() {
        // E0 = (sin 2 pi x, 0), j0 = (cos 2 pi x, 0): div E0 = 2 pi cos, div j0 = -2 pi sin.
        // Mode k = (1, 0): div E0_hat = pi, div j0_hat = i pi.
        // div d+_hat = (eps pi + i (i pi)) / 2 = (eps - 1) pi / 2.
        let g = make_grid(2, 16).unwrap();
        let eps = 0.25;
        let e0 = field(&g, |x, c| if c == 0 { (2.0 * PI * x[0]).sin() } else { 0.0 });
        let j0 = field(&g, |x, c| if c == 0 { (2.0 * PI * x[0]).cos() } else { 0.0 });
        let s = corrector_initial(&e0, &j0, eps, DEFAULT).unwrap();
        let got = s.divergence().coefficient(0, &[1, 0]);
        assert!((got - Complex64::new((eps - 1.0) * PI / 2.0, 0.0)).norm() < 1e-12);
        let phi = s.potential.coefficient(0, &[1, 0]);
        assert!((phi - got / -(4.0 * PI * PI)).norm() < 1e-14);
        assert!(s.mean.iter().all(|m| m.norm() == 0.0));
    }

    fn single_mode_state(g: &TorusGrid) -> CorrectorState {
        let mut div = SpectralField::zeros(g, 1);
        let i = g.flat_index(&[1, 2]);
        div.coeffs_mut()[i] = Complex64::new(0.6, -0.3);
        let j = g.flat_index(&[g.cells_along(0) - 2, 0]);
        div.coeffs_mut()[j] = Complex64::new(0.2, 0.1);
        CorrectorState::from_divergence(div, 0.25, DEFAULT).unwrap()
    }

    #[test]
    fn zero_current_keeps_correctors() {
        let g = make_grid(2, 16).unwrap();
        let s = single_mode_state(&g);
        let j = GriddedField::zeros(&g, 2);
        let next = advance_correctors(&s, &j, 0.1).unwrap();
        assert!(next.potential.coeffs().iter().zip(s.potential.coeffs()).all(|(a, b)| (a - b).norm() < 1e-15));
        let zero = CorrectorState::zero(&g, 0.25, DEFAULT);
        let j = field(&g, |x, c| (2.0 * PI * (x[0] + c as f64 * x[1])).sin());
        let next = advance_correctors(&zero, &j, 0.1).unwrap();
        assert!(next.d_plus().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn constant_current_advects_divergence() {
        let g = make_grid(2, 16).unwrap();
        let s0 = single_mode_state(&g);
        let c = [0.7, -0.4];
        let j = field(&g, |_, a| c[a]);
        let dt = 0.01;
        let mut s = s0.clone();
        for _ in 0..50 {
            s = advance_correctors(&s, &j, dt).unwrap();
        }
        let t = 0.5;
        let d0 = s0.divergence();
        let d1 = s.divergence();
        for i in 0..g.len() {
            let k = g.wavevector(i);
            let phase = -2.0 * PI * (k[0] as f64 * c[0] + k[1] as f64 * c[1]) * t;
            let want = d0.coeffs()[i] * Complex64::from_polar(1.0, phase);
            assert!((d1.coeffs()[i] - want).norm() < 1e-6);
        }
    }

    #[test]
    fn constant_corrector_shift() {
        let g = make_grid(2, 8).unwrap();
        let a = [Complex64::new(0.3, 0.8), Complex64::new(-0.5, 0.1)];
        let eps = 0.25;
        let s = CorrectorState::constant(&g, &a, eps, DEFAULT).unwrap();
        let t = PI / 2.0 * eps;
        let e = ParticleEnsemble::new(2, vec![0.1, 0.2, 0.7, 0.9], vec![0.0; 4], vec![0.5, 0.5]).unwrap();
        let f = filter_ensemble(&e, &s, t).unwrap();
        for i in 0..2 {
            for c in 0..2 {
                assert!((f.velocity(i)[c] + 2.0 * a[c].re).abs() < 1e-14);
            }
        }
        assert_eq!(f.positions(), e.positions());
        assert_eq!(f.weights(), e.weights());
    }

    #[test]
    fn filter_round_trip() {
        let g = make_grid(2, 16).unwrap();
        let s = single_mode_state(&g);
        let e = ParticleEnsemble::new(2, vec![0.13, 0.77, 0.5, 0.01, 0.99, 0.42], vec![1.0, -2.0, 0.3, 0.0, 5.0, 1.5], vec![0.2, 0.3, 0.5]).unwrap();
        let back = unfilter_ensemble(&filter_ensemble(&e, &s, 0.37).unwrap(), &s, 0.37).unwrap();
        for (a, b) in back.velocities().iter().zip(e.velocities()) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = CorrectorState::zero(&g, 0.25, DEFAULT);
        assert_eq!(filter_ensemble(&e, &zero, 0.37).unwrap(), e);
    }

    #[test]
    fn well_prepared_examples() {
        let g = make_grid(2, 8).unwrap();
        assert!(is_well_prepared(&CorrectorState::zero(&g, 0.5, DEFAULT), 0.0));
        let mut div = SpectralField::zeros(&g, 1);
        div.coeffs_mut()[g.flat_index(&[1, 0])] = Complex64::new(1.0, 0.0);
        let s = CorrectorState::from_divergence(div, 0.5, DEFAULT).unwrap();
        assert!((s.initial_divergence - 1.0).abs() < 1e-14);
        assert!(!is_well_prepared(&s, 1e-3));
    }

    #[test]
    fn shift_is_real_and_lipschitz_bounded() {
        let g = make_grid(2, 16).unwrap();
        let s = single_mode_state(&g);
        for t in [0.0, 0.1, 0.77] {
            assert!(s.shift_gradient_sup(t) <= 2.0 * s.gradient_sup() * (1.0 + 1e-12));
        }
        // curl d+ = 0 by construction
        let dp = s.d_plus_spectrum();
        let (d0, d1) = (dp.partial(0), dp.partial(1));
        let n = g.len();
        let curl: f64 = (0..n).map(|i| (d0.coeffs()[n + i] - d1.coeffs()[i]).norm()).sum();
        assert!(curl < 1e-10);
    }
}
