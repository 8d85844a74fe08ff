//! Spectral solver for `-eps^2 Lap U = rho - <rho>` on the torus and an
//! independent two-dimensional real-space kernel evaluation of `E = -grad U`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::field::{
    derivative_factor, forward_transform, inverse_transform, wavevector_norm_sq, GriddedField, SpectralField,
};
use crate::grid::TorusGrid;
use crate::quadrature::Composite;

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// Zero-mean potential `U`.
    pub potential: GriddedField,
    /// Electric field `E = -grad U`.
    pub field: GriddedField,
    pub epsilon: f64,
    /// `(eps^2 / 2) * integral |grad U|^2`.
    pub field_energy: f64,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon", format!("{epsilon} must be positive")));
    }
    Ok(())
}

/// Potential coefficients from density coefficients.
pub fn potential_spectrum(rho_hat: &SpectralField, epsilon: f64) -> Result<SpectralField> {
    check_epsilon(epsilon)?;
    if rho_hat.components() != 1 {
        return Err(invalid("rho", "density must be scalar"));
    }
    let grid = rho_hat.grid();
    let eps2 = epsilon * epsilon;
    let coeffs = rho_hat
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let k2 = wavevector_norm_sq(grid, i);
            if k2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                r / (eps2 * k2)
            }
        })
        .collect();
    SpectralField::from_coeffs(grid, 1, coeffs)
}

/// Field coefficients `E_hat = -i 2 pi k U_hat` from density coefficients.
pub fn field_spectrum(rho_hat: &SpectralField, epsilon: f64) -> Result<SpectralField> {
    let mut e = potential_spectrum(rho_hat, epsilon)?.gradient()?;
    e.scale(Complex64::new(-1.0, 0.0));
    Ok(e)
}

/// `(eps^2 / 2) sum_k (2 pi |k|)^2 |U_hat(k)|^2`.
pub fn field_energy_of(u_hat: &SpectralField, epsilon: f64) -> f64 {
    let grid = u_hat.grid();
    let sum: f64 = u_hat
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| wavevector_norm_sq(grid, i) * c.norm_sqr())
        .sum();
    0.5 * epsilon * epsilon * sum
}

pub fn solve_potential(rho: &GriddedField, epsilon: f64) -> Result<PoissonSolution> {
    check_epsilon(epsilon)?;
    if rho.components() != 1 {
        return Err(invalid("rho", "density must be scalar"));
    }
    let rho_hat = forward_transform(rho);
    let u_hat = potential_spectrum(&rho_hat, epsilon)?;
    let mut e_hat = u_hat.gradient()?;
    e_hat.scale(Complex64::new(-1.0, 0.0));
    Ok(PoissonSolution {
        potential: inverse_transform(&u_hat),
        field: inverse_transform(&e_hat),
        epsilon,
        field_energy: field_energy_of(&u_hat, epsilon),
    })
}

/// `L^2` norm of `-eps^2 Lap U - (rho - <rho>)`, evaluated spectrally.
pub fn residual(rho: &GriddedField, sol: &PoissonSolution) -> Result<f64> {
    rho.grid().check_same(sol.potential.grid())?;
    if rho.components() != 1 || sol.potential.components() != 1 {
        return Err(invalid("rho", "density and potential must be scalar"));
    }
    let grid = rho.grid();
    let rho_hat = forward_transform(rho);
    let u_hat = forward_transform(&sol.potential);
    let eps2 = sol.epsilon * sol.epsilon;
    let sum: f64 = (0..grid.len())
        .filter(|&i| wavevector_norm_sq(grid, i) != 0.0)
        .map(|i| (u_hat.coeffs()[i] * eps2 * wavevector_norm_sq(grid, i) - rho_hat.coeffs()[i]).norm_sqr())
        .sum();
    Ok(sum.sqrt())
}

/// Inner and outer radius of the smooth cutoff separating the free-space
/// kernel from the periodic correction.
const CUTOFF_INNER: f64 = 0.1;
const CUTOFF_OUTER: f64 = 0.45;
/// Half-width of the truncated Fourier table of the correction kernel.
const CORRECTION_BAND: i64 = 32;

/// Smooth step from 0 at `t <= 0` to 1 at `t >= 1`, with its derivative.
fn smooth_step(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    let s = a / (a + b);
    let ds = a * b * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t))) / ((a + b) * (a + b));
    (s, ds)
}

/// Cutoff `chi(r)` and `chi'(r)`.
fn cutoff(r: f64) -> (f64, f64) {
    let width = CUTOFF_OUTER - CUTOFF_INNER;
    let (s, ds) = smooth_step((r - CUTOFF_INNER) / width);
    (1.0 - s, -ds / width)
}

/// `-grad (chi G)` with `G = -log r / (2 pi)`, the singular part of the
/// periodic field kernel.
fn near_kernel(z: [f64; 2]) -> [f64; 2] {
    let r = z[0].hypot(z[1]);
    if r == 0.0 || r >= CUTOFF_OUTER {
        return [0.0, 0.0];
    }
    let (chi, dchi) = cutoff(r);
    let radial = chi / (2.0 * PI * r * r) + dchi * r.ln() / (2.0 * PI * r);
    [radial * z[0], radial * z[1]]
}

/// Fourier coefficients of `K0 = G_periodic - chi G` on `|k_a| <= 32`,
/// keyed by `|k|^2`.
fn correction_table() -> &'static HashMap<i64, f64> {
    static TABLE: OnceLock<HashMap<i64, f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // r = R s^2 removes the logarithmic endpoint behaviour.
        let rule = Composite::new(0.0, 1.0, 96, 16).expect("valid rule");
        let mut table = HashMap::new();
        for k1 in 0..=CORRECTION_BAND {
            for k2 in 0..=k1 {
                let key = k1 * k1 + k2 * k2;
                if key == 0 || table.contains_key(&key) {
                    continue;
                }
                let kappa = 2.0 * PI * (key as f64).sqrt();
                let chi_g = rule.integrate(|s| {
                    let r = CUTOFF_OUTER * s * s;
                    if r == 0.0 {
                        return 0.0;
                    }
                    let jac = 2.0 * CUTOFF_OUTER * s;
                    cutoff(r).0 * (-r.ln() / (2.0 * PI)) * libm::j0(kappa * r) * 2.0 * PI * r * jac
                });
                table.insert(key, 1.0 / (kappa * kappa) - chi_g);
            }
        }
        table
    })
}

/// Field of `rho - <rho>` as a real-space convolution with the periodic
/// Green kernel gradient, split into the free-space singular part and a
/// smooth periodic correction.
pub fn green_field_2d(rho: &GriddedField, epsilon: f64) -> Result<GriddedField> {
    check_epsilon(epsilon)?;
    let grid = rho.grid();
    if grid.dim() != 2 {
        return Err(Error::GridMismatch(format!("kernel field needs dim 2, got {}", grid.dim())));
    }
    if rho.components() != 1 {
        return Err(invalid("rho", "density must be scalar"));
    }
    let n = grid.len();
    let h2 = grid.cell_volume();
    let rho_hat = forward_transform(rho);
    let grad_rho = inverse_transform(&rho_hat.gradient()?);

    // Sampled near kernel; the convolution sum omits the singular node.
    let kernel = GriddedField::from_fn(grid, 2, |x, c| {
        let z = [wrap_centered(x[0]), wrap_centered(x[1])];
        near_kernel(z)[c]
    });
    let kernel_hat = forward_transform(&kernel);
    let table = correction_table();
    let mut out_hat = SpectralField::zeros(grid, 2);
    for i in 0..n {
        let k = grid.wavevector(i);
        let r = rho_hat.coeffs()[i];
        let key = k[0] * k[0] + k[1] * k[1];
        let corr = if key != 0 && k[0].abs() <= CORRECTION_BAND && k[1].abs() <= CORRECTION_BAND {
            table[&key]
        } else {
            0.0
        };
        let idx = grid.multi_index(i);
        for a in 0..2 {
            // Discrete convolution: sum_z h^2 K(z) rho(x - z) = sum_k N h^2 K_hat rho_hat.
            let near = kernel_hat.coeffs()[a * n + i] * (n as f64 * h2);
            let far = -derivative_factor(grid, a, idx[a]) * corr;
            out_hat.coeffs_mut()[a * n + i] = (near + far) * r;
        }
    }
    let mut field = inverse_transform(&out_hat);
    // Angular mean of the integrand at the omitted node.
    for a in 0..2 {
        let g = grad_rho.component(a).to_vec();
        for (v, dg) in field.component_mut(a).iter_mut().zip(g) {
            *v -= h2 * dg / (4.0 * PI);
        }
    }
    field.scale(1.0 / (epsilon * epsilon));
    Ok(field)
}

fn wrap_centered(x: f64) -> f64 {
    x - x.round()
}

/// Convenience for callers holding a grid and an analytic density.
pub fn solve_analytic(grid: &TorusGrid, epsilon: f64, rho: impl Fn(&[f64]) -> f64) -> Result<PoissonSolution> {
    solve_potential(&GriddedField::from_fn(grid, 1, |x, _| rho(x)), epsilon)
}
