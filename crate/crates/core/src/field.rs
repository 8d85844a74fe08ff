//! Real-space and Fourier-space fields on the torus.
//!
//! Gridded values are stored component-major: component `c` occupies
//! `values[c * n .. (c + 1) * n]` where `n` is the number of nodes, each plane
//! in the row-major node order of [`TorusGrid`]. Fourier coefficients follow
//! the normalisation `g_hat(k) = (1/n) sum_j g(x_j) exp(-2 pi i k.x_j)`, so a
//! constant `c` has `g_hat(0) = c` and `cos(2 pi x_1)` has `+-1/2` at `+-e_1`.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::grid::{TorusGrid, MAX_DIM};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Real samples of a scalar or vector field at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    grid: TorusGrid,
    components: usize,
    values: Vec<f64>,
}

/// Fourier coefficients of a (possibly complex) field, one plane per component.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    components: usize,
    coeffs: Vec<Complex64>,
}

impl GriddedField {
    pub fn zeros(grid: &TorusGrid, components: usize) -> Self {
        Self {
            grid: grid.clone(),
            components,
            values: vec![0.0; components * grid.len()],
        }
    }

    pub fn from_values(grid: &TorusGrid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != components * grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} components on {} nodes",
                values.len(),
                components,
                grid.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            components,
            values,
        })
    }

    /// Sample `f(x, component)` at every node.
    pub fn from_fn(grid: &TorusGrid, components: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let n = grid.len();
        let d = grid.dim();
        let mut values = vec![0.0; components * n];
        for i in 0..n {
            let x = grid.node_position(i);
            for c in 0..components {
                values[c * n + i] = f(&x[..d], c);
            }
        }
        Self {
            grid: grid.clone(),
            components,
            values,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_scalar(&self) -> bool {
        self.components == 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[c * n..(c + 1) * n]
    }

    /// Single component as a scalar field.
    pub fn extract(&self, c: usize) -> GriddedField {
        GriddedField {
            grid: self.grid.clone(),
            components: 1,
            values: self.component(c).to_vec(),
        }
    }

    /// Stack scalar fields into one vector field.
    pub fn stack(parts: &[GriddedField]) -> Result<GriddedField> {
        let first = parts.first().ok_or_else(|| invalid("parts", "empty"))?;
        let mut values = Vec::with_capacity(parts.len() * first.grid.len());
        for p in parts {
            p.grid.check_same(&first.grid)?;
            values.extend_from_slice(&p.values);
        }
        GriddedField::from_values(&first.grid, values.len() / first.grid.len(), values)
    }

    /// Value of component `c` at node `i`.
    #[inline]
    pub fn at(&self, c: usize, i: usize) -> f64 {
        self.values[c * self.grid.len() + i]
    }

    /// Integral over the torus of component `c`.
    pub fn integral(&self, c: usize) -> f64 {
        self.component(c).iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self, c: usize) -> f64 {
        self.integral(c)
    }

    /// Pointwise Euclidean norm, maximised over nodes.
    pub fn sup_norm(&self) -> f64 {
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                (0..self.components)
                    .map(|c| self.at(c, i).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `sqrt( integral |f|^2 )` with the node quadrature.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &GriddedField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &GriddedField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.components != other.components {
            return Err(Error::GridMismatch("component count".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl SpectralField {
    pub fn zeros(grid: &TorusGrid, components: usize) -> Self {
        Self {
            grid: grid.clone(),
            components,
            coeffs: vec![Complex64::new(0.0, 0.0); components * grid.len()],
        }
    }

    pub fn from_coeffs(grid: &TorusGrid, components: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if components == 0 || coeffs.len() != components * grid.len() {
            return Err(Error::GridMismatch("coefficient count".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            components,
            coeffs,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let n = self.grid.len();
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.len();
        &mut self.coeffs[c * n..(c + 1) * n]
    }

    /// Coefficient of component `c` at signed wavevector `k`.
    pub fn coefficient(&self, c: usize, k: &[i64]) -> Complex64 {
        let d = self.grid.dim();
        let mut idx = [0usize; MAX_DIM];
        for a in 0..d {
            let n = self.grid.cells_along(a) as i64;
            idx[a] = k[a].rem_euclid(n) as usize;
        }
        self.component(c)[self.grid.flat_index(&idx[..d])]
    }

    pub fn scale(&mut self, s: Complex64) {
        self.coeffs.iter_mut().for_each(|v| *v *= s);
    }

    /// `sum_k |g_hat(k)|^2`, equal to `integral |g|^2` by Parseval.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Gradient of a scalar spectral field (the Nyquist plane of each
    /// differentiated axis is zeroed).
    pub fn gradient(&self) -> Result<SpectralField> {
        if self.components != 1 {
            return Err(invalid("field", "gradient needs a scalar"));
        }
        let d = self.grid.dim();
        let n = self.grid.len();
        let mut out = SpectralField::zeros(&self.grid, d);
        for i in 0..n {
            let idx = self.grid.multi_index(i);
            for a in 0..d {
                let factor = derivative_factor(&self.grid, a, idx[a]);
                out.coeffs[a * n + i] = self.coeffs[i] * factor;
            }
        }
        Ok(out)
    }

    /// Partial derivative of every component along `axis`.
    pub fn partial(&self, axis: usize) -> SpectralField {
        let n = self.grid.len();
        let mut out = self.clone();
        for i in 0..n {
            let idx = self.grid.multi_index(i);
            let factor = derivative_factor(&self.grid, axis, idx[axis]);
            for c in 0..self.components {
                out.coeffs[c * n + i] *= factor;
            }
        }
        out
    }

    /// Divergence of a `d`-component field.
    pub fn divergence(&self) -> Result<SpectralField> {
        let d = self.grid.dim();
        if self.components != d {
            return Err(invalid("field", "divergence needs a d-component field"));
        }
        let n = self.grid.len();
        let mut out = SpectralField::zeros(&self.grid, 1);
        for i in 0..n {
            let idx = self.grid.multi_index(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..d {
                acc += self.coeffs[a * n + i] * derivative_factor(&self.grid, a, idx[a]);
            }
            out.coeffs[i] = acc;
        }
        Ok(out)
    }

    /// Apply `-(2 pi |k|)^2` to every component.
    pub fn laplacian(&self) -> SpectralField {
        let n = self.grid.len();
        let mut out = self.clone();
        for i in 0..n {
            let k2 = wavevector_norm_sq(&self.grid, i);
            for c in 0..self.components {
                out.coeffs[c * n + i] *= -k2;
            }
        }
        out
    }

    /// Zero-mean solution of `Delta u = self` (the `k = 0` mode is dropped).
    pub fn inverse_laplacian(&self) -> SpectralField {
        let n = self.grid.len();
        let mut out = self.clone();
        for i in 0..n {
            let k2 = wavevector_norm_sq(&self.grid, i);
            for c in 0..self.components {
                out.coeffs[c * n + i] = if k2 == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    self.coeffs[c * n + i] / -k2
                };
            }
        }
        out
    }

    /// Two-thirds rule: zero every mode with `|k_a| > n_a / 3` on some axis.
    pub fn dealias(&mut self) {
        let n = self.grid.len();
        let d = self.grid.dim();
        for i in 0..n {
            let k = self.grid.wavevector(i);
            let cut = (0..d).any(|a| 3 * k[a].unsigned_abs() as usize > self.grid.cells_along(a));
            if cut {
                for c in 0..self.components {
                    self.coeffs[c * n + i] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Exact trigonometric interpolation of component `c` at an arbitrary point.
    pub fn evaluate(&self, c: usize, x: &[f64]) -> Complex64 {
        let table = PhaseTable::new(&self.grid, x);
        table.evaluate(self.component(c))
    }

    /// Component-wise `self + s * other`.
    pub fn axpy(&mut self, s: f64, other: &SpectralField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.components != other.components {
            return Err(Error::GridMismatch("component count".into()));
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * s;
        }
        Ok(())
    }
}

/// Precomputed `exp(2 pi i k_a x_a)` factors for fast repeated point evaluation.
pub struct PhaseTable {
    grid: TorusGrid,
    phases: Vec<Vec<Complex64>>,
}

impl PhaseTable {
    pub fn new(grid: &TorusGrid, x: &[f64]) -> Self {
        let phases = (0..grid.dim())
            .map(|a| {
                let n = grid.cells_along(a);
                (0..n)
                    .map(|i| {
                        if grid.is_nyquist(a, i) {
                            // cos(pi n x): average of the +n/2 and -n/2 exponentials
                            Complex64::new((PI * n as f64 * x[a]).cos(), 0.0)
                        } else {
                            let k = grid.wavenumber(a, i) as f64;
                            Complex64::from_polar(1.0, 2.0 * PI * k * x[a])
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            grid: grid.clone(),
            phases,
        }
    }

    pub fn evaluate(&self, coeffs: &[Complex64]) -> Complex64 {
        let c = &self.grid.cells();
        match self.grid.dim() {
            1 => coeffs
                .iter()
                .zip(&self.phases[0])
                .fold(Complex64::new(0.0, 0.0), |acc, (a, p)| acc + a * p),
            2 => {
                let mut acc = Complex64::new(0.0, 0.0);
                for i0 in 0..c[0] {
                    let row = &coeffs[i0 * c[1]..(i0 + 1) * c[1]];
                    let inner = row
                        .iter()
                        .zip(&self.phases[1])
                        .fold(Complex64::new(0.0, 0.0), |s, (a, p)| s + a * p);
                    acc += inner * self.phases[0][i0];
                }
                acc
            }
            _ => {
                let mut acc = Complex64::new(0.0, 0.0);
                for i0 in 0..c[0] {
                    let mut mid = Complex64::new(0.0, 0.0);
                    for i1 in 0..c[1] {
                        let base = (i0 * c[1] + i1) * c[2];
                        let inner = coeffs[base..base + c[2]]
                            .iter()
                            .zip(&self.phases[2])
                            .fold(Complex64::new(0.0, 0.0), |s, (a, p)| s + a * p);
                        mid += inner * self.phases[1][i1];
                    }
                    acc += mid * self.phases[0][i0];
                }
                acc
            }
        }
    }
}

/// `2 pi i k_a`, zero on the Nyquist index.
#[inline]
pub(crate) fn derivative_factor(grid: &TorusGrid, axis: usize, i: usize) -> Complex64 {
    if grid.is_nyquist(axis, i) {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::new(0.0, 2.0 * PI * grid.wavenumber(axis, i) as f64)
    }
}

/// `(2 pi |k|)^2` for a flat spectral index.
#[inline]
pub(crate) fn wavevector_norm_sq(grid: &TorusGrid, flat: usize) -> f64 {
    let k = grid.wavevector(flat);
    (0..grid.dim())
        .map(|a| (2.0 * PI * k[a] as f64).powi(2))
        .sum()
}

/// In-place multi-dimensional FFT without normalisation.
pub(crate) fn fft_nd(grid: &TorusGrid, data: &mut [Complex64], inverse: bool) {
    let cells = grid.cells();
    let total = grid.len();
    debug_assert_eq!(data.len(), total);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        for (axis, &n) in cells.iter().enumerate() {
            let fft = if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            };
            let stride: usize = cells[axis + 1..].iter().product();
            let outer = total / (n * stride);
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * n * stride + inner;
                    for j in 0..n {
                        line[j] = data[base + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for j in 0..n {
                        data[base + j * stride] = line[j];
                    }
                }
            }
        }
    });
}

/// Forward transform of every component.
pub fn forward_transform(f: &GriddedField) -> SpectralField {
    let n = f.grid.len();
    let norm = 1.0 / n as f64;
    let mut coeffs: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for c in 0..f.components {
        fft_nd(&f.grid, &mut coeffs[c * n..(c + 1) * n], false);
    }
    coeffs.iter_mut().for_each(|v| *v *= norm);
    SpectralField {
        grid: f.grid.clone(),
        components: f.components,
        coeffs,
    }
}

/// Complex samples of every component.
pub fn inverse_transform_complex(f: &SpectralField) -> Vec<Complex64> {
    let n = f.grid.len();
    let mut data = f.coeffs.clone();
    for c in 0..f.components {
        fft_nd(&f.grid, &mut data[c * n..(c + 1) * n], true);
    }
    data
}

/// Inverse transform keeping the real part.
pub fn inverse_transform(f: &SpectralField) -> GriddedField {
    let values = inverse_transform_complex(f).into_iter().map(|z| z.re).collect();
    GriddedField {
        grid: f.grid.clone(),
        components: f.components,
        values,
    }
}

/// Forward transform of complex planes.
pub fn forward_transform_complex(grid: &TorusGrid, components: usize, mut data: Vec<Complex64>) -> Result<SpectralField> {
    let n = grid.len();
    if data.len() != components * n {
        return Err(Error::GridMismatch("complex sample count".into()));
    }
    let norm = 1.0 / n as f64;
    for c in 0..components {
        fft_nd(grid, &mut data[c * n..(c + 1) * n], false);
    }
    data.iter_mut().for_each(|v| *v *= norm);
    SpectralField::from_coeffs(grid, components, data)
}

/// Analytic-class norm `sum_k |g_hat(k)| delta^{|k|_1}` summed over components.
pub fn b_delta_norm(f: &SpectralField, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(invalid("delta", format!("{delta} must be > 0")));
    }
    let n = f.grid.len();
    let d = f.grid.dim();
    let mut total = 0.0;
    for i in 0..n {
        let k = f.grid.wavevector(i);
        let k1: u64 = (0..d).map(|a| k[a].unsigned_abs()).sum();
        let weight = delta.powi(k1 as i32);
        for c in 0..f.components {
            total += f.coeffs[c * n + i].norm() * weight;
        }
    }
    Ok(total)
}

/// Pointwise product of two scalar fields.
pub fn pointwise_product(a: &GriddedField, b: &GriddedField) -> Result<GriddedField> {
    a.grid.check_same(&b.grid)?;
    if a.components != 1 || b.components != 1 {
        return Err(invalid("field", "pointwise product needs scalars"));
    }
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    GriddedField::from_values(&a.grid, 1, values)
}

/// Trigonometric interpolant of every component sampled on the grid refined
/// `factor` times per axis and translated by `shift` along every axis.
/// `factor` must be a power of two. Nyquist coefficients are split evenly
/// between `+n/2` and `-n/2`, matching [`PhaseTable`].
pub fn refine_samples(f: &SpectralField, factor: usize, shift: f64) -> Result<GriddedField> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(invalid("factor", format!("{factor} must be a power of two")));
    }
    let grid = &f.grid;
    let d = grid.dim();
    let fine = TorusGrid::new(grid.cells().iter().map(|n| n * factor).collect())?;
    let n = grid.len();
    let nf = fine.len();
    let mut values = Vec::with_capacity(f.components * nf);
    for c in 0..f.components {
        let mut data = vec![Complex64::new(0.0, 0.0); nf];
        for i in 0..n {
            let coeff = f.coeffs[c * n + i];
            if coeff == Complex64::new(0.0, 0.0) {
                continue;
            }
            let k = grid.wavevector(i);
            let nyq: Vec<usize> = (0..d).filter(|&a| grid.is_nyquist(a, grid.multi_index(i)[a])).collect();
            let copies = 1usize << nyq.len();
            for mask in 0..copies {
                let mut idx = [0usize; MAX_DIM];
                let mut phase = 0.0;
                for a in 0..d {
                    let mut ka = k[a];
                    if let Some(pos) = nyq.iter().position(|&b| b == a) {
                        if (mask >> pos) & 1 == 1 {
                            ka = -ka;
                        }
                    }
                    phase += ka as f64 * shift;
                    idx[a] = ka.rem_euclid(fine.cells_along(a) as i64) as usize;
                }
                let w = Complex64::from_polar(1.0 / copies as f64, 2.0 * PI * phase);
                data[fine.flat_index(&idx[..d])] += coeff * w;
            }
        }
        fft_nd(&fine, &mut data, true);
        values.extend(data.iter().map(|z| z.re));
    }
    GriddedField::from_values(&fine, f.components, values)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::make_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &TorusGrid, seed: u64) -> GriddedField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GriddedField::from_values(grid, 1, values).unwrap()
    }

    /// Random trigonometric polynomial with modes `|k_a| <= band`.
    pub(crate) fn band_limited(grid: &TorusGrid, band: i64, seed: u64) -> GriddedField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = grid.dim();
        let mut terms = Vec::new();
        for _ in 0..6 {
            let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-band..=band) as f64).collect();
            terms.push((k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)));
        }
        GriddedField::from_fn(grid, 1, |x, _| {
            terms
                .iter()
                .map(|(k, a, ph)| {
                    let arg: f64 = k.iter().zip(x).map(|(k, x)| k * x).sum();
                    a * (2.0 * PI * arg + ph).cos()
                })
                .sum()
        })
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let g = make_grid(2, 8).unwrap();
        let f = GriddedField::from_fn(&g, 1, |_, _| 3.5);
        let s = forward_transform(&f);
        assert!((s.coefficient(0, &[0, 0]) - Complex64::new(3.5, 0.0)).norm() < 1e-14);
        let others: f64 = s.coeffs().iter().skip(1).map(|c| c.norm()).sum();
        assert!(others < 1e-13);
    }

    #[test]
    fn cosine_has_half_coefficients() {
        let g = make_grid(2, 16).unwrap();
        let f = GriddedField::from_fn(&g, 1, |x, _| (2.0 * PI * x[0]).cos());
        let s = forward_transform(&f);
        for k in [[1, 0], [-1, 0]] {
            assert!((s.coefficient(0, &k) - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        }
        let rest: f64 = s.coeffs().iter().map(|c| c.norm()).sum::<f64>() - 1.0;
        assert!(rest.abs() < 1e-13);
    }

    #[test]
    fn random_round_trip_and_parseval() {
        for dim in 1..=3 {
            let g = make_grid(dim, 8).unwrap();
            let f = random_field(&g, 11 + dim as u64);
            let s = forward_transform(&f);
            let back = inverse_transform(&s);
            assert!(back.max_abs_diff(&f) < 1e-12);
            let l2 = f.l2_norm().powi(2);
            assert!((s.energy() - l2).abs() < 1e-12 * l2.max(1.0));
        }
    }

    #[test]
    fn hermitian_symmetry_for_real_fields() {
        let g = make_grid(2, 8).unwrap();
        let s = forward_transform(&random_field(&g, 3));
        for i in 0..g.len() {
            let k = g.wavevector(i);
            let c = s.coefficient(0, &[k[0], k[1]]);
            let m = s.coefficient(0, &[-k[0], -k[1]]);
            assert!((c - m.conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn b_delta_examples() {
        let g = make_grid(2, 16).unwrap();
        let c = forward_transform(&GriddedField::from_fn(&g, 1, |_, _| -2.0));
        for delta in [0.1, 0.5, 1.0, 3.0] {
            assert!((b_delta_norm(&c, delta).unwrap() - 2.0).abs() < 1e-12);
        }
        let cosine = forward_transform(&GriddedField::from_fn(&g, 1, |x, _| (2.0 * PI * x[0]).cos()));
        assert!((b_delta_norm(&cosine, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(b_delta_norm(&cosine, 0.0).is_err());
        assert!(b_delta_norm(&cosine, -1.0).is_err());
    }

    #[test]
    fn b_delta_at_one_dominates_sup() {
        let g = make_grid(2, 16).unwrap();
        for seed in 0..10 {
            let f = random_field(&g, seed);
            let norm = b_delta_norm(&forward_transform(&f), 1.0).unwrap();
            assert!(norm >= f.sup_norm() - 1e-12);
        }
    }

    #[test]
    fn b_delta_is_monotone_in_delta() {
        let g = make_grid(2, 16).unwrap();
        let s = forward_transform(&band_limited(&g, 4, 5));
        let mut prev = 0.0;
        for i in 1..40 {
            let v = b_delta_norm(&s, 0.1 * i as f64).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn b_delta_is_submultiplicative_for_band_limited_pairs() {
        // The weight delta^{|k|_1} is submultiplicative only for delta >= 1.
        let g = make_grid(2, 32).unwrap();
        for seed in 0..20 {
            let f = band_limited(&g, 4, 100 + seed);
            let h = band_limited(&g, 4, 200 + seed);
            let fh = pointwise_product(&f, &h).unwrap();
            for delta in [1.0, 1.5, 2.0] {
                let lhs = b_delta_norm(&forward_transform(&fh), delta).unwrap();
                let rhs = b_delta_norm(&forward_transform(&f), delta).unwrap()
                    * b_delta_norm(&forward_transform(&h), delta).unwrap();
                assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn evaluate_matches_analytic_off_grid() {
        let g = make_grid(2, 16).unwrap();
        let f = band_limited(&g, 5, 9);
        let s = forward_transform(&f);
        let x = [0.123, 0.777];
        // replay the generator to get the analytic terms
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut terms = Vec::new();
        for _ in 0..6 {
            let k: Vec<f64> = (0..2).map(|_| rng.gen_range(-5i64..=5) as f64).collect();
            terms.push((k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)));
        }
        let exact: f64 = terms
            .iter()
            .map(|(k, a, ph)| a * (2.0 * PI * (k[0] * x[0] + k[1] * x[1]) + ph).cos())
            .sum();
        let z = s.evaluate(0, &x);
        assert!((z.re - exact).abs() < 1e-12);
        assert!(z.im.abs() < 1e-12);
    }

    #[test]
    fn gradient_and_divergence_of_eigenfunction() {
        let g = make_grid(2, 16).unwrap();
        let f = GriddedField::from_fn(&g, 1, |x, _| (2.0 * PI * (x[0] + 2.0 * x[1])).sin());
        let grad = inverse_transform(&forward_transform(&f).gradient().unwrap());
        let expect0 = GriddedField::from_fn(&g, 1, |x, _| 2.0 * PI * (2.0 * PI * (x[0] + 2.0 * x[1])).cos());
        assert!(grad.extract(0).max_abs_diff(&expect0) < 1e-11);
        let lap = inverse_transform(&forward_transform(&grad).divergence().unwrap());
        let mut expect = f.clone();
        expect.scale(-(2.0 * PI).powi(2) * 5.0);
        assert!(lap.max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn refined_samples_match_point_evaluation() {
        let g = make_grid(2, 8).unwrap();
        let f = forward_transform(&band_limited(&g, 4, 11));
        let shift = -0.25 / 8.0;
        let fine = refine_samples(&f, 2, shift).unwrap();
        for j in [0usize, 5, 77, 200] {
            let x = fine.grid().node_position(j);
            let y = [x[0] + shift, x[1] + shift];
            assert!((fine.at(0, j) - f.evaluate(0, &y).re).abs() < 1e-12);
        }
        assert!(refine_samples(&f, 3, 0.0).is_err());
    }
}
