//! Uniform periodic grids on the unit torus `[0,1)^d`.
//!
//! Node `j` along an axis sits at `j * h` and is the centre of the cell
//! `[(j - 1/2) h, (j + 1/2) h)`. Fourier modes are `exp(2 pi i k.x)`.

use crate::error::{invalid, Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    cells: Vec<usize>,
}

/// Build a `dim`-dimensional grid with `cells` nodes per axis.
pub fn make_grid(dim: usize, cells: usize) -> Result<TorusGrid> {
    TorusGrid::new(vec![cells; dim])
}

impl TorusGrid {
    pub fn new(cells: Vec<usize>) -> Result<Self> {
        if cells.is_empty() || cells.len() > MAX_DIM {
            return Err(invalid("dim", format!("{} not in {{1,2,3}}", cells.len())));
        }
        for &n in &cells {
            if n < 4 || !n.is_power_of_two() {
                return Err(invalid(
                    "cells",
                    format!("{n} is not a power of two >= 4"),
                ));
            }
        }
        Ok(Self { cells })
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cells_along(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / self.cells[axis] as f64
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Row-major flat index; axis 0 varies slowest.
    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for (a, &i) in idx.iter().enumerate() {
            flat = flat * self.cells[a] + i;
        }
        flat
    }

    #[inline]
    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.cells[a];
            flat /= self.cells[a];
        }
        idx
    }

    /// Position of a node.
    pub fn node_position(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            x[a] = idx[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Signed wavenumber of FFT index `i` along `axis`; the Nyquist index maps to `-n/2`.
    #[inline]
    pub fn wavenumber(&self, axis: usize, i: usize) -> i64 {
        let n = self.cells[axis];
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    #[inline]
    pub fn is_nyquist(&self, axis: usize, i: usize) -> bool {
        i == self.cells[axis] / 2
    }

    /// Signed multi-index wavenumber of a flat spectral index.
    pub fn wavevector(&self, flat: usize) -> [i64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut k = [0i64; MAX_DIM];
        for a in 0..self.dim() {
            k[a] = self.wavenumber(a, idx[a]);
        }
        k
    }

    pub fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.cells, other.cells
            )));
        }
        Ok(())
    }

    /// Geodesic distance between two points of the torus.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        periodic_distance(&x[..self.dim()], &y[..self.dim()])
    }
}

/// Map a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Per-axis periodic separation in `[0, 1/2]`.
#[inline]
pub fn periodic_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let d = d - d.floor();
    d.min(1.0 - d)
}

/// Geodesic distance on `T^d`; bounded by `sqrt(d)/2`.
#[inline]
pub fn periodic_distance(x: &[f64], y: &[f64]) -> f64 {
    periodic_distance_sq(x, y).sqrt()
}

#[inline]
pub fn periodic_distance_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = periodic_delta(a, b);
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn make_grid_examples() {
        let g = make_grid(2, 64).unwrap();
        assert_eq!(g.len(), 4096);
        assert_eq!(g.spacing(0), 1.0 / 64.0);
        assert_eq!(g.spacing(1), 1.0 / 64.0);
        assert_eq!(make_grid(1, 4).unwrap().len(), 4);
        assert!(make_grid(2, 63).is_err());
        assert!(make_grid(4, 8).is_err());
        assert!(make_grid(0, 8).is_err());
        assert!(make_grid(1, 2).is_err());
    }

    #[test]
    fn cell_volumes_sum_to_one() {
        for dim in 1..=3 {
            let g = make_grid(dim, 8).unwrap();
            let total: f64 = (0..g.len()).map(|_| g.cell_volume()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn index_round_trip() {
        let g = TorusGrid::new(vec![4, 8, 16]).unwrap();
        for flat in 0..g.len() {
            let idx = g.multi_index(flat);
            assert_eq!(g.flat_index(&idx[..3]), flat);
        }
    }

    #[test]
    fn distance_examples() {
        assert!((periodic_distance(&[0.1], &[0.9]) - 0.2).abs() < 1e-15);
        assert_eq!(periodic_distance(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let d = periodic_distance(&[0.0, 0.0], &[0.5, 0.5]);
        assert!((d - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn wrap_stays_in_unit_interval() {
        for x in [-1e-17, -0.5, 1.0, 2.25, -3.0, 0.999_999_999_999_999_9] {
            let w = wrap(x);
            assert!((0.0..1.0).contains(&w), "{x} -> {w}");
        }
    }

    #[test]
    fn distance_is_a_metric_on_random_triples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let d = rng.gen_range(1..=3);
            let p: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
                .collect();
            let ab = periodic_distance(&p[0], &p[1]);
            let ba = periodic_distance(&p[1], &p[0]);
            let bc = periodic_distance(&p[1], &p[2]);
            let ac = periodic_distance(&p[0], &p[2]);
            assert!((ab - ba).abs() < 1e-12);
            assert!(ac <= ab + bc + 1e-12);
            assert!(ab <= (d as f64).sqrt() / 2.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn distance_zero_iff_equal(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let d = periodic_distance(&[x], &[y]);
            prop_assert_eq!(d == 0.0, x == y);
        }
    }
}
