//! Wasserstein distances between weighted particle ensembles on
//! `T^d x R^d` with ground metric `sqrt(|x - y|_T^2 + |v - w|^2)`.

mod assignment;
mod flow;
mod sinkhorn;

use rayon::prelude::*;

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::field::GriddedField;
use crate::grid::{periodic_distance_sq, MAX_DIM};
use crate::vlasov::interpolate_field;

pub use sinkhorn::SinkhornOutcome;

/// Default bound on the combined number of points for exact solvers.
pub const DEFAULT_SIZE_CAP: usize = 4096;
/// Largest size accepted by [`brute_force_w`].
pub const BRUTE_FORCE_MAX: usize = 8;
/// Relative mass mismatch tolerated between the two measures.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// `sqrt(periodic_distance(x_a, x_b)^2 + |v_a - v_b|^2)`.
pub fn ground_distance(xa: &[f64], va: &[f64], xb: &[f64], vb: &[f64]) -> f64 {
    ground_distance_sq(xa, va, xb, vb).sqrt()
}

#[inline]
fn ground_distance_sq(xa: &[f64], va: &[f64], xb: &[f64], vb: &[f64]) -> f64 {
    let dv: f64 = va.iter().zip(vb).map(|(a, b)| (a - b) * (a - b)).sum();
    periodic_distance_sq(xa, xb) + dv
}

/// Ground cost `d^p` between the points of two ensembles, with coordinates
/// laid out contiguously as `[x_1..x_d, v_1..v_d]` per point.
struct PairCost {
    dim: usize,
    p: u32,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PairCost {
    fn new(mu: &ParticleEnsemble, keep_mu: &[usize], nu: &ParticleEnsemble, keep_nu: &[usize], p: u32) -> Self {
        let pack = |e: &ParticleEnsemble, keep: &[usize]| {
            keep.iter()
                .flat_map(|&i| e.position(i).iter().chain(e.velocity(i)).copied().collect::<Vec<_>>())
                .collect()
        };
        Self {
            dim: mu.dim(),
            p,
            a: pack(mu, keep_mu),
            b: pack(nu, keep_nu),
        }
    }

    fn all(mu: &ParticleEnsemble, nu: &ParticleEnsemble, p: u32) -> Self {
        let all_mu: Vec<usize> = (0..mu.len()).collect();
        let all_nu: Vec<usize> = (0..nu.len()).collect();
        Self::new(mu, &all_mu, nu, &all_nu, p)
    }

    #[inline]
    fn eval(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        let x = &self.a[2 * d * i..2 * d * (i + 1)];
        let y = &self.b[2 * d * j..2 * d * (j + 1)];
        let mut s = 0.0;
        for k in 0..d {
            // Positions are wrapped into [0, 1).
            let t = (x[k] - y[k]).abs();
            let t = if t > 0.5 { 1.0 - t } else { t };
            s += t * t;
        }
        for k in d..2 * d {
            let t = x[k] - y[k];
            s += t * t;
        }
        if self.p == 2 {
            s
        } else {
            s.sqrt()
        }
    }
}

fn check_p(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(invalid("p", format!("{p} not in {{1, 2}}")))
    }
}

fn check_pair(mu: &ParticleEnsemble, nu: &ParticleEnsemble) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::GridMismatch(format!("dimensions {} and {}", mu.dim(), nu.dim())));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let (a, b) = (mu.total_mass(), nu.total_mass());
    if (a - b).abs() > MASS_TOLERANCE * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
        return Err(Error::MassMismatch(a - b));
    }
    Ok(())
}

/// Optimal coupling between two ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Sparse coupling `(source index, target index, mass)`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `sum gamma_ij d_ij^p`.
    pub cost: f64,
    pub p: u32,
    /// True when the coupling is a permutation of equal weights.
    pub assignment: bool,
}

impl TransportPlan {
    /// Largest absolute deviation of the source and target marginals.
    pub fn marginal_error(&self, mu: &ParticleEnsemble, nu: &ParticleEnsemble) -> f64 {
        let mut a = vec![0.0; mu.len()];
        let mut b = vec![0.0; nu.len()];
        for &(i, j, m) in &self.entries {
            a[i] += m;
            b[j] += m;
        }
        let ea = a.iter().zip(mu.weights()).map(|(x, w)| (x - w).abs()).fold(0.0, f64::max);
        let eb = b.iter().zip(nu.weights()).map(|(x, w)| (x - w).abs()).fold(0.0, f64::max);
        ea.max(eb)
    }

    pub fn distance(&self) -> f64 {
        self.cost.max(0.0).powf(1.0 / self.p as f64)
    }
}

fn is_assignment_instance(mu: &ParticleEnsemble, nu: &ParticleEnsemble) -> bool {
    mu.len() == nu.len()
        && mu.has_equal_weights()
        && nu.has_equal_weights()
        && (mu.weight(0) - nu.weight(0)).abs() <= 1e-15 * mu.weight(0).abs().max(1e-300)
}

fn cost_matrix(mu: &ParticleEnsemble, nu: &ParticleEnsemble, p: u32) -> Vec<f64> {
    let n = nu.len();
    let pc = PairCost::all(mu, nu, p);
    let mut cost = vec![0.0; mu.len() * n];
    cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, c) in row.iter_mut().enumerate() {
            *c = pc.eval(i, j);
        }
    });
    cost
}

/// Exact `W_p` with the default size cap.
pub fn w_exact(mu: &ParticleEnsemble, nu: &ParticleEnsemble, p: u32) -> Result<(f64, TransportPlan)> {
    w_exact_capped(mu, nu, p, DEFAULT_SIZE_CAP)
}

/// Exact `W_p`: linear assignment for equal-weight ensembles of equal size,
/// successive shortest paths on the transportation problem otherwise.
pub fn w_exact_capped(mu: &ParticleEnsemble, nu: &ParticleEnsemble, p: u32, cap: usize) -> Result<(f64, TransportPlan)> {
    check_p(p)?;
    check_pair(mu, nu)?;
    let size = mu.len() + nu.len();
    if size > cap {
        return Err(Error::SizeCap { size, cap });
    }
    let cost = cost_matrix(mu, nu, p);
    let n = nu.len();
    let plan = if is_assignment_instance(mu, nu) {
        let matching = assignment::solve(n, &cost);
        let w = mu.weight(0);
        let entries: Vec<_> = matching.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
        let total: f64 = matching.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() * w;
        TransportPlan {
            entries,
            cost: total,
            p,
            assignment: true,
        }
    } else {
        let entries = flow::solve(mu.weights(), nu.weights(), &cost)?;
        let total = entries.iter().map(|&(i, j, m)| m * cost[i * n + j]).sum();
        TransportPlan {
            entries,
            cost: total,
            p,
            assignment: false,
        }
    };
    Ok((plan.distance(), plan))
}

/// Exhaustive minimum over all `n!` assignments of equal-weight ensembles.
pub fn brute_force_w(mu: &ParticleEnsemble, nu: &ParticleEnsemble, p: u32) -> Result<f64> {
    check_p(p)?;
    check_pair(mu, nu)?;
    let n = mu.len();
    if n > BRUTE_FORCE_MAX || nu.len() != n {
        return Err(invalid("n", format!("brute force needs equal sizes <= {BRUTE_FORCE_MAX}")));
    }
    if !is_assignment_instance(mu, nu) {
        return Err(invalid("weights", "brute force needs equal weights"));
    }
    let cost = cost_matrix(mu, nu, p);
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>();
    let mut best = eval(&perm);
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best * mu.weight(0)).powf(1.0 / p as f64))
}

/// Options for [`w_sinkhorn_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Final regularisation relative to the mean pairwise cost.
    pub reg: f64,
    pub max_iters: usize,
    /// Required `l1` marginal error relative to the total mass.
    pub tolerance: f64,
}

impl SinkhornOptions {
    /// Default schedule. The coincident-input floor is `O(reg)` for `W_1` but
    /// `O(sqrt(reg))` for `W_2`, hence the smaller regularisation for `p = 2`.
    pub fn default_for(p: u32) -> Self {
        Self {
            reg: default_reg(p),
            max_iters: 100_000,
            tolerance: 1e-4,
        }
    }
}

/// Default relative regularisation for exponent `p`.
pub fn default_reg(p: u32) -> f64 {
    if p == 2 {
        3e-4
    } else {
        1e-3
    }
}

/// Entropic estimate of `W_p`: `<P, C>^{1/p}` for the Sinkhorn plan `P` at
/// regularisation `reg` times the mean pairwise cost.
pub fn w_sinkhorn(mu: &ParticleEnsemble, nu: &ParticleEnsemble, p: u32, reg: f64, iters: usize) -> Result<f64> {
    w_sinkhorn_with(
        mu,
        nu,
        p,
        SinkhornOptions {
            reg,
            max_iters: iters,
            ..SinkhornOptions::default_for(p)
        },
    )
    .map(|(w, _)| w)
}

pub fn w_sinkhorn_with(
    mu: &ParticleEnsemble,
    nu: &ParticleEnsemble,
    p: u32,
    options: SinkhornOptions,
) -> Result<(f64, SinkhornOutcome)> {
    check_p(p)?;
    check_pair(mu, nu)?;
    if !(options.reg > 0.0) {
        return Err(invalid("reg", format!("{} must be > 0", options.reg)));
    }
    // Zero-weight points carry no mass and would break the log-domain duals.
    let keep_mu: Vec<usize> = (0..mu.len()).filter(|&i| mu.weight(i) > 0.0).collect();
    let keep_nu: Vec<usize> = (0..nu.len()).filter(|&j| nu.weight(j) > 0.0).collect();
    let a: Vec<f64> = keep_mu.iter().map(|&i| mu.weight(i)).collect();
    let b: Vec<f64> = keep_nu.iter().map(|&j| nu.weight(j)).collect();
    let pc = PairCost::new(mu, &keep_mu, nu, &keep_nu, p);
    let cost = |i: usize, j: usize| pc.eval(i, j);
    let (mean, max) = cost_scale(a.len(), b.len(), &cost);
    if max == 0.0 {
        let outcome = SinkhornOutcome {
            primal_cost: 0.0,
            iterate_error: 0.0,
            marginal_error: 0.0,
            iterations: 0,
        };
        return Ok((0.0, outcome));
    }
    let eps_final = options.reg * mean;
    // Coarser stages barely move the potentials away from the product coupling.
    let outcome = sinkhorn::solve(&a, &b, cost, mean / 16.0, eps_final, options.max_iters, options.tolerance)?;
    Ok((outcome.primal_cost.max(0.0).powf(1.0 / p as f64), outcome))
}

/// Mean and maximum of the cost over a strided sample of pairs.
fn cost_scale(m: usize, n: usize, cost: &impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let stride_i = (m / 64).max(1);
    let stride_j = (n / 64).max(1);
    let mut sum = 0.0;
    let mut count = 0.0;
    let mut max: f64 = 0.0;
    for i in (0..m).step_by(stride_i) {
        for j in (0..n).step_by(stride_j) {
            let c = cost(i, j);
            sum += c;
            count += 1.0;
            max = max.max(c);
        }
    }
    (sum / count, max)
}

/// `v -> v + shift(x)`, with the shift interpolated multilinearly.
pub fn translate_velocities(mu: &ParticleEnsemble, shift: &GriddedField) -> Result<ParticleEnsemble> {
    let d = mu.dim();
    if shift.grid().dim() != d || shift.components() != d {
        return Err(Error::GridMismatch("shift must be a d-vector field on a d-dimensional grid".into()));
    }
    Ok(mu.shift_velocities(|_, x| {
        let s = interpolate_field(shift, x);
        let mut out = [0.0; MAX_DIM];
        out[..d].copy_from_slice(&s[..d]);
        out
    }))
}

/// Lipschitz constant of the multilinear interpolant of `shift`: the largest
/// Frobenius norm of its Jacobian over cells and cell vertices.
pub fn interpolated_lipschitz(shift: &GriddedField) -> f64 {
    let grid = shift.grid();
    let d = grid.dim();
    let comps = shift.components();
    let mut best: f64 = 0.0;
    for cell in 0..grid.len() {
        let base = grid.multi_index(cell);
        for corner in 0..(1usize << d) {
            let mut frob = 0.0;
            for a in 0..d {
                // Edge of the cell along `a` through this vertex.
                let mut lo = [0usize; MAX_DIM];
                for b in 0..d {
                    let up = b != a && (corner >> b) & 1 == 1;
                    lo[b] = if up { (base[b] + 1) % grid.cells_along(b) } else { base[b] };
                }
                let mut hi = lo;
                hi[a] = (base[a] + 1) % grid.cells_along(a);
                let (il, ih) = (grid.flat_index(&lo[..d]), grid.flat_index(&hi[..d]));
                for c in 0..comps {
                    let slope = (shift.at(c, ih) - shift.at(c, il)) / grid.spacing(a);
                    frob += slope * slope;
                }
            }
            best = best.max(frob.sqrt());
        }
    }
    best
}
