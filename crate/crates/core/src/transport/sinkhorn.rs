//! Log-stabilised Sinkhorn iterations with absorption, epsilon scaling and a
//! truncated sparse kernel. The final plan is rounded onto the exact
//! marginals, so the reported cost is that of a feasible coupling.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Kernel entries below `exp(-TRUNCATION)` times the row mass are dropped.
const TRUNCATION: f64 = 30.0;
/// Scalings are absorbed into the potentials beyond `exp(ABSORB)`, which keeps
/// dropped entries below `exp(2 ABSORB - TRUNCATION)` times the row mass.
const ABSORB: f64 = 5.0;
/// Ratio between consecutive regularisations.
const SCALING: f64 = 0.5;
/// Marginal error tolerated by the rounded plan, relative to the mass.
pub const FEASIBILITY: f64 = 1e-6;
/// Extra final-stage iterations spent approaching `FEASIBILITY`.
const POLISH: usize = 500;

#[derive(Debug, Clone)]
pub struct SinkhornOutcome {
    /// `<P, C>` for the rounded entropic plan.
    pub primal_cost: f64,
    /// `l1` marginal error of the iterates before rounding.
    pub iterate_error: f64,
    /// `l1` marginal error of the rounded plan.
    pub marginal_error: f64,
    pub iterations: usize,
}

struct Kernel {
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Kernel {
    fn empty() -> Self {
        Self {
            row_start: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Fills the kernel for the potentials `f`, `g`. The first fill scans all
    /// pairs; later fills only rescan the previous support. Entries dropped at
    /// the previous stage had reduced cost above `TRUNCATION` times the old
    /// `eps`, which is twice the new one, so they stay negligible unless the
    /// potentials moved by more than `TRUNCATION * eps` within one stage.
    fn rebuild<C>(&mut self, a: &[f64], n: usize, cost: &C, f: &[f64], g: &[f64], eps: f64)
    where
        C: Fn(usize, usize) -> f64 + Sync,
    {
        let first = self.row_start.is_empty();
        let mut out = 0;
        let mut row_start = Vec::with_capacity(a.len() + 1);
        row_start.push(0);
        for (i, &ai) in a.iter().enumerate() {
            let limit = TRUNCATION - ai.ln();
            let mut keep = |j: usize, cols: &mut Vec<u32>, vals: &mut Vec<f64>| {
                let r = (cost(i, j) - f[i] - g[j]) / eps;
                if r <= limit {
                    if out < cols.len() {
                        cols[out] = j as u32;
                        vals[out] = (-r).exp();
                    } else {
                        cols.push(j as u32);
                        vals.push((-r).exp());
                    }
                    out += 1;
                }
            };
            if first {
                for j in 0..n {
                    keep(j, &mut self.cols, &mut self.vals);
                }
            } else {
                // Compaction in place: `out` never overtakes the read cursor.
                for k in self.row_start[i]..self.row_start[i + 1] {
                    let j = self.cols[k] as usize;
                    keep(j, &mut self.cols, &mut self.vals);
                }
            }
            row_start.push(out);
        }
        self.cols.truncate(out);
        self.vals.truncate(out);
        self.row_start = row_start;
    }
}

impl Kernel {
    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_start[i]..self.row_start[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// `K_ij <- u_i K_ij v_j`, absorbing the scalings without rebuilding.
    fn scale(&mut self, u: &[f64], v: &[f64]) {
        for i in 0..u.len() {
            let r = self.row_start[i]..self.row_start[i + 1];
            for (&j, k) in self.cols[r.clone()].iter().zip(&mut self.vals[r]) {
                *k *= u[i] * v[j as usize];
            }
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let (c, k) = self.row(i);
            *o = c.iter().zip(k).map(|(&j, &kij)| kij * v[j as usize]).sum();
        });
    }

    fn apply_transpose(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            let (c, k) = self.row(i);
            for (&j, &kij) in c.iter().zip(k) {
                out[j as usize] += kij * ui;
            }
        }
    }
}

/// Entropic transport between `a` and `b` for the cost `cost(i, j)`.
/// Regularisation decreases geometrically from `eps_start` to `eps_final`;
/// every stage iterates until the `l1` marginal error is below `tol` times the
/// mass, intermediate stages with a floor of `1e-2`.
pub fn solve<C>(a: &[f64], b: &[f64], cost: C, eps_start: f64, eps_final: f64, max_iters: usize, tol: f64) -> Result<SinkhornOutcome>
where
    C: Fn(usize, usize) -> f64 + Sync,
{
    let m = a.len();
    let n = b.len();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut u = vec![1.0; m];
    let mut v = vec![1.0; n];
    let mut ku = vec![0.0; n];
    let mut kv = vec![0.0; m];
    let mut eps = eps_start.max(eps_final);
    let mut kernel = Kernel::empty();
    let (lo, hi) = ((-ABSORB).exp(), ABSORB.exp());
    let mut iterations = 0;
    let mass: f64 = b.iter().sum();
    loop {
        let last = eps <= eps_final * (1.0 + 1e-12);
        let stage_tol = if last { tol } else { tol.max(1e-2) };
        kernel.rebuild(a, n, &cost, &f, &g, eps);
        let mut error = f64::INFINITY;
        let mut since_check = 0;
        // Once the final stage meets `tol`, keep iterating towards exact
        // marginals for a few hundred more iterations: the rounding step
        // moves the residual mass along arbitrary pairs.
        let mut polish_until = None;
        loop {
            if error <= stage_tol * mass {
                if !last || error <= FEASIBILITY * mass {
                    break;
                }
                let until = *polish_until.get_or_insert(iterations + POLISH);
                if iterations >= until.min(max_iters) {
                    break;
                }
            }
            if iterations >= max_iters {
                return Err(Error::NonConvergence {
                    method: "sinkhorn",
                    detail: format!("marginal error {error:e} after {iterations} iterations at eps {eps:e}"),
                });
            }
            iterations += 1;
            kernel.apply(&v, &mut kv);
            for i in 0..m {
                u[i] = if kv[i] > 0.0 { a[i] / kv[i] } else { 1.0 };
            }
            kernel.apply_transpose(&u, &mut ku);
            for j in 0..n {
                v[j] = if ku[j] > 0.0 { b[j] / ku[j] } else { 1.0 };
            }
            let blown = u.iter().chain(&v).any(|&x| !(x > lo && x < hi));
            if blown {
                kernel.scale(&u, &v);
                absorb(&mut f, &mut g, &mut u, &mut v, eps);
                continue;
            }
            since_check += 1;
            if since_check >= 5 {
                since_check = 0;
                // Column marginals are exact after the v update; measure rows.
                kernel.apply(&v, &mut kv);
                error = (0..m).map(|i| (u[i] * kv[i] - a[i]).abs()).sum();
            }
        }
        kernel.scale(&u, &v);
        absorb(&mut f, &mut g, &mut u, &mut v, eps);
        if last {
            return round_and_price(a, b, &kernel, &cost, error, iterations);
        }
        eps = (eps * SCALING).max(eps_final);
    }
}

/// Projects the plan onto the transport polytope (scale rows down, scale
/// columns down, then add the rank-one correction of the remaining deficits)
/// and returns its cost.
fn round_and_price<C>(a: &[f64], b: &[f64], kernel: &Kernel, cost: &C, iterate_error: f64, iterations: usize) -> Result<SinkhornOutcome>
where
    C: Fn(usize, usize) -> f64 + Sync,
{
    let m = a.len();
    let n = b.len();
    let mut vals = kernel.vals.clone();
    for i in 0..m {
        let r = kernel.row_start[i]..kernel.row_start[i + 1];
        let s: f64 = vals[r.clone()].iter().sum();
        if s > a[i] {
            let x = a[i] / s;
            vals[r].iter_mut().for_each(|p| *p *= x);
        }
    }
    let mut cols = vec![0.0; n];
    for (&j, &p) in kernel.cols.iter().zip(&vals) {
        cols[j as usize] += p;
    }
    let y: Vec<f64> = (0..n).map(|j| if cols[j] > b[j] { b[j] / cols[j] } else { 1.0 }).collect();
    for (&j, p) in kernel.cols.iter().zip(vals.iter_mut()) {
        *p *= y[j as usize];
    }
    let mut rows = vec![0.0; m];
    let mut cols = vec![0.0; n];
    for i in 0..m {
        let r = kernel.row_start[i]..kernel.row_start[i + 1];
        for (&j, &p) in kernel.cols[r.clone()].iter().zip(&vals[r]) {
            rows[i] += p;
            cols[j as usize] += p;
        }
    }
    let dr: Vec<f64> = (0..m).map(|i| (a[i] - rows[i]).max(0.0)).collect();
    let dc: Vec<f64> = (0..n).map(|j| (b[j] - cols[j]).max(0.0)).collect();
    let deficit: f64 = dr.iter().sum();
    let sparse: f64 = (0..m)
        .into_par_iter()
        .map(|i| {
            let r = kernel.row_start[i]..kernel.row_start[i + 1];
            kernel.cols[r.clone()].iter().zip(&vals[r]).map(|(&j, &p)| p * cost(i, j as usize)).sum::<f64>()
        })
        .sum();
    let correction: f64 = if deficit > 0.0 {
        (0..m)
            .into_par_iter()
            .filter(|&i| dr[i] > 0.0)
            .map(|i| dr[i] * (0..n).filter(|&j| dc[j] > 0.0).map(|j| dc[j] * cost(i, j)).sum::<f64>())
            .sum::<f64>()
            / deficit
    } else {
        0.0
    };
    // Marginals of the rounded plan, up to rounding in the sums above.
    let dc_total: f64 = dc.iter().sum();
    let mut marginal_error: f64 = 0.0;
    if deficit > 0.0 {
        marginal_error += (0..m).map(|i| (rows[i] + dr[i] * dc_total / deficit - a[i]).abs()).sum::<f64>();
        marginal_error += (0..n).map(|j| (cols[j] + dc[j] - b[j]).abs()).sum::<f64>();
    } else {
        marginal_error += (0..m).map(|i| (rows[i] - a[i]).abs()).sum::<f64>();
        marginal_error += (0..n).map(|j| (cols[j] - b[j]).abs()).sum::<f64>();
    }
    let mass: f64 = b.iter().sum();
    if marginal_error > FEASIBILITY * mass {
        return Err(Error::NonConvergence {
            method: "sinkhorn",
            detail: format!("rounded plan has marginal error {marginal_error:e}"),
        });
    }
    Ok(SinkhornOutcome {
        primal_cost: sparse + correction,
        iterate_error,
        marginal_error,
        iterations,
    })
}

fn absorb(f: &mut [f64], g: &mut [f64], u: &mut [f64], v: &mut [f64], eps: f64) {
    for (fi, ui) in f.iter_mut().zip(u.iter_mut()) {
        *fi += eps * ui.ln();
        *ui = 1.0;
    }
    for (gj, vj) in g.iter_mut().zip(v.iter_mut()) {
        *gj += eps * vj.ln();
        *vj = 1.0;
    }
}
