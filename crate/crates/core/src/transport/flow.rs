//! Transportation problem with real supplies by successive shortest paths
//! on the dense bipartite residual graph.

use crate::error::{Error, Result};

/// Optimal coupling `(i, j, mass)` between supplies `a` and demands `b`
/// (equal totals) for the row-major cost matrix.
pub fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
    let m = a.len();
    let n = b.len();
    debug_assert_eq!(cost.len(), m * n);
    let total: f64 = a.iter().sum();
    let tol = 1e-14 * total.max(f64::MIN_POSITIVE);
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; m * n];
    // Potentials keep reduced costs non-negative.
    let mut pi_s = vec![0.0; m];
    let mut pi_t = vec![0.0; n];
    for (j, p) in pi_t.iter_mut().enumerate() {
        *p = (0..m).map(|i| cost[i * n + j]).fold(f64::INFINITY, f64::min);
    }
    let mut dist_s = vec![0.0; m];
    let mut dist_t = vec![0.0; n];
    let mut done_s = vec![false; m];
    let mut done_t = vec![false; n];
    let mut prev_t = vec![usize::MAX; n];
    let mut prev_s = vec![usize::MAX; m];
    let max_rounds = 64 * (m + n) + 64;
    let mut rounds = 0;
    loop {
        let remaining: f64 = supply.iter().filter(|s| **s > tol).sum();
        if remaining <= 1e-12 * total {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::NonConvergence {
                method: "min-cost flow",
                detail: format!("{remaining:e} mass unrouted after {max_rounds} augmentations"),
            });
        }
        // Dijkstra from all sources with remaining supply.
        for i in 0..m {
            dist_s[i] = if supply[i] > tol { 0.0 } else { f64::INFINITY };
            done_s[i] = false;
            prev_s[i] = usize::MAX;
        }
        dist_t.iter_mut().for_each(|d| *d = f64::INFINITY);
        done_t.iter_mut().for_each(|d| *d = false);
        let mut target = usize::MAX;
        loop {
            // Closest unsettled node (sources first on ties).
            let mut best = f64::INFINITY;
            let mut node = None;
            for i in 0..m {
                if !done_s[i] && dist_s[i] < best {
                    best = dist_s[i];
                    node = Some((true, i));
                }
            }
            for j in 0..n {
                if !done_t[j] && dist_t[j] < best {
                    best = dist_t[j];
                    node = Some((false, j));
                }
            }
            let Some((is_source, k)) = node else { break };
            if is_source {
                done_s[k] = true;
                let row = &cost[k * n..(k + 1) * n];
                for j in 0..n {
                    if done_t[j] {
                        continue;
                    }
                    let reduced = (row[j] + pi_s[k] - pi_t[j]).max(0.0);
                    let d = best + reduced;
                    if d < dist_t[j] {
                        dist_t[j] = d;
                        prev_t[j] = k;
                    }
                }
            } else {
                done_t[k] = true;
                if demand[k] > tol {
                    target = k;
                    break;
                }
                for i in 0..m {
                    if done_s[i] || flow[i * n + k] <= tol {
                        continue;
                    }
                    let reduced = (pi_t[k] - pi_s[i] - cost[i * n + k]).max(0.0);
                    let d = best + reduced;
                    if d < dist_s[i] {
                        dist_s[i] = d;
                        prev_s[i] = k;
                    }
                }
            }
        }
        if target == usize::MAX {
            return Err(Error::NonConvergence {
                method: "min-cost flow",
                detail: "no augmenting path".into(),
            });
        }
        let bound = dist_t[target];
        for i in 0..m {
            pi_s[i] += if done_s[i] { dist_s[i] - bound } else { 0.0 };
        }
        for j in 0..n {
            pi_t[j] += if done_t[j] { dist_t[j] - bound } else { 0.0 };
        }
        // Bottleneck along the path.
        let mut amount = demand[target];
        let mut j = target;
        let source;
        loop {
            let i = prev_t[j];
            if prev_s[i] == usize::MAX {
                source = i;
                break;
            }
            let jp = prev_s[i];
            amount = amount.min(flow[i * n + jp]);
            j = jp;
        }
        amount = amount.min(supply[source]);
        let mut j = target;
        loop {
            let i = prev_t[j];
            flow[i * n + j] += amount;
            if prev_s[i] == usize::MAX {
                break;
            }
            let jp = prev_s[i];
            flow[i * n + jp] -= amount;
            j = jp;
        }
        supply[source] -= amount;
        demand[target] -= amount;
    }
    Ok((0..m * n)
        .filter(|&k| flow[k] > tol)
        .map(|k| (k / n, k % n, flow[k]))
        .collect())
}
