//! One-dimensional quadrature helpers built on Gauss-Legendre rules.

use gauss_quad::GaussLegendre;

use crate::error::{invalid, Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 1 {
        return Ok((vec![0.0], vec![2.0]));
    }
    let rule = GaussLegendre::new(n).map_err(|_| invalid("n_nodes", "must be >= 1"))?;
    let mut pairs: Vec<(f64, f64)> = rule.nodes().copied().zip(rule.weights().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Composite Gauss-Legendre rule with `panels` equal panels on `[a, b]`.
pub struct Composite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Composite {
    pub fn new(a: f64, b: f64, panels: usize, order: usize) -> Result<Self> {
        let (x, w) = gauss_legendre(order)?;
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let lo = a + p as f64 * width;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(lo + 0.5 * width * (xi + 1.0));
                weights.push(0.5 * width * wi);
            }
        }
        Ok(Self { nodes, weights })
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

const PANEL_ORDER: usize = 15;
const MAX_DEPTH: u32 = 40;

/// Adaptive Gauss-Legendre integration of `f` over `[a, b]` to relative
/// tolerance `tol`.
pub fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let rule = GaussLegendre::new(PANEL_ORDER).expect("order >= 2");
    let whole = rule.integrate(a, b, f);
    let mut budget = 200_000usize;
    let value = refine(&rule, f, a, b, whole, tol * whole.abs().max(f64::MIN_POSITIVE), 0, &mut budget)?;
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    rule: &GaussLegendre,
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    abs_tol: f64,
    depth: u32,
    budget: &mut usize,
) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, f);
    let right = rule.integrate(mid, b, f);
    let err = (left + right - whole).abs();
    if err <= abs_tol || (b - a) <= f64::EPSILON * mid.abs().max(1.0) {
        return Ok(left + right);
    }
    if depth >= MAX_DEPTH || *budget == 0 {
        return Err(Error::NonConvergence {
            method: "adaptive quadrature",
            detail: format!("panel [{a}, {b}] error {err:e} above {abs_tol:e}"),
        });
    }
    *budget -= 1;
    Ok(refine(rule, f, a, mid, left, abs_tol, depth + 1, budget)?
        + refine(rule, f, mid, b, right, abs_tol, depth + 1, budget)?)
}

/// Integral of `f` over `[0, inf)` via the substitution `r = u / (1 - u)`.
pub fn half_line(f: impl Fn(f64) -> f64, tol: f64) -> Result<f64> {
    let g = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - u;
        f(u / one_minus) / (one_minus * one_minus)
    };
    adaptive(&g, 0.0, 1.0, tol)
}
