//! Multi-fluid pressureless Euler-Poisson system and its incompressible
//! limit, discretised pseudo-spectrally with classical RK4 in time.
//!
//! A family is a finite quadrature of the velocity-label measure
//! `mu(d theta) = c_d d theta / (1 + |theta|^{d+1})`: node `theta` carries a
//! density `rho^theta`, a velocity `v^theta` and a weight `w_theta`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::field::{
    forward_transform, inverse_transform, refine_samples, wavevector_norm_sq, GriddedField, PhaseTable,
    SpectralField,
};
use crate::grid::{wrap, TorusGrid, MAX_DIM};
use crate::poisson::{field_spectrum, field_energy_of, potential_spectrum};
use crate::quadrature::{gauss_legendre, half_line};
use crate::snapshot::{save, Snapshot};

/// Density below which a fluid is declared to have formed a singularity.
pub const NEGATIVE_DENSITY_TOLERANCE: f64 = -1e-8;
/// Largest admissible `||sum_theta w rho - 1||_inf` in limit mode.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-6;

/// `c_d` such that `mu` is a probability measure on `R^d`.
pub fn normalizing_constant(dim: usize, tol: f64) -> Result<f64> {
    let sphere = match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => return Err(invalid("dim", format!("{dim} not in {{1,2,3}}"))),
    };
    let d = dim as i32;
    let radial = half_line(|r| r.powi(d - 1) / (1.0 + r.powi(d + 1)), tol)?;
    Ok(1.0 / (sphere * radial))
}

/// Density of `mu` at `theta`.
pub fn mu_density(theta: &[f64], c_d: f64) -> f64 {
    let d = theta.len() as i32;
    let r = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    c_d / (1.0 + r.powi(d + 1))
}

/// Finite quadrature of `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct MuQuadrature {
    pub dim: usize,
    /// Node coordinates, point-major.
    pub nodes: Vec<f64>,
    /// Weights renormalised to sum to one.
    pub weights: Vec<f64>,
    pub cutoff: f64,
    /// `mu`-mass outside `[-cutoff, cutoff]^d`.
    pub tail_mass: f64,
    pub c_d: f64,
}

impl MuQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// Mass of the initial data lost by truncating `mu`, for data whose
    /// densities vanish for `|theta|_inf > data_radius`.
    pub fn discarded_mass(&self, data_radius: f64) -> f64 {
        if data_radius <= self.cutoff {
            0.0
        } else {
            self.tail_mass
        }
    }

    /// Fail when the discarded data mass exceeds `threshold`.
    pub fn ensure_discarded_below(&self, data_radius: f64, threshold: f64) -> Result<()> {
        let lost = self.discarded_mass(data_radius);
        if lost > threshold {
            return Err(invalid(
                "cutoff",
                format!("discarded mass {lost:e} above {threshold:e} for cutoff {}", self.cutoff),
            ));
        }
        Ok(())
    }
}

/// Tensor Gauss-Legendre quadrature of `mu` on `[-cutoff, cutoff]^d` with
/// `n_nodes` nodes per axis. A single node gives the monokinetic family
/// `theta = 0` with weight one.
pub fn discretize_mu(dim: usize, n_nodes: usize, cutoff: f64) -> Result<MuQuadrature> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(invalid("cutoff", format!("{cutoff} must be positive")));
    }
    if n_nodes == 0 {
        return Err(invalid("n_nodes", "at least one node is required"));
    }
    let c_d = normalizing_constant(dim, 1e-10)?;
    if n_nodes == 1 {
        return Ok(MuQuadrature {
            dim,
            nodes: vec![0.0; dim],
            weights: vec![1.0],
            cutoff,
            tail_mass: 0.0,
            c_d,
        });
    }
    let (x, w) = gauss_legendre(n_nodes)?;
    let total = n_nodes.pow(dim as u32);
    let mut nodes = Vec::with_capacity(total * dim);
    let mut raw = Vec::with_capacity(total);
    for i in 0..total {
        let mut rest = i;
        let mut theta = [0.0; MAX_DIM];
        let mut weight = 1.0;
        for a in (0..dim).rev() {
            let j = rest % n_nodes;
            rest /= n_nodes;
            theta[a] = cutoff * x[j];
            weight *= cutoff * w[j];
        }
        raw.push(weight * mu_density(&theta[..dim], c_d));
        nodes.extend_from_slice(&theta[..dim]);
    }
    let inside: f64 = raw.iter().sum();
    Ok(MuQuadrature {
        dim,
        nodes,
        weights: raw.iter().map(|w| w / inside).collect(),
        cutoff,
        tail_mass: (1.0 - inside).max(0.0),
        c_d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluidMode {
    /// Euler-Poisson with the given scaling.
    Epsilon(f64),
    /// Incompressible limit: the field is the multiplier enforcing
    /// `sum_theta w rho = 1`.
    Limit,
}

/// Lagrangian markers carried by the fluid velocity of their node.
#[derive(Debug, Clone, PartialEq)]
pub struct Markers {
    pub node: Vec<usize>,
    /// Positions, point-major.
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FluidFamily {
    pub grid: TorusGrid,
    /// Node coordinates, point-major.
    pub theta_nodes: Vec<f64>,
    pub theta_weights: Vec<f64>,
    pub rho: Vec<SpectralField>,
    pub vel: Vec<SpectralField>,
    pub mode: FluidMode,
    pub c_d: f64,
    pub time: f64,
    pub markers: Option<Markers>,
}

impl FluidFamily {
    /// Build a family from gridded densities and velocities.
    pub fn new(
        grid: &TorusGrid,
        quadrature: &MuQuadrature,
        rho: &[GriddedField],
        vel: &[GriddedField],
        mode: FluidMode,
    ) -> Result<Self> {
        let n = quadrature.len();
        if rho.len() != n || vel.len() != n {
            return Err(invalid("family", format!("{} nodes but {} densities / {} velocities", n, rho.len(), vel.len())));
        }
        if quadrature.dim != grid.dim() {
            return Err(Error::GridMismatch("quadrature and grid dimensions differ".into()));
        }
        for (r, v) in rho.iter().zip(vel) {
            grid.check_same(r.grid())?;
            grid.check_same(v.grid())?;
            if r.components() != 1 || v.components() != grid.dim() {
                return Err(invalid("family", "densities must be scalar and velocities d-vectors"));
            }
        }
        if let FluidMode::Epsilon(eps) = mode {
            if !(eps > 0.0) {
                return Err(invalid("epsilon", format!("{eps} must be positive")));
            }
        }
        let family = Self {
            grid: grid.clone(),
            theta_nodes: quadrature.nodes.clone(),
            theta_weights: quadrature.weights.clone(),
            rho: rho.iter().map(forward_transform).collect(),
            vel: vel.iter().map(forward_transform).collect(),
            mode,
            c_d: quadrature.c_d,
            time: 0.0,
            markers: None,
        };
        family.validate()?;
        Ok(family)
    }

    /// Build a family from closures `rho(node, x)` and `vel(node, x, component)`.
    pub fn from_fn(
        grid: &TorusGrid,
        quadrature: &MuQuadrature,
        rho: impl Fn(usize, &[f64]) -> f64,
        vel: impl Fn(usize, &[f64], usize) -> f64,
        mode: FluidMode,
    ) -> Result<Self> {
        let d = grid.dim();
        let r: Vec<_> = (0..quadrature.len()).map(|i| GriddedField::from_fn(grid, 1, |x, _| rho(i, x))).collect();
        let v: Vec<_> = (0..quadrature.len()).map(|i| GriddedField::from_fn(grid, d, |x, c| vel(i, x, c))).collect();
        Self::new(grid, quadrature, &r, &v, mode)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("theta_weights", "weights must be non-negative"));
        }
        let sum: f64 = self.theta_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(invalid("theta_weights", format!("weights sum to {sum}")));
        }
        let mass = self.total_mass();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::MassMismatch(mass));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.theta_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_weights.is_empty()
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.theta_nodes[i * d..(i + 1) * d]
    }

    /// `integral sum_theta w rho^theta dx`.
    pub fn total_mass(&self) -> f64 {
        self.theta_weights.iter().zip(&self.rho).map(|(w, r)| w * r.coeffs()[0].re).sum()
    }

    /// Mass of each fluid.
    pub fn fluid_masses(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.coeffs()[0].re).collect()
    }

    fn weighted_density_spectrum(&self, rho: &[SpectralField]) -> SpectralField {
        let mut total = SpectralField::zeros(&self.grid, 1);
        for (w, r) in self.theta_weights.iter().zip(rho) {
            total.axpy(*w, r).expect("same grid");
        }
        total
    }

    /// `sum_theta w rho^theta` on the grid.
    pub fn total_density(&self) -> GriddedField {
        inverse_transform(&self.weighted_density_spectrum(&self.rho))
    }

    /// Current `j = sum_theta w rho^theta v^theta` on the grid.
    pub fn current(&self) -> GriddedField {
        let d = self.dim();
        let mut j = GriddedField::zeros(&self.grid, d);
        for ((w, r), v) in self.theta_weights.iter().zip(&self.rho).zip(&self.vel) {
            let r = inverse_transform(r);
            let v = inverse_transform(v);
            for c in 0..d {
                let jc = j.component_mut(c);
                for (i, out) in jc.iter_mut().enumerate() {
                    *out += w * r.at(0, i) * v.at(c, i);
                }
            }
        }
        j
    }

    /// Electric field of the current state.
    pub fn field(&self) -> Result<GriddedField> {
        let physical = physical_state(&self.rho, &self.vel);
        Ok(inverse_transform(&self.field_spectrum(&physical)?))
    }

    fn field_spectrum(&self, physical: &[(GriddedField, GriddedField)]) -> Result<SpectralField> {
        match self.mode {
            FluidMode::Epsilon(eps) => {
                let rho: Vec<SpectralField> = physical.iter().map(|(r, _)| forward_transform(r)).collect();
                field_spectrum(&self.weighted_density_spectrum(&rho), eps)
            }
            FluidMode::Limit => self.multiplier_spectrum(physical),
        }
    }

    /// `E = grad Lap^{-1} div div M` with `M = sum_theta w rho v (x) v`.
    fn multiplier_spectrum(&self, physical: &[(GriddedField, GriddedField)]) -> Result<SpectralField> {
        let d = self.dim();
        let grid = &self.grid;
        let n = grid.len();
        let mut s = SpectralField::zeros(grid, 1);
        for a in 0..d {
            for b in a..d {
                let mut m = GriddedField::zeros(grid, 1);
                for (w, (r, v)) in self.theta_weights.iter().zip(physical) {
                    for (i, out) in m.component_mut(0).iter_mut().enumerate() {
                        *out += w * r.at(0, i) * v.at(a, i) * v.at(b, i);
                    }
                }
                let mut m_hat = forward_transform(&m);
                m_hat.dealias();
                let dd = m_hat.partial(a).partial(b);
                let factor = if a == b { 1.0 } else { 2.0 };
                s.axpy(factor, &dd)?;
            }
        }
        let q = s.inverse_laplacian();
        let e = q.gradient()?;
        debug_assert_eq!(e.coeffs().len(), d * n);
        Ok(e)
    }

    /// Kinetic energy `sum_theta w integral rho |v|^2 / 2`.
    pub fn kinetic_energy(&self) -> f64 {
        let d = self.dim();
        let vol = self.grid.cell_volume();
        self.theta_weights
            .iter()
            .zip(physical_state(&self.rho, &self.vel))
            .map(|(w, (r, v))| {
                let sum: f64 = (0..self.grid.len())
                    .map(|i| r.at(0, i) * (0..d).map(|c| v.at(c, i).powi(2)).sum::<f64>())
                    .sum();
                w * 0.5 * sum * vol
            })
            .sum()
    }

    /// Field energy `(eps^2/2) integral |grad U|^2`; zero in limit mode.
    pub fn field_energy(&self) -> Result<f64> {
        match self.mode {
            FluidMode::Epsilon(eps) => {
                let u = potential_spectrum(&self.weighted_density_spectrum(&self.rho), eps)?;
                Ok(field_energy_of(&u, eps))
            }
            FluidMode::Limit => Ok(0.0),
        }
    }

    pub fn total_energy(&self) -> Result<f64> {
        Ok(self.kinetic_energy() + self.field_energy()?)
    }

    /// Smallest density over all fluids and nodes.
    pub fn min_density(&self) -> f64 {
        self.rho.iter().map(|r| inverse_transform(r).min_value()).fold(f64::INFINITY, f64::min)
    }

    /// Largest fluid speed on the grid.
    pub fn max_speed(&self) -> f64 {
        let d = self.dim();
        self.vel
            .iter()
            .map(|v| {
                let v = inverse_transform(v);
                (0..self.grid.len())
                    .map(|i| (0..d).map(|c| v.at(c, i).powi(2)).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// `||sum_theta w rho - 1||_inf`.
    pub fn constraint_drift(&self) -> f64 {
        self.total_density().values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Attach markers at the sub-lattice points used by [`superpose`].
    pub fn attach_markers(&mut self, particles_per_cell: usize) -> Result<()> {
        let (ensemble, nodes) = superpose_with_nodes(self, particles_per_cell)?;
        self.markers = Some(Markers {
            node: nodes,
            positions: ensemble.positions().to_vec(),
            weights: ensemble.weights().to_vec(),
        });
        Ok(())
    }

    /// Marker positions with the current fluid velocities at those points.
    pub fn marker_ensemble(&self) -> Result<ParticleEnsemble> {
        let m = self.markers.as_ref().ok_or(Error::EmptyEnsemble)?;
        let velocities = marker_velocities(&self.grid, &self.vel, m, &m.positions);
        ParticleEnsemble::new(self.dim(), m.positions.clone(), velocities, m.weights.clone())
    }

    /// Write one PSS1 field per node (`rho` then velocity components) and a
    /// text header listing nodes and weights.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut header = String::new();
        let _ = writeln!(header, "# time {}", self.time);
        let _ = writeln!(header, "# theta weight");
        for i in 0..self.len() {
            let coords: Vec<String> = self.theta(i).iter().map(|t| format!("{t:.17e}")).collect();
            let _ = writeln!(header, "{} {:.17e}", coords.join(" "), self.theta_weights[i]);
            let stacked = GriddedField::stack(&[inverse_transform(&self.rho[i]), inverse_transform(&self.vel[i])])?;
            save(dir.join(format!("node_{i:04}.pss")), &Snapshot::Field(stacked))?;
        }
        fs::write(dir.join("nodes.txt"), header)?;
        Ok(())
    }
}

fn physical_state(rho: &[SpectralField], vel: &[SpectralField]) -> Vec<(GriddedField, GriddedField)> {
    rho.par_iter().zip(vel).map(|(r, v)| (inverse_transform(r), inverse_transform(v))).collect()
}

fn marker_velocities(grid: &TorusGrid, vel: &[SpectralField], m: &Markers, positions: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    positions
        .par_chunks(d)
        .zip(m.node.par_iter())
        .flat_map_iter(|(x, &node)| {
            let table = PhaseTable::new(grid, x);
            (0..d).map(move |c| table.evaluate(vel[node].component(c)).re).collect::<Vec<_>>()
        })
        .collect()
}

struct Derivative {
    rho: Vec<SpectralField>,
    vel: Vec<SpectralField>,
    markers: Vec<f64>,
}

fn evaluate_rhs(family: &FluidFamily, rho: &[SpectralField], vel: &[SpectralField], markers: &[f64]) -> Result<Derivative> {
    let d = family.dim();
    let grid = &family.grid;
    let physical = physical_state(rho, vel);
    let e_hat = family.field_spectrum(&physical)?;
    let parts: Vec<Result<(SpectralField, SpectralField)>> = rho
        .par_iter()
        .zip(vel)
        .zip(&physical)
        .map(|((_, v_hat), (r, v))| {
            let n = grid.len();
            let mut flux = GriddedField::zeros(grid, d);
            for c in 0..d {
                for i in 0..n {
                    flux.component_mut(c)[i] = r.at(0, i) * v.at(c, i);
                }
            }
            let mut flux_hat = forward_transform(&flux);
            flux_hat.dealias();
            let mut drho = flux_hat.divergence()?;
            drho.scale(Complex64::new(-1.0, 0.0));

            let mut adv = GriddedField::zeros(grid, d);
            for b in 0..d {
                let dv = inverse_transform(&v_hat.partial(b));
                for c in 0..d {
                    let out = adv.component_mut(c);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += v.at(b, i) * dv.at(c, i);
                    }
                }
            }
            let mut dvel = forward_transform(&adv);
            dvel.dealias();
            dvel.scale(Complex64::new(-1.0, 0.0));
            dvel.axpy(1.0, &e_hat)?;
            Ok((drho, dvel))
        })
        .collect();
    let mut out = Derivative {
        rho: Vec::with_capacity(rho.len()),
        vel: Vec::with_capacity(rho.len()),
        markers: Vec::new(),
    };
    for p in parts {
        let (r, v) = p?;
        out.rho.push(r);
        out.vel.push(v);
    }
    if let Some(m) = &family.markers {
        out.markers = marker_velocities(grid, vel, m, markers);
    }
    Ok(out)
}

fn combine(base: &[SpectralField], k: &[SpectralField], s: f64) -> Result<Vec<SpectralField>> {
    base.iter()
        .zip(k)
        .map(|(b, k)| {
            let mut out = b.clone();
            out.axpy(s, k)?;
            Ok(out)
        })
        .collect()
}

fn combine_markers(base: &[f64], k: &[f64], s: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, k)| b + s * k).collect()
}

fn check_cfl(family: &FluidFamily, dt: f64) -> Result<()> {
    let v = family.max_speed();
    let spacing = family.grid.min_spacing();
    if !(dt > 0.0) || dt * v > spacing {
        return Err(Error::Cfl {
            dt,
            support_radius: v,
            spacing,
        });
    }
    Ok(())
}

fn rk4(family: &FluidFamily, dt: f64) -> Result<FluidFamily> {
    let rho0 = &family.rho;
    let vel0 = &family.vel;
    let x0: Vec<f64> = family.markers.as_ref().map(|m| m.positions.clone()).unwrap_or_default();
    let k1 = evaluate_rhs(family, rho0, vel0, &x0)?;
    let k2 = evaluate_rhs(
        family,
        &combine(rho0, &k1.rho, 0.5 * dt)?,
        &combine(vel0, &k1.vel, 0.5 * dt)?,
        &combine_markers(&x0, &k1.markers, 0.5 * dt),
    )?;
    let k3 = evaluate_rhs(
        family,
        &combine(rho0, &k2.rho, 0.5 * dt)?,
        &combine(vel0, &k2.vel, 0.5 * dt)?,
        &combine_markers(&x0, &k2.markers, 0.5 * dt),
    )?;
    let k4 = evaluate_rhs(
        family,
        &combine(rho0, &k3.rho, dt)?,
        &combine(vel0, &k3.vel, dt)?,
        &combine_markers(&x0, &k3.markers, dt),
    )?;
    let mut next = family.clone();
    for (s, k) in [(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)] {
        let w = s * dt / 6.0;
        for (r, kr) in next.rho.iter_mut().zip(&k.rho) {
            r.axpy(w, kr)?;
        }
        for (v, kv) in next.vel.iter_mut().zip(&k.vel) {
            v.axpy(w, kv)?;
        }
        if let Some(m) = next.markers.as_mut() {
            for (x, kx) in m.positions.iter_mut().zip(&k.markers) {
                *x += w * kx;
            }
        }
    }
    if let Some(m) = next.markers.as_mut() {
        m.positions.iter_mut().for_each(|x| *x = wrap(*x));
    }
    next.time = family.time + dt;
    Ok(next)
}

fn check_density(family: &FluidFamily) -> Result<()> {
    let min = family.min_density();
    if min < NEGATIVE_DENSITY_TOLERANCE || !min.is_finite() {
        return Err(Error::NegativeDensity {
            min_density: min,
            time: family.time,
        });
    }
    Ok(())
}

/// One RK4 step of the Euler-Poisson family.
pub fn multifluid_step(family: &FluidFamily, dt: f64) -> Result<FluidFamily> {
    if !matches!(family.mode, FluidMode::Epsilon(_)) {
        return Err(invalid("mode", "multifluid_step needs an epsilon-mode family"));
    }
    check_cfl(family, dt)?;
    let next = rk4(family, dt)?;
    check_density(&next)?;
    Ok(next)
}

/// One RK4 step of the incompressible limit family, followed by the
/// projection `rho^theta <- rho^theta / sum_theta w rho`.
pub fn limit_step(family: &FluidFamily, dt: f64) -> Result<FluidFamily> {
    if family.mode != FluidMode::Limit {
        return Err(invalid("mode", "limit_step needs a limit-mode family"));
    }
    let drift = family.constraint_drift();
    if drift > CONSTRAINT_TOLERANCE {
        return Err(Error::ConstraintDrift {
            drift,
            tolerance: CONSTRAINT_TOLERANCE,
        });
    }
    check_cfl(family, dt)?;
    let mut next = rk4(family, dt)?;
    let drift = next.constraint_drift();
    if drift > CONSTRAINT_TOLERANCE {
        return Err(Error::ConstraintDrift {
            drift,
            tolerance: CONSTRAINT_TOLERANCE,
        });
    }
    project_density(&mut next);
    check_density(&next)?;
    Ok(next)
}

fn project_density(family: &mut FluidFamily) {
    let total = family.total_density();
    for r in family.rho.iter_mut() {
        let mut g = inverse_transform(r);
        for (v, t) in g.component_mut(0).iter_mut().zip(total.component(0)) {
            *v /= t;
        }
        *r = forward_transform(&g);
    }
}

/// Prepare limit-mode data from arbitrary data: normalise the densities so
/// that `sum_theta w rho = 1` and remove the gradient part of the current by
/// subtracting `grad q`, `Lap q = div j`, from every velocity.
pub fn limit_initial(family: &FluidFamily) -> Result<FluidFamily> {
    let mut out = family.clone();
    out.mode = FluidMode::Limit;
    if out.total_density().min_value() <= 0.0 {
        return Err(invalid("rho", "total density must be positive to normalise"));
    }
    project_density(&mut out);
    let j_hat = forward_transform(&out.current());
    let grad_q = j_hat.divergence()?.inverse_laplacian().gradient()?;
    for v in out.vel.iter_mut() {
        v.axpy(-1.0, &grad_q)?;
    }
    out.validate()?;
    Ok(out)
}

/// Largest `|div j|` in Fourier space, zero for a divergence-free current.
pub fn current_divergence(family: &FluidFamily) -> Result<f64> {
    let j_hat = forward_transform(&family.current());
    let div = j_hat.divergence()?;
    Ok(div.energy().sqrt())
}

/// Integrate either system over `[t, t + horizon]` with fixed steps,
/// calling `observe` after every step.
pub fn evolve(
    family: &FluidFamily,
    horizon: f64,
    dt: f64,
    mut observe: impl FnMut(&FluidFamily) -> Result<()>,
) -> Result<FluidFamily> {
    let steps = (horizon / dt).round() as usize;
    let mut state = family.clone();
    let t0 = family.time;
    for s in 1..=steps {
        state = match state.mode {
            FluidMode::Limit => limit_step(&state, dt)?,
            FluidMode::Epsilon(_) => multifluid_step(&state, dt)?,
        };
        state.time = t0 + s as f64 * dt;
        observe(&state)?;
    }
    Ok(state)
}

fn lattice_root(particles_per_cell: usize, d: usize) -> usize {
    let mut m = 1usize;
    while (m + 1).pow(d as u32) <= particles_per_cell {
        m += 1;
    }
    m
}

/// Particles representing `g = sum_theta w rho^theta delta(v - v^theta)`.
///
/// Each cell holds `m^d` sub-lattice points (`m^d` the largest power not
/// exceeding `particles_per_cell`). Every point receives one particle per
/// node with weight `w rho^theta(x) cellvol / m^d` and velocity
/// `v^theta(x)`; densities and velocities are evaluated spectrally.
pub fn superpose(family: &FluidFamily, particles_per_cell: usize) -> Result<ParticleEnsemble> {
    superpose_with_nodes(family, particles_per_cell).map(|(e, _)| e)
}

fn superpose_with_nodes(family: &FluidFamily, particles_per_cell: usize) -> Result<(ParticleEnsemble, Vec<usize>)> {
    let d = family.dim();
    let grid = &family.grid;
    let m = lattice_root(particles_per_cell.max(1), d);
    let h = grid.spacing(0);
    let shift = ((0.5 / m as f64) - 0.5) * h;
    let points = grid.len() * m.pow(d as u32);
    let point_weight = grid.cell_volume() / m.pow(d as u32) as f64;
    let mut positions = Vec::with_capacity(points * family.len() * d);
    let mut velocities = Vec::with_capacity(points * family.len() * d);
    let mut weights = Vec::with_capacity(points * family.len());
    let mut nodes = Vec::with_capacity(points * family.len());
    let isotropic = grid.cells().iter().all(|&c| c == grid.cells()[0]);
    for (node, ((w, r), v)) in family.theta_weights.iter().zip(&family.rho).zip(&family.vel).enumerate() {
        let (coords, rho_s, vel_s) = if m.is_power_of_two() && isotropic {
            let rf = refine_samples(r, m, shift)?;
            let vf = refine_samples(v, m, shift)?;
            let fine = rf.grid().clone();
            let coords: Vec<f64> = (0..fine.len())
                .flat_map(|i| {
                    let x = fine.node_position(i);
                    (0..d).map(move |a| wrap(x[a] + shift))
                })
                .collect();
            let rho_s: Vec<f64> = rf.component(0).to_vec();
            let vel_s: Vec<f64> = (0..fine.len()).flat_map(|i| (0..d).map(|c| vf.at(c, i)).collect::<Vec<_>>()).collect();
            (coords, rho_s, vel_s)
        } else {
            let mut coords = Vec::with_capacity(points * d);
            for i in 0..grid.len() {
                let base = grid.node_position(i);
                for s in 0..m.pow(d as u32) {
                    let mut rest = s;
                    let mut x = [0.0; MAX_DIM];
                    for a in (0..d).rev() {
                        let sub = rest % m;
                        rest /= m;
                        x[a] = base[a] + ((sub as f64 + 0.5) / m as f64 - 0.5) * grid.spacing(a);
                    }
                    coords.extend((0..d).map(|a| wrap(x[a])));
                }
            }
            let evaluated: Vec<(f64, Vec<f64>)> = coords
                .par_chunks(d)
                .map(|x| {
                    let table = PhaseTable::new(grid, x);
                    let rho = table.evaluate(r.component(0)).re;
                    let vel = (0..d).map(|c| table.evaluate(v.component(c)).re).collect();
                    (rho, vel)
                })
                .collect();
            let rho_s = evaluated.iter().map(|(r, _)| *r).collect();
            let vel_s = evaluated.into_iter().flat_map(|(_, v)| v).collect();
            (coords, rho_s, vel_s)
        };
        for (p, rho) in rho_s.iter().enumerate() {
            positions.extend_from_slice(&coords[p * d..(p + 1) * d]);
            velocities.extend_from_slice(&vel_s[p * d..(p + 1) * d]);
            weights.push((w * rho * point_weight).max(0.0));
            nodes.push(node);
        }
    }
    Ok((ParticleEnsemble::new(d, positions, velocities, weights)?, nodes))
}

/// Modes `k` with `rho_hat(k) != 0`, used to report the spectral extent.
pub fn active_modes(field: &SpectralField, threshold: f64) -> usize {
    let g = field.grid();
    (0..g.len())
        .filter(|&i| field.coeffs()[i].norm() > threshold && wavevector_norm_sq(g, i) > 0.0)
        .count()
}
