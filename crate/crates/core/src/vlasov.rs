//! Particle-in-cell discretisation of the scaled Vlasov-Poisson system:
//! cloud-in-cell deposition, spectral field solve and a leapfrog pusher.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::field::GriddedField;
use crate::grid::{wrap, TorusGrid, MAX_DIM};
use crate::params::QuasineutralParams;
use crate::poisson::{solve_potential, PoissonSolution};

/// Particles per deposition chunk. Partial grids are summed in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 16_384;

/// Cloud-in-cell stencil: base node per axis and the weight of the upper
/// neighbour.
#[inline]
fn stencil(grid: &TorusGrid, x: &[f64]) -> ([usize; MAX_DIM], [f64; MAX_DIM]) {
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for a in 0..grid.dim() {
        let n = grid.cells_along(a);
        let s = x[a] * n as f64;
        let fl = s.floor();
        frac[a] = s - fl;
        base[a] = (fl as i64).rem_euclid(n as i64) as usize;
    }
    (base, frac)
}

/// Visit the `2^d` stencil nodes with their multilinear weights.
#[inline]
fn for_each_corner(grid: &TorusGrid, x: &[f64], mut f: impl FnMut(usize, f64)) {
    let d = grid.dim();
    let (base, frac) = stencil(grid, x);
    for corner in 0..(1usize << d) {
        let mut idx = [0usize; MAX_DIM];
        let mut w = 1.0;
        for a in 0..d {
            let up = (corner >> a) & 1 == 1;
            idx[a] = if up { (base[a] + 1) % grid.cells_along(a) } else { base[a] };
            w *= if up { frac[a] } else { 1.0 - frac[a] };
        }
        f(grid.flat_index(&idx[..d]), w);
    }
}

/// Charge density `rho = sum_i w_i S(x - x_i) / cellvol`.
pub fn deposit(ensemble: &ParticleEnsemble, grid: &TorusGrid) -> Result<GriddedField> {
    let d = grid.dim();
    if ensemble.dim() != d {
        return Err(Error::GridMismatch(format!("ensemble dim {} vs grid dim {}", ensemble.dim(), d)));
    }
    let cells = grid.len();
    let chunk = CHUNK.max(ensemble.len() / 64 + 1);
    let partials: Vec<Vec<f64>> = ensemble
        .positions()
        .par_chunks(chunk * d)
        .zip(ensemble.weights().par_chunks(chunk))
        .map(|(pos, w)| {
            let mut acc = vec![0.0; cells];
            for (x, &wi) in pos.chunks_exact(d).zip(w) {
                for_each_corner(grid, x, |i, s| acc[i] += wi * s);
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; cells];
    for p in &partials {
        for (v, a) in values.iter_mut().zip(p) {
            *v += a;
        }
    }
    let inv = 1.0 / grid.cell_volume();
    values.iter_mut().for_each(|v| *v *= inv);
    GriddedField::from_values(grid, 1, values)
}

/// Multilinear interpolation of every component of `field` at `x`.
pub fn interpolate_field(field: &GriddedField, x: &[f64]) -> [f64; MAX_DIM] {
    let grid = field.grid();
    let mut out = [0.0; MAX_DIM];
    let comps = field.components().min(MAX_DIM);
    for_each_corner(grid, x, |i, s| {
        for (c, o) in out.iter_mut().enumerate().take(comps) {
            *o += s * field.at(c, i);
        }
    });
    out
}

/// Largest particle speed.
pub fn support_radius(ensemble: &ParticleEnsemble) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let d = ensemble.dim();
    Ok(ensemble
        .velocities()
        .par_chunks(d * 1024)
        .map(|c| c.chunks_exact(d).map(|v| v.iter().map(|x| x * x).sum::<f64>()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max)
        .sqrt())
}

/// `sum_i w_i exp(-2 pi i k.x_i)`, the exact Fourier mode of the particle
/// density.
pub fn density_mode(ensemble: &ParticleEnsemble, k: &[i64]) -> Complex64 {
    let d = ensemble.dim();
    ensemble
        .positions()
        .chunks_exact(d)
        .zip(ensemble.weights())
        .map(|(x, &w)| {
            let phase: f64 = x.iter().zip(k).map(|(xi, &ki)| ki as f64 * xi).sum();
            Complex64::from_polar(w, -2.0 * PI * phase)
        })
        .sum()
}

/// Acceleration model used by the pusher.
#[derive(Debug, Clone, PartialEq)]
pub enum ForceModel {
    /// Field re-solved from the deposited density every step.
    SelfConsistent,
    /// Externally imposed constant field.
    Uniform(Vec<f64>),
    /// Cached field kept fixed.
    Frozen,
}

#[derive(Debug, Clone)]
pub struct KineticState {
    pub ensemble: ParticleEnsemble,
    pub time: f64,
    pub params: QuasineutralParams,
    pub grid: TorusGrid,
    pub solution: PoissonSolution,
    pub density: GriddedField,
    pub force: ForceModel,
}

impl KineticState {
    pub fn new(ensemble: ParticleEnsemble, grid: TorusGrid, params: QuasineutralParams) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let density = deposit(&ensemble, &grid)?;
        let solution = solve_potential(&density, params.epsilon)?;
        Ok(Self {
            ensemble,
            time: 0.0,
            params,
            grid,
            solution,
            density,
            force: ForceModel::SelfConsistent,
        })
    }

    pub fn with_force(mut self, force: ForceModel) -> Result<Self> {
        if let ForceModel::Uniform(e) = &force {
            if e.len() != self.grid.dim() {
                return Err(invalid("force", "uniform field needs d components"));
            }
        }
        self.force = force;
        Ok(self)
    }

    fn kick(&mut self, dt: f64) {
        let d = self.grid.dim();
        let field = &self.solution.field;
        let uniform = match &self.force {
            ForceModel::Uniform(e) => Some(e.clone()),
            _ => None,
        };
        let (pos, vel, _) = self.ensemble.parts_mut();
        vel.par_chunks_mut(d * 1024)
            .zip(pos.par_chunks(d * 1024))
            .for_each(|(vc, xc)| {
                for (v, x) in vc.chunks_exact_mut(d).zip(xc.chunks_exact(d)) {
                    let e = match &uniform {
                        Some(e) => {
                            let mut out = [0.0; MAX_DIM];
                            out[..d].copy_from_slice(e);
                            out
                        }
                        None => interpolate_field(field, x),
                    };
                    for a in 0..d {
                        v[a] += dt * e[a];
                    }
                }
            });
    }

    fn drift(&mut self, dt: f64) {
        let d = self.grid.dim();
        let (pos, vel, _) = self.ensemble.parts_mut();
        pos.par_chunks_mut(d * 1024)
            .zip(vel.par_chunks(d * 1024))
            .for_each(|(xc, vc)| {
                for (x, v) in xc.iter_mut().zip(vc) {
                    *x = wrap(*x + dt * v);
                }
            });
    }

    fn refresh(&mut self) -> Result<()> {
        self.density = deposit(&self.ensemble, &self.grid)?;
        if self.force == ForceModel::SelfConsistent {
            self.solution = solve_potential(&self.density, self.params.epsilon)?;
        }
        Ok(())
    }
}

/// One kick-drift-kick step. Negative `dt` integrates backwards, which
/// reverses a step exactly when the force does not depend on positions.
pub fn push(state: &KineticState, dt: f64) -> Result<KineticState> {
    if !dt.is_finite() || dt == 0.0 {
        return Err(invalid("dt", format!("{dt} must be finite and nonzero")));
    }
    let v = support_radius(&state.ensemble)?;
    let spacing = state.grid.min_spacing();
    if dt.abs() * v > spacing {
        return Err(Error::Cfl {
            dt,
            support_radius: v,
            spacing,
        });
    }
    let mut next = state.clone();
    next.kick(0.5 * dt);
    next.drift(dt);
    next.refresh()?;
    next.kick(0.5 * dt);
    next.time = state.time + dt;
    Ok(next)
}

/// Kinetic, field and total energy.
pub fn energy(state: &KineticState) -> (f64, f64, f64) {
    let kinetic = state.ensemble.kinetic_energy();
    let field = state.solution.field_energy;
    (kinetic, field, kinetic + field)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsSeries {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
    pub field_energy: Vec<f64>,
    pub total_energy: Vec<f64>,
    /// `V(t)`, the largest particle speed.
    pub support_radius: Vec<f64>,
    pub density_sup: Vec<f64>,
    pub density_l2: Vec<f64>,
    /// Largest field magnitude on the grid.
    pub field_sup: Vec<f64>,
    pub w2_to_reference: Vec<Option<f64>>,
}

/// Column names of the diagnostics table.
pub const DIAGNOSTICS_COLUMNS: [&str; 9] = ["t", "mass", "ekin", "efield", "etotal", "vmax", "rho_inf", "rho_l2", "w2_ref"];

impl DiagnosticsSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn record(&mut self, state: &KineticState, w2_ref: Option<f64>) -> Result<()> {
        let (k, f, t) = energy(state);
        self.times.push(state.time);
        self.mass.push(state.density.integral(0));
        self.kinetic_energy.push(k);
        self.field_energy.push(f);
        self.total_energy.push(t);
        self.support_radius.push(support_radius(&state.ensemble)?);
        self.density_sup.push(state.density.sup_norm());
        self.density_l2.push(state.density.l2_norm());
        self.field_sup.push(state.solution.field.sup_norm());
        self.w2_to_reference.push(w2_ref);
        Ok(())
    }

    /// Row `i` in the order of [`DIAGNOSTICS_COLUMNS`]; a missing reference
    /// distance is `NaN`.
    pub fn row(&self, i: usize) -> [f64; 9] {
        [
            self.times[i],
            self.mass[i],
            self.kinetic_energy[i],
            self.field_energy[i],
            self.total_energy[i],
            self.support_radius[i],
            self.density_sup[i],
            self.density_l2[i],
            self.w2_to_reference[i].unwrap_or(f64::NAN),
        ]
    }

    /// Largest `|E(t) - E(0)| / |E(0)|` of the total energy.
    pub fn relative_energy_drift(&self) -> f64 {
        let e0 = self.total_energy.first().copied().unwrap_or(0.0);
        let scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
        self.total_energy.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
    }

    /// Largest relative deviation of the deposited mass.
    pub fn relative_mass_drift(&self) -> f64 {
        let m0 = self.mass.first().copied().unwrap_or(0.0);
        self.mass.iter().map(|m| (m - m0).abs() / m0.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: DiagnosticsSeries,
    pub final_state: KineticState,
}

/// Fixed-step integration to `t_end`; diagnostics every `record_every`
/// steps and at the final time.
pub fn run(initial: &KineticState, t_end: f64, dt: f64, record_every: usize) -> Result<RunOutput> {
    run_with(initial, t_end, dt, record_every, |_| Ok(None))
}

/// [`run`] with a hook called at every record; the hook may write snapshots
/// and returns the optional reference distance for that record.
pub fn run_with(
    initial: &KineticState,
    t_end: f64,
    dt: f64,
    record_every: usize,
    mut on_record: impl FnMut(&KineticState) -> Result<Option<f64>>,
) -> Result<RunOutput> {
    if !(t_end >= 0.0) {
        return Err(invalid("t_end", format!("{t_end} must be >= 0")));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("{dt} must be > 0")));
    }
    if record_every == 0 {
        return Err(invalid("record_every", "must be >= 1"));
    }
    let steps = (t_end / dt).round() as usize;
    let mut series = DiagnosticsSeries::default();
    let mut state = initial.clone();
    let w = on_record(&state)?;
    series.record(&state, w)?;
    for step in 1..=steps {
        state = push(&state, dt)?;
        state.time = initial.time + step as f64 * dt;
        if step % record_every == 0 || step == steps {
            let w = on_record(&state)?;
            series.record(&state, w)?;
        }
    }
    Ok(RunOutput {
        series,
        final_state: state,
    })
}
