//! Experiment configuration: parsing, defaults, validation and the resolved
//! text form used for hashing and round trips.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use quasineutral::correctors::CorrectorFrequency;
use quasineutral::QuasineutralParams;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Uniform density, compressive velocity `b sin(2 pi k x_0) e_0`.
    /// Not well prepared: drives plasma oscillations.
    PlasmaWave,
    /// Uniform density, shear velocity `b sin(2 pi k x_1) e_0`.
    /// Well prepared: `div j = 0` and `E = 0` at `t = 0`.
    Shear,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::PlasmaWave => "plasma_wave",
            Scenario::Shear => "shear",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "plasma_wave" => Some(Scenario::PlasmaWave),
            "shear" => Some(Scenario::Shear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    None,
    /// Velocities of a random fraction of particles displaced by a fixed
    /// vector field of wavenumber `k`, with the amplitude tuned to `W_2 = phi`.
    VelocityField,
}

impl PerturbationKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::None => "none",
            PerturbationKind::VelocityField => "velocity_field",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    Fixed(f64),
    /// `dt = courant * h / V(0)`, capped at `eps / 20`.
    Courant(f64),
}

/// How `phi` follows `eps` in a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiSchedule {
    /// `phi = eps^exponent`.
    Power(f64),
    /// Keep the configured magnitude.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: QuasineutralParams,
    pub dim: usize,
    pub cells: usize,
    pub particles_per_cell: usize,
    pub dt: DtPolicy,
    pub samples: usize,
    pub scenario: Scenario,
    pub scenario_amplitude: f64,
    pub scenario_wavenumber: i64,
    pub perturbation: PerturbationKind,
    pub phi: f64,
    pub perturbation_fraction: f64,
    pub perturbation_wavenumber: i64,
    pub theta_nodes: usize,
    pub theta_cutoff: f64,
    pub corrector_frequency: CorrectorFrequency,
    pub transport_points: usize,
    pub envelope_c0: f64,
    pub envelope_c_alpha: f64,
    pub schedule: PhiSchedule,
    pub output: PathBuf,
    pub seed: u64,
}

/// Keys without defaults.
pub const REQUIRED_KEYS: [&str; 4] = ["params.epsilon", "grid.cells", "scenario.name", "perturbation.magnitude"];

impl ExperimentConfig {
    /// A config with every optional key at its default.
    pub fn with_required(epsilon: f64, cells: usize, scenario: Scenario, phi: f64) -> Self {
        let defaults = QuasineutralParams::default();
        Self {
            params: QuasineutralParams { epsilon, ..defaults },
            dim: 2,
            cells,
            particles_per_cell: 16,
            dt: DtPolicy::Fixed(0.01),
            samples: 11,
            scenario,
            scenario_amplitude: 0.2,
            scenario_wavenumber: 1,
            perturbation: PerturbationKind::VelocityField,
            phi,
            perturbation_fraction: 0.5,
            perturbation_wavenumber: 3,
            theta_nodes: 1,
            theta_cutoff: 1.0,
            corrector_frequency: CorrectorFrequency::InverseEpsilon,
            transport_points: 1024,
            envelope_c0: 1.0,
            envelope_c_alpha: 1.0,
            schedule: PhiSchedule::Power(2.0),
            output: PathBuf::from("out"),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(HarnessError::Config(format!("`{key}`: {why}")));
        self.params.validate()?;
        if !(1..=3).contains(&self.dim) {
            return bad("grid.dim", format!("{} not in 1..=3", self.dim));
        }
        if self.cells < 4 || !self.cells.is_power_of_two() {
            return bad("grid.cells", format!("{} must be a power of two >= 4", self.cells));
        }
        if self.particles_per_cell == 0 {
            return bad("particles.per_cell", "must be >= 1".into());
        }
        match self.dt {
            DtPolicy::Fixed(dt) if !(dt > 0.0 && dt <= self.params.final_time) => {
                return bad("time.dt", format!("{dt} not in (0, final_time]"));
            }
            DtPolicy::Courant(c) if !(c > 0.0 && c <= 1.0) => return bad("time.courant", format!("{c} not in (0, 1]")),
            _ => {}
        }
        if self.samples < 2 {
            return bad("time.samples", "at least two samples are required".into());
        }
        if self.scenario == Scenario::Shear && self.dim < 2 {
            return bad("scenario.name", "shear needs dim >= 2".into());
        }
        if !(self.scenario_amplitude >= 0.0 && self.scenario_amplitude.is_finite()) {
            return bad("scenario.amplitude", format!("{} must be >= 0", self.scenario_amplitude));
        }
        if self.scenario_wavenumber < 1 || self.scenario_wavenumber as usize >= self.cells / 2 {
            return bad("scenario.wavenumber", format!("{} not resolved on {} cells", self.scenario_wavenumber, self.cells));
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return bad("perturbation.magnitude", format!("{} must be >= 0", self.phi));
        }
        if self.perturbation == PerturbationKind::None && self.phi != 0.0 {
            return bad("perturbation.magnitude", "must be 0 when kind = \"none\"".into());
        }
        if !(self.perturbation_fraction > 0.0 && self.perturbation_fraction <= 1.0) {
            return bad("perturbation.fraction", format!("{} not in (0, 1]", self.perturbation_fraction));
        }
        if self.perturbation_wavenumber < 0 || self.perturbation_wavenumber as usize >= self.cells / 2 {
            return bad(
                "perturbation.wavenumber",
                format!("{} not resolved on {} cells", self.perturbation_wavenumber, self.cells),
            );
        }
        if self.theta_nodes == 0 {
            return bad("theta.nodes", "must be >= 1".into());
        }
        if !(self.theta_cutoff > 0.0) {
            return bad("theta.cutoff", format!("{} must be > 0", self.theta_cutoff));
        }
        if self.transport_points < 2 {
            return bad("transport.points", "must be >= 2".into());
        }
        if !(self.envelope_c0 > 0.0) || !(self.envelope_c_alpha >= 0.0) {
            return bad("envelope", "c0 must be > 0 and c_alpha >= 0".into());
        }
        Ok(())
    }

    /// Fully resolved config in the input syntax.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", quote(&self.output.to_string_lossy()));
        let _ = writeln!(s, "\n[params]");
        for (k, v) in [
            ("epsilon", p.epsilon),
            ("gamma", p.gamma),
            ("alpha", p.alpha),
            ("beta", p.beta),
            ("cap_k", p.cap_k),
            ("c0", p.c0),
            ("c_alpha", p.c_alpha),
            ("final_time", p.final_time),
        ] {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "\n[grid]\ndim = {}\ncells = {}", self.dim, self.cells);
        let _ = writeln!(s, "\n[particles]\nper_cell = {}", self.particles_per_cell);
        let _ = writeln!(s, "\n[time]");
        match self.dt {
            DtPolicy::Fixed(dt) => {
                let _ = writeln!(s, "policy = \"fixed\"\ndt = {dt:?}");
            }
            DtPolicy::Courant(c) => {
                let _ = writeln!(s, "policy = \"courant\"\ncourant = {c:?}");
            }
        }
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(
            s,
            "\n[scenario]\nname = {}\namplitude = {:?}\nwavenumber = {}",
            quote(self.scenario.name()),
            self.scenario_amplitude,
            self.scenario_wavenumber
        );
        let _ = writeln!(
            s,
            "\n[perturbation]\nkind = {}\nmagnitude = {:?}\nfraction = {:?}\nwavenumber = {}",
            quote(self.perturbation.name()),
            self.phi,
            self.perturbation_fraction,
            self.perturbation_wavenumber
        );
        let _ = writeln!(s, "\n[theta]\nnodes = {}\ncutoff = {:?}", self.theta_nodes, self.theta_cutoff);
        let freq = match self.corrector_frequency {
            CorrectorFrequency::InverseEpsilon => "inverse_epsilon",
            CorrectorFrequency::InverseSqrtEpsilon => "inverse_sqrt_epsilon",
        };
        let _ = writeln!(s, "\n[correctors]\nfrequency = {}", quote(freq));
        let _ = writeln!(s, "\n[transport]\npoints = {}", self.transport_points);
        let _ = writeln!(s, "\n[envelope]\nc0 = {:?}\nc_alpha = {:?}", self.envelope_c0, self.envelope_c_alpha);
        let _ = writeln!(s, "\n[sweep]");
        match self.schedule {
            PhiSchedule::Power(e) => {
                let _ = writeln!(s, "schedule = \"power\"\nexponent = {e:?}");
            }
            PhiSchedule::Fixed => {
                let _ = writeln!(s, "schedule = \"fixed\"");
            }
        }
        s
    }

    /// SHA-256 of the resolved text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn quote(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

/// Tracks which keys were requested so that everything else is reported as
/// unknown, and collects every missing required key before failing.
struct Reader<'a> {
    root: &'a Table,
    known: BTreeSet<String>,
    missing: Vec<String>,
    errors: Vec<String>,
}

impl<'a> Reader<'a> {
    fn lookup(&mut self, path: &str) -> Option<&'a Value> {
        self.known.insert(path.to_string());
        match path.split_once('.') {
            Some((section, key)) => {
                self.known.insert(section.to_string());
                match self.root.get(section) {
                    Some(Value::Table(t)) => t.get(key),
                    Some(_) => {
                        self.errors.push(format!("`{section}` must be a section"));
                        None
                    }
                    None => None,
                }
            }
            None => self.root.get(path),
        }
    }

    fn float(&mut self, path: &str, default: Option<f64>) -> f64 {
        match self.lookup(path) {
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(other) => {
                self.errors.push(format!("`{path}` must be a number, got {}", other.type_str()));
                f64::NAN
            }
            None => self.fallback(path, default, f64::NAN),
        }
    }

    fn int(&mut self, path: &str, default: Option<i64>) -> i64 {
        match self.lookup(path) {
            Some(Value::Integer(v)) => *v,
            Some(other) => {
                self.errors.push(format!("`{path}` must be an integer, got {}", other.type_str()));
                0
            }
            None => self.fallback(path, default, 0),
        }
    }

    fn count(&mut self, path: &str, default: Option<usize>) -> usize {
        let v = self.int(path, default.map(|d| d as i64));
        if v < 0 {
            self.errors.push(format!("`{path}` must be non-negative"));
            return 0;
        }
        v as usize
    }

    fn string(&mut self, path: &str, default: Option<&str>) -> String {
        match self.lookup(path) {
            Some(Value::String(v)) => v.clone(),
            Some(other) => {
                self.errors.push(format!("`{path}` must be a string, got {}", other.type_str()));
                String::new()
            }
            None => self.fallback(path, default.map(str::to_string), String::new()),
        }
    }

    fn fallback<T>(&mut self, path: &str, default: Option<T>, placeholder: T) -> T {
        default.unwrap_or_else(|| {
            self.missing.push(path.to_string());
            placeholder
        })
    }

    fn unknown(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (key, value) in self.root {
            match value {
                Value::Table(t) if self.known.contains(key) => {
                    out.extend(t.keys().map(|k| format!("{key}.{k}")).filter(|p| !self.known.contains(p)));
                }
                _ if self.known.contains(key) => {}
                _ => out.push(key.clone()),
            }
        }
        out
    }
}

/// Parse config text. Unknown keys and missing required keys are errors; all
/// missing keys are listed together.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
    let mut r = Reader {
        root: &root,
        known: BTreeSet::new(),
        missing: Vec::new(),
        errors: Vec::new(),
    };
    let d = QuasineutralParams::default();
    let params = QuasineutralParams {
        epsilon: r.float("params.epsilon", None),
        gamma: r.float("params.gamma", Some(d.gamma)),
        alpha: r.float("params.alpha", Some(d.alpha)),
        beta: r.float("params.beta", Some(d.beta)),
        cap_k: r.float("params.cap_k", Some(d.cap_k)),
        c0: r.float("params.c0", Some(d.c0)),
        c_alpha: r.float("params.c_alpha", Some(d.c_alpha)),
        final_time: r.float("params.final_time", Some(d.final_time)),
    };
    let base = ExperimentConfig::with_required(params.epsilon, 0, Scenario::PlasmaWave, 0.0);
    let dim = r.count("grid.dim", Some(base.dim));
    let cells = r.count("grid.cells", None);
    let particles_per_cell = r.count("particles.per_cell", Some(base.particles_per_cell));
    let policy = r.string("time.policy", Some("fixed"));
    let dt_value = r.float("time.dt", Some(0.01));
    let courant = r.float("time.courant", Some(0.5));
    let dt = match policy.as_str() {
        "fixed" => DtPolicy::Fixed(dt_value),
        "courant" => DtPolicy::Courant(courant),
        other => {
            r.errors.push(format!("`time.policy`: unknown policy {other:?} (fixed, courant)"));
            DtPolicy::Fixed(dt_value)
        }
    };
    let samples = r.count("time.samples", Some(base.samples));
    let scenario_name = r.string("scenario.name", None);
    let scenario = match Scenario::parse(&scenario_name) {
        Some(s) => s,
        None => {
            if !scenario_name.is_empty() {
                r.errors.push(format!("`scenario.name`: unknown scenario {scenario_name:?} (plasma_wave, shear)"));
            }
            Scenario::PlasmaWave
        }
    };
    let scenario_amplitude = r.float("scenario.amplitude", Some(base.scenario_amplitude));
    let scenario_wavenumber = r.int("scenario.wavenumber", Some(base.scenario_wavenumber));
    let kind = r.string("perturbation.kind", Some("velocity_field"));
    let perturbation = match kind.as_str() {
        "none" => PerturbationKind::None,
        "velocity_field" => PerturbationKind::VelocityField,
        other => {
            r.errors.push(format!("`perturbation.kind`: unknown kind {other:?} (none, velocity_field)"));
            PerturbationKind::None
        }
    };
    let phi = r.float("perturbation.magnitude", None);
    let perturbation_fraction = r.float("perturbation.fraction", Some(base.perturbation_fraction));
    let perturbation_wavenumber = r.int("perturbation.wavenumber", Some(base.perturbation_wavenumber));
    let theta_nodes = r.count("theta.nodes", Some(base.theta_nodes));
    let theta_cutoff = r.float("theta.cutoff", Some(base.theta_cutoff));
    let freq = r.string("correctors.frequency", Some("inverse_epsilon"));
    let corrector_frequency = match freq.as_str() {
        "inverse_epsilon" => CorrectorFrequency::InverseEpsilon,
        "inverse_sqrt_epsilon" => CorrectorFrequency::InverseSqrtEpsilon,
        other => {
            r.errors.push(format!(
                "`correctors.frequency`: unknown frequency {other:?} (inverse_epsilon, inverse_sqrt_epsilon)"
            ));
            CorrectorFrequency::InverseEpsilon
        }
    };
    let transport_points = r.count("transport.points", Some(base.transport_points));
    let envelope_c0 = r.float("envelope.c0", Some(base.envelope_c0));
    let envelope_c_alpha = r.float("envelope.c_alpha", Some(base.envelope_c_alpha));
    let schedule_name = r.string("sweep.schedule", Some("power"));
    let exponent = r.float("sweep.exponent", Some(2.0));
    let schedule = match schedule_name.as_str() {
        "power" => PhiSchedule::Power(exponent),
        "fixed" => PhiSchedule::Fixed,
        other => {
            r.errors.push(format!("`sweep.schedule`: unknown schedule {other:?} (power, fixed)"));
            PhiSchedule::Fixed
        }
    };
    let output = PathBuf::from(r.string("output", Some("out")));
    let seed = r.int("seed", Some(0));

    let unknown = r.unknown();
    if !unknown.is_empty() {
        return Err(HarnessError::UnknownKeys(unknown));
    }
    if !r.missing.is_empty() {
        return Err(HarnessError::MissingKeys(r.missing));
    }
    if !r.errors.is_empty() {
        return Err(HarnessError::Config(r.errors.join("; ")));
    }
    if seed < 0 {
        return Err(HarnessError::Config("`seed` must be non-negative".into()));
    }
    let config = ExperimentConfig {
        params,
        dim,
        cells,
        particles_per_cell,
        dt,
        samples,
        scenario,
        scenario_amplitude,
        scenario_wavenumber,
        perturbation,
        phi,
        perturbation_fraction,
        perturbation_wavenumber,
        theta_nodes,
        theta_cutoff,
        corrector_frequency,
        transport_points,
        envelope_c0,
        envelope_c_alpha,
        schedule,
        output,
        seed: seed as u64,
    };
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}
