//! CSV and text output of twin runs, sweeps and envelope tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::sweep::{Sweep, SWEEP_COLUMNS};
use crate::twin::{apply_envelopes, TwinReport, TwinSample};

pub const TWIN_COLUMNS: [&str; 18] = [
    "t",
    "w2",
    "w1_unfiltered",
    "w1_filtered",
    "w1_to_limit",
    "w1_fluid_to_limit",
    "rho_f_inf",
    "rho_g_inf",
    "rho_g_dev",
    "A",
    "intA",
    "env_w2",
    "vmax",
    "env_V",
    "triangle_ok",
    "envelope_ok",
    "support_ok",
    "ok",
];

pub const STEP_COLUMNS: [&str; 6] = ["t", "mass", "ekin", "efield", "etotal", "density_mode"];

pub const BOUNDS_COLUMNS: [&str; 8] = ["t", "A", "intA", "env_w2", "env_V", "measured_w2", "measured_V", "ok"];

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn table<const N: usize>(header: [&str; N], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn twin_csv(report: &TwinReport) -> Result<String> {
    table(
        TWIN_COLUMNS,
        report.samples.iter().map(|s| {
            let mut row: Vec<String> = [
                s.t,
                s.w2,
                s.w1_unfiltered,
                s.w1_filtered,
                s.w1_to_limit,
                s.w1_fluid_to_limit,
                s.rho_f_inf,
                s.rho_g_inf,
                s.rho_g_dev,
                s.a,
                s.int_a,
                s.env_w2,
                s.support,
                s.env_support,
            ]
            .iter()
            .map(f64::to_string)
            .collect();
            row.extend([
                flag(s.triangle_ok()),
                flag(s.envelope_ok()),
                flag(s.support_ok()),
                flag(s.triangle_ok() && s.envelope_ok() && s.support_ok()),
            ]);
            row
        }),
    )
}

pub fn steps_csv(report: &TwinReport) -> Result<String> {
    let s = &report.steps;
    table(
        STEP_COLUMNS,
        (0..s.t.len()).map(|i| {
            [
                s.t[i],
                s.mass[i],
                s.kinetic_energy[i],
                s.field_energy[i],
                s.kinetic_energy[i] + s.field_energy[i],
                s.density_mode[i],
            ]
            .iter()
            .map(f64::to_string)
            .collect()
        }),
    )
}

/// SHA-256 over both CSV tables: equal for byte-identical outputs.
pub fn report_hash(report: &TwinReport) -> Result<String> {
    let mut h = Sha256::new();
    h.update(twin_csv(report)?.as_bytes());
    h.update(steps_csv(report)?.as_bytes());
    Ok(hex::encode(h.finalize()))
}

pub fn summary(report: &TwinReport) -> Result<String> {
    let c = &report.config;
    let mut s = String::new();
    let _ = writeln!(s, "# twin run summary");
    let _ = writeln!(s, "# version {}  config sha256 {}", report.version, report.config_hash);
    let _ = writeln!(s, "# resolved configuration (defaults applied):");
    for line in c.to_text().lines() {
        let _ = writeln!(s, "#   {line}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "seed                     {}", c.seed);
    let _ = writeln!(s, "particles                {}", report.particles);
    let _ = writeln!(s, "transport sample points  {}", c.transport_points);
    let _ = writeln!(s, "dt                       {}", report.dt);
    let _ = writeln!(s, "initial W2 (target phi)  {} ({})", report.samples[0].w2, c.phi);
    let _ = writeln!(s, "perturbation amplitude   {}", report.perturbation_amplitude);
    let _ = writeln!(s, "corrector ||div d+(0)||  {}", report.corrector_divergence);
    let _ = writeln!(s, "sup W2(f, g_eps)         {}", report.sup(|s| s.w2));
    let _ = writeln!(s, "sup W1(f~, g~)           {}", report.sup(|s| s.w1_filtered));
    let _ = writeln!(s, "sup W1(f~, g)            {}", report.sup(|s| s.w1_to_limit));
    match report.oscillation_frequency() {
        Some(w) => {
            let _ = writeln!(s, "oscillation frequency    {w} (eps * w = {})", w * c.params.epsilon);
        }
        None => {
            let _ = writeln!(s, "oscillation frequency    none");
        }
    }
    let status = |ok: bool| if ok { "pass" } else { "FAIL" };
    let _ = writeln!(s, "triangle decomposition   {}", status(report.triangle_ok()));
    let _ = writeln!(s, "W2 envelope domination   {}", status(report.envelope_ok()));
    let _ = writeln!(s, "support envelope         {}", status(report.support_ok()));
    let _ = writeln!(s, "overall                  {}", status(report.passed()));
    let _ = writeln!(s, "report sha256            {}", report_hash(report)?);
    Ok(s)
}

/// Write `config.toml`, `twin.csv`, `steps.csv` and `summary.txt` to `dir`.
pub fn write_report(report: &TwinReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), report.config.to_text())?;
    fs::write(dir.join("twin.csv"), twin_csv(report)?)?;
    fs::write(dir.join("steps.csv"), steps_csv(report)?)?;
    fs::write(dir.join("summary.txt"), summary(report)?)?;
    Ok(())
}

pub fn sweep_csv(sweep: &Sweep) -> Result<String> {
    table(
        SWEEP_COLUMNS,
        sweep.rows.iter().map(|r| {
            let mut row: Vec<String> = [
                r.epsilon,
                r.phi,
                r.sup_w2,
                r.sup_w1_filtered,
                r.sup_w1_to_limit,
                r.envelope_margin,
                r.support_margin,
                r.frequency.unwrap_or(f64::NAN),
            ]
            .iter()
            .map(f64::to_string)
            .collect();
            row.push(flag(r.passed));
            row
        }),
    )
}

/// Write `sweep.csv` and one report directory per epsilon.
pub fn write_sweep(sweep: &Sweep, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep.csv"), sweep_csv(sweep)?)?;
    for (i, report) in sweep.reports.iter().enumerate() {
        write_report(report, dir.join(format!("eps_{i:02}")))?;
    }
    Ok(())
}

/// Samples of a `twin.csv` table with the measured columns filled in.
pub fn read_twin_csv(path: impl AsRef<Path>) -> Result<Vec<TwinSample>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Config(format!("{}: missing column `{name}`", path.display())))
    };
    let idx = [col("t")?, col("w2")?, col("rho_f_inf")?, col("rho_g_inf")?, col("rho_g_dev")?, col("vmax")?];
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let v = |i: usize| -> Result<f64> {
            record
                .get(idx[i])
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| HarnessError::Config(format!("{}: bad number in row {}", path.display(), out.len() + 1)))
        };
        out.push(TwinSample {
            t: v(0)?,
            w2: v(1)?,
            w1_unfiltered: f64::NAN,
            w1_filtered: f64::NAN,
            w1_to_limit: f64::NAN,
            w1_fluid_to_limit: f64::NAN,
            rho_f_inf: v(2)?,
            rho_g_inf: v(3)?,
            rho_g_dev: v(4)?,
            a: 0.0,
            int_a: 0.0,
            env_w2: 0.0,
            support: v(5)?,
            env_support: 0.0,
        });
    }
    if out.len() < 2 {
        return Err(HarnessError::Config(format!("{}: at least two rows are required", path.display())));
    }
    Ok(out)
}

/// Envelope table for measured samples under the config's frozen constants.
/// Returns the CSV text and whether every row passed.
pub fn bounds_table(samples: &[TwinSample], config: &ExperimentConfig) -> Result<(String, bool)> {
    let mut samples = samples.to_vec();
    apply_envelopes(&mut samples, config)?;
    let all_ok = samples.iter().all(|s| s.envelope_ok() && s.support_ok());
    let text = table(
        BOUNDS_COLUMNS,
        samples.iter().map(|s| {
            let mut row: Vec<String> = [s.t, s.a, s.int_a, s.env_w2, s.env_support, s.w2, s.support]
                .iter()
                .map(f64::to_string)
                .collect();
            row.push(flag(s.envelope_ok() && s.support_ok()));
            row
        }),
    )?;
    Ok((text, all_ok))
}
