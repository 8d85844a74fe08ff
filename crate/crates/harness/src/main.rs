use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use quasineutral::snapshot::{load_ensemble, save, Snapshot};
use quasineutral::transport::{w_exact, w_sinkhorn_with, SinkhornOptions};
use quasineutral::vlasov::DIAGNOSTICS_COLUMNS;
use quasineutral_harness::calibrate::calibrate;
use quasineutral_harness::config::{parse_config, ExperimentConfig};
use quasineutral_harness::report::{bounds_table, read_twin_csv, summary, write_report, write_sweep};
use quasineutral_harness::sweep::sweep_epsilon;
use quasineutral_harness::twin::{run_single, run_twin};

#[derive(Parser)]
#[command(name = "quasineutral", version, about = "Quasineutral-limit twin runs, sweeps and Wasserstein tools")]
struct Cli {
    /// Experiment config (TOML-style key-value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Affects speed only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single kinetic run: diagnostics.csv plus initial and final snapshots.
    Run,
    /// Twin run against the fluid family and the limit.
    Twin {
        /// Fit the envelope constants on this seed first and freeze them.
        #[arg(long)]
        calibrate_seed: Option<u64>,
    },
    /// One twin run per epsilon.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
    },
    /// Distance between two ensemble snapshots.
    Wasserstein {
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        #[arg(long, default_value_t = 2)]
        p: u32,
        #[arg(long, value_enum, default_value_t = Method::Exact)]
        method: Method,
        /// Relative entropic regularisation (sinkhorn only).
        #[arg(long)]
        reg: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        iters: usize,
        /// Write the optimal coupling as CSV (exact only).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Envelope table for a twin.csv under the config's constants.
    Bounds {
        #[arg(long)]
        from: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Sinkhorn,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut config = parse_config(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    Ok(config)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run => {
            let config = load_config(cli)?;
            let (initial, out) = run_single(&config)?;
            let dir = &config.output;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(DIAGNOSTICS_COLUMNS)?;
            for i in 0..out.series.len() {
                w.write_record(out.series.row(i).iter().map(f64::to_string))?;
            }
            write(&dir.join("diagnostics.csv"), &String::from_utf8(w.into_inner()?)?)?;
            write(&dir.join("config.toml"), &config.to_text())?;
            save(dir.join("initial.pss"), &Snapshot::Ensemble(initial))?;
            save(dir.join("final.pss"), &Snapshot::Ensemble(out.final_state.ensemble))?;
            let mass = out.series.relative_mass_drift();
            println!("mass drift {mass:e}");
            println!("energy drift {:e}", out.series.relative_energy_drift());
            Ok(mass < 1e-12)
        }
        Command::Twin { calibrate_seed } => {
            let mut config = load_config(cli)?;
            if let Some(seed) = calibrate_seed {
                if *seed == config.seed {
                    bail!("the calibration seed must differ from the run seed");
                }
                let mut reference = config.clone();
                reference.seed = *seed;
                let cal = calibrate(&reference)?;
                println!(
                    "calibrated on seed {seed}: c0 = {} (fit {}), c_alpha = {} (fit {})",
                    cal.c0, cal.fitted_c0, cal.c_alpha, cal.fitted_c_alpha
                );
                config = cal.apply(&config);
            }
            let report = run_twin(&config)?;
            write_report(&report, &config.output)?;
            print!("{}", summary(&report)?);
            Ok(report.passed())
        }
        Command::Sweep { epsilons } => {
            let config = load_config(cli)?;
            let sweep = sweep_epsilon(&config, epsilons)?;
            write_sweep(&sweep, &config.output)?;
            for r in &sweep.rows {
                println!(
                    "eps {:<8} phi {:<10.3e} sup W1(f~,g) {:<10.4e} frequency {}",
                    r.epsilon,
                    r.phi,
                    r.sup_w1_to_limit,
                    r.frequency.map_or("none".to_string(), |w| format!("{w:.4}"))
                );
            }
            Ok(sweep.rows.iter().all(|r| r.passed))
        }
        Command::Wasserstein {
            mu,
            nu,
            p,
            method,
            reg,
            iters,
            plan,
        } => {
            let a = load_ensemble(mu).with_context(|| format!("reading {}", mu.display()))?;
            let b = load_ensemble(nu).with_context(|| format!("reading {}", nu.display()))?;
            match method {
                Method::Exact => {
                    let (d, coupling) = w_exact(&a, &b, *p)?;
                    println!("W{p} = {d}");
                    if let Some(path) = plan {
                        let mut w = csv::Writer::from_writer(Vec::new());
                        w.write_record(["source", "target", "mass"])?;
                        for (i, j, m) in &coupling.entries {
                            w.write_record([i.to_string(), j.to_string(), m.to_string()])?;
                        }
                        write(path, &String::from_utf8(w.into_inner()?)?)?;
                    }
                }
                Method::Sinkhorn => {
                    if plan.is_some() {
                        bail!("--plan is only available with --method exact");
                    }
                    let mut options = SinkhornOptions::default_for(*p);
                    options.max_iters = *iters;
                    if let Some(r) = reg {
                        options.reg = *r;
                    }
                    let (d, outcome) = w_sinkhorn_with(&a, &b, *p, options)?;
                    println!("W{p} ~ {d} ({} iterations)", outcome.iterations);
                }
            }
            Ok(true)
        }
        Command::Bounds { from } => {
            let config = load_config(cli)?;
            let samples = read_twin_csv(from)?;
            let (text, ok) = bounds_table(&samples, &config)?;
            let path = config.output.join("bounds.csv");
            write(&path, &text)?;
            let failed = text.lines().skip(1).filter(|l| l.ends_with(",0")).count();
            println!("{} samples, {failed} above an envelope: {}", samples.len(), if ok { "pass" } else { "FAIL" });
            println!("wrote {}", path.display());
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
