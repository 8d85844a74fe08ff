use quasineutral_harness::config::{parse_config_str, DtPolicy, PerturbationKind, PhiSchedule};
use quasineutral_harness::report::{report_hash, steps_csv, twin_csv};
use quasineutral_harness::{run_twin, sweep_epsilon, write_report, ExperimentConfig};

const SMALL: &str = r#"
seed = 3

[params]
epsilon = 0.25
final_time = 0.5

[grid]
dim = 2
cells = 16

[particles]
per_cell = 4

[time]
dt = 0.01
samples = 6

[scenario]
name = "plasma_wave"

[perturbation]
kind = "velocity_field"
magnitude = 0.01

[transport]
points = 256
"#;

fn small() -> ExperimentConfig {
    parse_config_str(SMALL).unwrap()
}

#[test]
fn resolved_config_round_trips_and_reproduces_the_report() {
    let config = small();
    let reparsed = parse_config_str(&config.to_text()).unwrap();
    assert_eq!(reparsed, config);
    assert_eq!(reparsed.hash(), config.hash());
    let a = run_twin(&config).unwrap();
    let b = run_twin(&reparsed).unwrap();
    assert_eq!(report_hash(&a).unwrap(), report_hash(&b).unwrap());
}

#[test]
fn reruns_write_byte_identical_files() {
    let config = small();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_report(&run_twin(&config).unwrap(), d1.path()).unwrap();
    write_report(&run_twin(&config).unwrap(), d2.path()).unwrap();
    for name in ["config.toml", "twin.csv", "steps.csv", "summary.txt"] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn different_seeds_give_different_reports() {
    let mut other = small();
    other.seed = 4;
    let a = run_twin(&small()).unwrap();
    let b = run_twin(&other).unwrap();
    assert_ne!(twin_csv(&a).unwrap(), twin_csv(&b).unwrap());
}

#[test]
fn twin_run_hits_its_target_and_keeps_the_triangle() {
    let report = run_twin(&small()).unwrap();
    assert!((report.samples[0].w2 - 0.01).abs() <= 0.05 * 0.01);
    assert!(report.triangle_ok());
    assert_eq!(report.samples.len(), 6);
    assert!(report.samples.iter().all(|s| s.a >= 1.0 && s.int_a >= 0.0));
    let mass = &report.steps.mass;
    assert!(mass.iter().all(|m| (m - mass[0]).abs() <= 1e-12 * mass[0]));
    assert!(!steps_csv(&report).unwrap().is_empty());
}

#[test]
fn unperturbed_run_measures_the_noise_floor() {
    let mut config = small();
    config.perturbation = PerturbationKind::None;
    config.phi = 0.0;
    let report = run_twin(&config).unwrap();
    assert_eq!(report.perturbation_amplitude, 0.0);
    assert!(report.samples[0].w2 < 1e-12);
    let floor = report.sup(|s| s.w2);
    eprintln!("noise floor sup W2 = {floor:e}");
    // The PIC run drifts from the fluid family by discretisation error only,
    // well below the perturbed runs' distances.
    assert!(floor < 0.01, "noise floor {floor}");
}

#[test]
fn sweep_frequencies_scale_as_inverse_epsilon() {
    let mut config = small();
    config.params.final_time = 4.0;
    config.samples = 5;
    config.dt = DtPolicy::Fixed(0.005);
    // Linear regime: a weak wave and a fixed small perturbation.
    config.scenario_amplitude = 0.05;
    config.schedule = PhiSchedule::Fixed;
    config.phi = 1e-3;
    let sweep = sweep_epsilon(&config, &[0.5, 0.25]).unwrap();
    let w: Vec<f64> = sweep.rows.iter().map(|r| r.frequency.unwrap()).collect();
    eprintln!("frequencies {w:?}");
    for (r, eps) in sweep.rows.iter().zip([0.5, 0.25]) {
        assert!((r.frequency.unwrap() * eps - 1.0).abs() < 0.02);
    }
    assert!((w[1] / w[0] - 2.0).abs() < 0.08, "ratio {}", w[1] / w[0]);
}

#[test]
fn power_schedule_ties_phi_to_epsilon() {
    let c = quasineutral_harness::sweep::config_for(&small(), 0.5);
    assert_eq!(c.phi, 0.25);
    assert_eq!(c.params.epsilon, 0.5);
}

#[test]
fn sweep_rejects_bad_epsilons() {
    assert!(sweep_epsilon(&small(), &[]).is_err());
    assert!(sweep_epsilon(&small(), &[0.5, 1.5]).is_err());
}
