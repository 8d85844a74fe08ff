use std::f64::consts::PI;

use proptest::prelude::*;
use quasineutral::field::forward_transform;
use quasineutral::poisson::{residual, solve_potential};
use quasineutral::{make_grid, GriddedField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_density(seed: u64, cells: usize) -> GriddedField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = make_grid(2, cells).unwrap();
    let values = (0..grid.len()).map(|_| rng.gen_range(0.5..1.5)).collect();
    GriddedField::from_values(&grid, 1, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solution_is_linear(s1 in 0u64..10_000, s2 in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0, eps in 0.1f64..1.0) {
        let (r1, r2) = (random_density(s1, 16), random_density(s2, 16));
        let mut combo = r1.clone();
        combo.scale(a);
        combo.axpy(b, &r2).unwrap();
        let mut expected = solve_potential(&r1, eps).unwrap().field;
        expected.scale(a);
        expected.axpy(b, &solve_potential(&r2, eps).unwrap().field).unwrap();
        let got = solve_potential(&combo, eps).unwrap().field;
        let scale = expected.sup_norm().max(1.0);
        prop_assert!(got.max_abs_diff(&expected) <= 1e-12 * scale);
    }

    #[test]
    fn field_scales_as_inverse_epsilon_squared(seed in 0u64..10_000, eps in 0.05f64..1.0) {
        let rho = random_density(seed, 16);
        let mut unit = solve_potential(&rho, 1.0).unwrap().field;
        unit.scale(1.0 / (eps * eps));
        let got = solve_potential(&rho, eps).unwrap().field;
        prop_assert!(got.max_abs_diff(&unit) <= 1e-12 * unit.sup_norm().max(1.0));
    }

    #[test]
    fn field_has_zero_mean(seed in 0u64..10_000, eps in 0.05f64..1.0) {
        let sol = solve_potential(&random_density(seed, 32), eps).unwrap();
        let scale = sol.field.sup_norm().max(1.0);
        for c in 0..2 {
            prop_assert!(sol.field.integral(c).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn field_energy_obeys_parseval(seed in 0u64..10_000, eps in 0.1f64..1.0) {
        let rho = random_density(seed, 16);
        let sol = solve_potential(&rho, eps).unwrap();
        let grid = rho.grid().clone();
        let rho_hat = forward_transform(&rho);
        let sum: f64 = (0..grid.len())
            .map(|i| {
                let k = grid.wavevector(i);
                let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
                if k2 == 0.0 { 0.0 } else { rho_hat.coeffs()[i].norm_sqr() / (4.0 * PI * PI * k2) }
            })
            .sum();
        let expected = sum / (2.0 * eps * eps);
        prop_assert!(sol.field_energy >= 0.0);
        prop_assert!((sol.field_energy - expected).abs() <= 1e-10 * expected.max(1e-300));
    }
}

#[test]
fn residual_is_tiny_on_a_fine_grid() {
    for eps in [1.0, 0.25] {
        let rho = random_density(9, 64);
        let sol = solve_potential(&rho, eps).unwrap();
        assert!(residual(&rho, &sol).unwrap() < 1e-10);
    }
}
