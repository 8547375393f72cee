mod common;

use common::oracle::*;
use iae::autodiff::{explicit_jacobian, Tensor};
use iae::eval::jacobian_diagnostics;
use iae::nn::MlpParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn batched_jvp_and_vjp_match_explicit_jacobian() {
    let err = jvp_vjp_max_error(40, 11);
    assert!(err < 1e-10, "max gap {err:e}");
}

#[test]
fn jacobian_of_linear_map_is_its_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let w = random_matrix(&mut rng, 3, 2);
    let net = MlpParams::linear(w.clone(), Tensor::vector(vec![0.3, -0.1, 2.0]));
    let j = explicit_jacobian(|v| net.forward(v), &Tensor::vector(vec![0.7, -1.2])).unwrap();
    assert!(j.max_abs_diff(&w) < 1e-15);
}

#[test]
fn circle_quadrature_is_exact_for_low_degree_trig() {
    assert!((circle_mean(|c, _| c * c) - 0.5).abs() < 1e-12);
    assert!(circle_mean(|c, s| c * s).abs() < 1e-12);
}

#[test]
fn monte_carlo_losses_match_exact_values_on_linear_nets() {
    for (name, est, exact) in monte_carlo_relative_errors(10_000) {
        assert!((est - exact).abs() / exact < 0.01, "{name}: {est} vs {exact}");
    }
}

#[test]
fn orthonormal_linear_pairs_are_exact_fixed_points() {
    let dev = orthonormal_pair_max_deviation(21);
    assert!(dev < 1e-12, "deviation {dev:e}");
}

#[test]
fn scaled_linear_pair_reports_its_distortion() {
    let a = Tensor::from_rows(&[[2.0, 0.0], [0.0, 0.5], [0.0, 0.0]]).unwrap();
    let dec = MlpParams::linear(a.clone(), Tensor::zeros(&[3]));
    let enc = MlpParams::linear(transpose(&a), Tensor::zeros(&[2]));
    let rep = jacobian_diagnostics(&enc, &dec, &Tensor::zeros(&[1, 2])).unwrap();
    assert_eq!(rep.median_singular_values, vec![2.0, 0.5]);
    assert!((rep.singular_value_deviation() - 1.0).abs() < 1e-15);
    // AᵀA = diag(4, 0.25)
    assert!((rep.median_ata_dev - (9.0f64 + 0.5625).sqrt()).abs() < 1e-12);
    assert!(rep.median_pinv_ratio < 1e-15);
}
