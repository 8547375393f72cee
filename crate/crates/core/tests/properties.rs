use iae::autodiff::{Tape, Tensor};
use iae::data::fmt_f64;
use iae::eval::{build_grid, edge_ratio_std, edge_ratios_between, median, procrustes, quantile, BBox};
use iae::losses::{loss_iso, loss_piso, reg_cae};
use iae::nn::{Activation, Layer, MlpParams};
use iae::optim::{adam_step, AdamConfig, AdamState};
use iae::sampling::{sample_sphere, stream_rng, Stream};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mlp(seed: u64, dims: &[usize]) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.len() - 1;
    MlpParams {
        layers: (0..n)
            .map(|k| Layer {
                weight: Tensor::from_fn(dims[k + 1], dims[k], |_, _| rng.gen_range(-1.0..1.0)),
                bias: Tensor::vector((0..dims[k + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect()),
                activation: if k + 1 < n { Activation::Softplus { beta: 100.0 } } else { Activation::Identity },
            })
            .collect(),
    }
}

fn rotation(theta: f64) -> Tensor {
    let (c, s) = (theta.cos(), theta.sin());
    Tensor::from_rows(&[[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]).unwrap()
}

/// Left-multiplies the last layer by `q`.
fn rotate_output(net: &MlpParams, q: &Tensor) -> MlpParams {
    let mut out = net.clone();
    let last = out.layers.last_mut().unwrap();
    let (w, b) = (&last.weight, &last.bias);
    let rows = q.rows();
    last.weight = Tensor::from_fn(rows, w.cols(), |r, c| (0..rows).map(|k| q.get(r, k) * w.get(k, c)).sum());
    last.bias = Tensor::vector((0..rows).map(|r| (0..rows).map(|k| q.get(r, k) * b.data()[k]).sum()).collect());
    out
}

fn iso_value(dec: &MlpParams, z: &Tensor, u: &Tensor) -> f64 {
    let tape = Tape::new();
    loss_iso(&dec.bind(&tape, false), tape.constant(z.clone()), u).unwrap().value().item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sphere_samples_have_unit_rows(seed in any::<u64>(), d in 1usize..6, m in 1usize..50) {
        let u = sample_sphere(&mut stream_rng(seed, Stream::IsoDirections), d, m).unwrap();
        prop_assert_eq!(u.shape(), &[m, d][..]);
        for r in u.row_iter() {
            let n: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stream_draws_are_reproducible(seed in any::<u64>()) {
        let a = sample_sphere(&mut stream_rng(seed, Stream::Latent), 3, 8).unwrap();
        let b = sample_sphere(&mut stream_rng(seed, Stream::Latent), 3, 8).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn penalties_are_nonnegative(seed in any::<u64>(), m in 1usize..12) {
        let dec = mlp(seed, &[2, 8, 3]);
        let enc = mlp(seed ^ 1, &[3, 8, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::from_fn(m, 2, |_, _| rng.gen_range(-2.0..2.0));
        let x = Tensor::from_fn(m, 3, |_, _| rng.gen_range(-2.0..2.0));
        let u = sample_sphere(&mut rng, 2, m).unwrap();
        let tape = Tape::new();
        let e = enc.bind(&tape, false);
        prop_assert!(iso_value(&dec, &z, &u) >= 0.0);
        prop_assert!(loss_piso(&e, tape.constant(x.clone()), &u).unwrap().value().item() >= 0.0);
        prop_assert!(reg_cae(&e, tape.constant(x), &u).unwrap().value().item() >= 0.0);
    }

    #[test]
    fn iso_is_invariant_to_output_rotation(seed in any::<u64>(), theta in -3.0f64..3.0) {
        let dec = mlp(seed, &[2, 6, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::from_fn(10, 2, |_, _| rng.gen_range(-1.0..1.0));
        let u = sample_sphere(&mut rng, 2, 10).unwrap();
        let a = iso_value(&dec, &z, &u);
        let b = iso_value(&rotate_output(&dec, &rotation(theta)), &z, &u);
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
    }

    #[test]
    fn iso_of_scaled_isometry_is_squared_excess(s in 0.0f64..3.0, seed in any::<u64>()) {
        let w = Tensor::from_rows(&[[s, 0.0], [0.0, 0.0], [0.0, s]]).unwrap();
        let dec = MlpParams::linear(w, Tensor::zeros(&[3]));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));
        let u = sample_sphere(&mut rng, 2, 5).unwrap();
        prop_assert!((iso_value(&dec, &z, &u) - (s - 1.0).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn edge_ratio_std_ignores_scale_and_rigid_motion(seed in any::<u64>(), c in 0.1f64..10.0, theta in -3.0f64..3.0) {
        let dec = mlp(seed, &[2, 6, 3]);
        let grid = build_grid(BBox { lo: [-1.0, -1.0], hi: [1.0, 1.0] }, 6).unwrap();
        let base = edge_ratio_std(&dec, &grid).unwrap();
        let moved = rotate_output(&dec, &rotation(theta));
        let mut scaled = moved.clone();
        let last = scaled.layers.last_mut().unwrap();
        last.weight = last.weight.scale(c);
        last.bias = last.bias.map(|v| c * v + 1.0);
        let other = edge_ratio_std(&scaled, &grid).unwrap();
        prop_assert!((base.std - other.std).abs() < 1e-9);
        prop_assert!((other.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_has_expected_edge_count(k in 2usize..30) {
        let g = build_grid(BBox { lo: [0.0, 0.0], hi: [1.0, 2.0] }, k).unwrap();
        prop_assert_eq!(g.points.rows(), k * k);
        prop_assert_eq!(g.edges.len(), 3 * k * k - 4 * k + 1);
        prop_assert_eq!(g.num_triangles(), 2 * (k - 1) * (k - 1));
    }

    #[test]
    fn identity_map_has_zero_edge_std(k in 2usize..12) {
        let g = build_grid(BBox { lo: [-1.0, 0.0], hi: [3.0, 1.0] }, k).unwrap();
        let r = edge_ratios_between(&g.points, &g.points, &g.edges).unwrap();
        prop_assert!(r.std < 1e-12);
    }

    #[test]
    fn procrustes_recovers_rigid_motion(seed in any::<u64>(), theta in -3.0f64..3.0, tx in -5.0f64..5.0, flip in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = Tensor::from_fn(30, 2, |_, _| rng.gen_range(-1.0..1.0));
        let (c, s) = (theta.cos(), theta.sin());
        let sign = if flip { -1.0 } else { 1.0 };
        let dst = Tensor::from_fn(30, 2, |i, j| {
            let (x, y) = (src.get(i, 0), sign * src.get(i, 1));
            if j == 0 { c * x - s * y + tx } else { s * x + c * y - tx }
        });
        let fit = procrustes(&src, &dst).unwrap();
        prop_assert!(fit.rmse < 1e-9);
        prop_assert!(fit.aligned.max_abs_diff(&dst) < 1e-9);
    }

    #[test]
    fn quantiles_are_ordered(xs in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (q10, q50, q90) = (quantile(xs.clone(), 0.1), median(xs.clone()), quantile(xs, 0.9));
        prop_assert!(lo <= q10 && q10 <= q50 && q50 <= q90 && q90 <= hi);
    }

    #[test]
    fn first_adam_step_moves_each_coordinate_by_lr(g in proptest::collection::vec(-1e3f64..1e3, 1..10), lr in 1e-5f64..1e-1) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-3));
        let mut p = Tensor::vector(vec![0.0; g.len()]);
        let mut state = AdamState::new([&p], AdamConfig::with_lr(lr));
        adam_step(&mut [&mut p], &[Tensor::vector(g.clone())], &mut state).unwrap();
        // |Δ| = lr·|g|/(|g| + eps)
        for (v, gi) in p.data().iter().zip(&g) {
            prop_assert!((v + lr * gi.signum()).abs() <= lr * 1e-8 / gi.abs() + 1e-15);
        }
    }

    #[test]
    fn float_formatting_round_trips(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}
