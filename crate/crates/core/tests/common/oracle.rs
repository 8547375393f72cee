use std::f64::consts::PI;

use iae::autodiff::{explicit_jacobian, Tape, Tensor};
use iae::eval::jacobian_diagnostics;
use iae::losses::{loss_iso, loss_piso, reg_cae, reg_rae_gp};
use iae::nn::{Activation, Layer, MlpParams};
use iae::sampling::{sample_sphere, stream_rng, Stream};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_mlp(rng: &mut impl Rng, dims: &[usize], beta: f64) -> MlpParams {
    let n = dims.len() - 1;
    MlpParams {
        layers: (0..n)
            .map(|k| Layer {
                weight: random_matrix(rng, dims[k + 1], dims[k]),
                bias: Tensor::vector((0..dims[k + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect()),
                activation: if k + 1 < n { Activation::Softplus { beta } } else { Activation::Identity },
            })
            .collect(),
    }
}

pub fn row(t: &Tensor, i: usize) -> Tensor {
    Tensor::vector(t.row_iter().nth(i).unwrap().to_vec())
}

pub fn matvec(j: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..j.rows()).map(|r| (0..j.cols()).map(|c| j.get(r, c) * v[c]).sum()).collect()
}

pub fn vecmat(v: &[f64], j: &Tensor) -> Vec<f64> {
    (0..j.cols()).map(|c| (0..j.rows()).map(|r| v[r] * j.get(r, c)).sum()).collect()
}

fn random_net(rng: &mut impl Rng, d_in: usize, d_out: usize, beta: f64) -> MlpParams {
    let hidden: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=16)).collect();
    let dims: Vec<usize> = [vec![d_in], hidden, vec![d_out]].concat();
    random_mlp(rng, &dims, beta)
}

/// Largest entrywise gap between batched JVPs/VJPs and products with the
/// explicit Jacobian, over `trials` random nets of each kind.
pub fn jvp_vjp_max_error(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let n = 6;
    for trial in 0..trials {
        let d_in = rng.gen_range(1..=5);
        let d_out = rng.gen_range(1..=5);
        let net = random_net(&mut rng, d_in, d_out, [1.0, 100.0][trial % 2]);
        let x = random_matrix(&mut rng, n, d_in);
        let u = random_matrix(&mut rng, n, d_in);
        let w = random_matrix(&mut rng, n, d_out);
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = net.forward(xv).unwrap();
        let t = tape.jvp_at(y, xv, tape.constant(u.clone())).unwrap().value();
        let s = tape.vjp_at(y, xv, tape.constant(w.clone())).unwrap().value();
        for i in 0..n {
            let j = explicit_jacobian(|v| net.forward(v), &row(&x, i)).unwrap();
            let jv = matvec(&j, row(&u, i).data());
            let vj = vecmat(row(&w, i).data(), &j);
            for (a, b) in row(&t, i).data().iter().zip(&jv).chain(row(&s, i).data().iter().zip(&vj)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Mean of `h(cos θ, sin θ)` over the unit circle by the trapezoid rule.
pub fn circle_mean(h: impl Fn(f64, f64) -> f64) -> f64 {
    let k = 100_000;
    (0..k)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / k as f64;
            h(th.cos(), th.sin())
        })
        .sum::<f64>()
        / k as f64
}

/// Relative errors of the m-sample estimators of L_iso, L_piso, the CAE
/// and the RAE-GP penalties against exact values on fixed linear nets.
pub fn monte_carlo_relative_errors(m: usize) -> Vec<(&'static str, f64, f64)> {
    let a = Tensor::from_rows(&[[1.6, 0.3], [-0.2, 0.5], [0.4, 0.9]]).unwrap();
    let b = Tensor::from_rows(&[[0.8, -0.6, 0.3], [0.1, 1.4, -0.5]]).unwrap();
    let dec = MlpParams::linear(a.clone(), Tensor::vector(vec![0.1, 0.2, 0.3]));
    let enc = MlpParams::linear(b.clone(), Tensor::vector(vec![-0.4, 0.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = random_matrix(&mut rng, m, 2);
    let x = random_matrix(&mut rng, m, 3);
    let u = sample_sphere(&mut stream_rng(5, Stream::IsoDirections), 2, m).unwrap();

    let norm = |v: Vec<f64>| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let fro = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
    let exact = [
        circle_mean(|c, s| (norm(matvec(&a, &[c, s])) - 1.0).powi(2)),
        circle_mean(|c, s| (norm(vecmat(&[c, s], &b)) - 1.0).powi(2)),
        fro(&b),
        fro(&a),
    ];

    let tape = Tape::new();
    let dec_b = dec.bind(&tape, false);
    let enc_b = enc.bind(&tape, false);
    let est = [
        loss_iso(&dec_b, tape.constant(z.clone()), &u).unwrap(),
        loss_piso(&enc_b, tape.constant(x.clone()), &u).unwrap(),
        reg_cae(&enc_b, tape.constant(x), &u).unwrap(),
        reg_rae_gp(&dec_b, tape.constant(z), &u).unwrap(),
    ];
    ["iso", "piso", "cae", "rae_gp"]
        .iter()
        .zip(est.iter().zip(exact))
        .map(|(name, (e, x))| {
            let e = e.value().item();
            (*name, e, x)
        })
        .collect()
}

pub fn orthonormal_columns(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let m = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let q = m.qr().q();
    Tensor::from_fn(rows, cols, |r, c| q[(r, c)])
}

pub fn transpose(t: &Tensor) -> Tensor {
    Tensor::from_fn(t.cols(), t.rows(), |r, c| t.get(c, r))
}

/// Largest of L_iso, L_piso and every per-sample diagnostic deviation over
/// orthonormal pairs `f(z) = Az + c`, `g(x) = Aᵀ(x − c)`.
pub fn orthonormal_pair_max_deviation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (ambient, latent) in [(3, 2), (5, 2), (4, 3), (3, 1)] {
        let a = orthonormal_columns(&mut rng, ambient, latent);
        let c: Vec<f64> = (0..ambient).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let enc_bias: Vec<f64> = vecmat(&c, &a).iter().map(|v| -v).collect();
        let dec = MlpParams::linear(a.clone(), Tensor::vector(c));
        let enc = MlpParams::linear(transpose(&a), Tensor::vector(enc_bias));

        let m = 256;
        let z = random_matrix(&mut rng, m, latent);
        let x = random_matrix(&mut rng, m, ambient);
        let u = sample_sphere(&mut rng, latent, m).unwrap();
        let tape = Tape::new();
        let iso = loss_iso(&dec.bind(&tape, false), tape.constant(z.clone()), &u).unwrap().value().item();
        let piso = loss_piso(&enc.bind(&tape, false), tape.constant(x), &u).unwrap().value().item();
        worst = worst.max(iso).max(piso);

        let rep = jacobian_diagnostics(&enc, &dec, &z.select_rows(&(0..20).collect::<Vec<_>>())).unwrap();
        worst = worst.max(rep.singular_value_deviation());
        for s in &rep.samples {
            worst = worst.max(s.ata_dev).max(s.bbt_dev).max(s.pinv_ratio);
        }
    }
    worst
}
