#![allow(dead_code)]

pub mod oracle;

use iae::autodiff::{Tape, Tensor, Var};
use iae::losses::{loss_iso, loss_piso, loss_rec, reconstruction_error, reg_cae, reg_rae_gp, reg_tcae};
use iae::nn::{build_autoencoder, AeConfig, Autoencoder, BoundAutoencoder};
use iae::sampling::sample_sphere;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Rec,
    Iso,
    Piso,
    Cae,
    Tcae,
    RaeGp,
    Dae,
}

pub const TERMS: [Term; 7] = [Term::Rec, Term::Iso, Term::Piso, Term::Cae, Term::Tcae, Term::RaeGp, Term::Dae];

impl Term {
    /// Tolerance on the max relative error of the analytic gradient.
    pub fn tolerance(self) -> f64 {
        match self {
            Term::Rec => 1e-4,
            _ => 1e-3,
        }
    }
}

pub struct Case {
    pub term: Term,
    pub model: Autoencoder,
    pub x: Tensor,
    pub x_noisy: Tensor,
    pub z: Tensor,
    pub u: Tensor,
}

/// Random architecture, parameters and inputs for `term`.
pub fn random_case(term: Term, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ambient = rng.gen_range(2..=5);
    let latent = rng.gen_range(1..ambient);
    let depth = rng.gen_range(1..=3);
    let widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=6)).collect();
    let beta = [1.0, 10.0, 100.0][rng.gen_range(0..3)];
    let cfg = AeConfig {
        ambient_dim: ambient,
        latent_dim: latent,
        hidden_widths: widths,
        activation_beta: beta,
        tied: term == Term::Tcae,
    };
    let mut model = build_autoencoder(&cfg, &mut rng).unwrap();
    for b in model.param_slots_mut() {
        if b.rank() == 1 {
            for v in b.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let n = rng.gen_range(1..=4);
    let x = Tensor::from_fn(n, ambient, |_, _| rng.gen_range(-1.0..1.0));
    let mut x_noisy = x.clone();
    for v in x_noisy.data_mut() {
        *v += 0.1 * rng.gen_range(-1.0..1.0);
    }
    let z = Tensor::from_fn(n, latent, |_, _| rng.gen_range(-1.0..1.0));
    let u = sample_sphere(&mut rng, latent, n).unwrap();
    Case { term, model, x, x_noisy, z, u }
}

pub fn term_loss<'t>(case: &Case, m: &BoundAutoencoder<'t>, tape: &'t Tape) -> Var<'t> {
    let x = tape.constant(case.x.clone());
    let z = tape.constant(case.z.clone());
    match case.term {
        Term::Rec => loss_rec(&m.encoder, &m.decoder, x),
        Term::Iso => loss_iso(&m.decoder, z, &case.u),
        Term::Piso => loss_piso(&m.encoder, x, &case.u),
        Term::Cae => reg_cae(&m.encoder, x, &case.u),
        Term::Tcae => reg_tcae(m, x, &case.u),
        Term::RaeGp => reg_rae_gp(&m.decoder, z, &case.u),
        Term::Dae => {
            let noisy = tape.constant(case.x_noisy.clone());
            let recon = m.decoder.forward(m.encoder.forward(noisy).unwrap()).unwrap();
            reconstruction_error(recon, x)
        }
    }
    .unwrap()
}

fn value_at(case: &Case, model: &Autoencoder) -> f64 {
    let tape = Tape::new();
    let m = model.bind(&tape, false);
    term_loss(case, &m, &tape).value().item()
}

pub struct GradcheckResult {
    pub max_rel_error: f64,
    pub params: usize,
}

/// Analytic gradient vs central differences over every free parameter.
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradcheck(case: &Case) -> GradcheckResult {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-5;
    let tape = Tape::new();
    let bound = case.model.bind(&tape, true);
    let loss = term_loss(case, &bound, &tape);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = bound.params().iter().map(|&p| grads.wrt(p)).collect();

    let slots = {
        let mut m = case.model.clone();
        m.param_slots_mut().iter().map(|t| t.len()).collect::<Vec<_>>()
    };
    assert_eq!(slots.len(), analytic.len());
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (k, &len) in slots.iter().enumerate() {
        for i in 0..len {
            let eval = |delta: f64| {
                let mut m = case.model.clone();
                m.param_slots_mut()[k].data_mut()[i] += delta;
                m.sync_tied();
                value_at(case, &m)
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            count += 1;
        }
    }
    GradcheckResult { max_rel_error: worst, params: count }
}

/// Cases cycling through every loss term; `count` of them.
pub fn gradcheck_suite(count: usize) -> Vec<(Term, u64, GradcheckResult)> {
    (0..count)
        .map(|i| {
            let term = TERMS[i % TERMS.len()];
            let seed = 1000 + i as u64;
            (term, seed, gradcheck(&random_case(term, seed)))
        })
        .collect()
}
