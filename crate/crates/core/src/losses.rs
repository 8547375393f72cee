//! Reconstruction, isometry and pseudo-inverse losses, and the baseline
//! regularizers, each recorded on a tape as a scalar ready for `backward`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Autoencoder, BoundAutoencoder, BoundMlp};
use crate::sampling::{sample_latent, sample_sphere, LatentSampler, RunRngs};

/// Tolerance on `|‖u‖ − 1|` for direction samples.
pub const UNIT_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regularizer {
    /// Isometry plus pseudo-inverse losses.
    #[serde(rename = "IAE")]
    Iae,
    /// Plain reconstruction.
    #[serde(rename = "AE")]
    Ae,
    /// Contractive: `‖dg(x)‖²_F`.
    #[serde(rename = "CAE")]
    Cae,
    /// Contractive with decoder weights tied to the encoder.
    #[serde(rename = "TCAE")]
    Tcae,
    /// Decoder gradient penalty: `‖df(z)‖²_F`.
    #[serde(rename = "RAE_GP", alias = "RAE-GP")]
    RaeGp,
    /// Reconstruction from Gaussian-corrupted inputs.
    #[serde(rename = "DAE")]
    Dae,
}

impl Regularizer {
    pub const ALL: [Regularizer; 6] =
        [Regularizer::Iae, Regularizer::Ae, Regularizer::Cae, Regularizer::Tcae, Regularizer::RaeGp, Regularizer::Dae];

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::Iae => "IAE",
            Regularizer::Ae => "AE",
            Regularizer::Cae => "CAE",
            Regularizer::Tcae => "TCAE",
            Regularizer::RaeGp => "RAE_GP",
            Regularizer::Dae => "DAE",
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        Regularizer::ALL
            .into_iter()
            .find(|r| r.name() == key)
            .ok_or_else(|| Error::config(format!("unknown regularizer {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "one")]
    pub lambda_rec: f64,
    #[serde(default = "default_lambda_iso")]
    pub lambda_iso: f64,
    /// Defaults to `lambda_iso` when absent.
    #[serde(default)]
    pub lambda_piso: Option<f64>,
    #[serde(default = "default_regularizer")]
    pub regularizer: Regularizer,
    #[serde(default = "default_dae_sigma")]
    pub dae_sigma: f64,
    /// Monte-Carlo draws per batch element and step.
    #[serde(default = "one_usize")]
    pub mc_samples: usize,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_lambda_iso() -> f64 {
    0.01
}
fn default_regularizer() -> Regularizer {
    Regularizer::Iae
}
fn default_dae_sigma() -> f64 {
    0.1
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_rec: 1.0,
            lambda_iso: default_lambda_iso(),
            lambda_piso: None,
            regularizer: Regularizer::Iae,
            dae_sigma: default_dae_sigma(),
            mc_samples: 1,
        }
    }
}

impl LossConfig {
    pub fn lambda_piso(&self) -> f64 {
        self.lambda_piso.unwrap_or(self.lambda_iso)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_iso", self.lambda_iso),
            ("lambda_piso", self.lambda_piso()),
            ("dae_sigma", self.dae_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.regularizer == Regularizer::Dae && self.dae_sigma <= 0.0 {
            return Err(Error::config("dae_sigma must be positive for DAE"));
        }
        if self.mc_samples == 0 {
            return Err(Error::config("mc_samples must be positive"));
        }
        Ok(())
    }
}

/// Loss components of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub rec: f64,
    pub iso: f64,
    pub piso: f64,
    pub reg: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.total, self.rec, self.iso, self.piso, self.reg].iter().all(|x| x.is_finite())
    }

    /// The configured weighted sum of the components.
    pub fn weighted_sum(&self, cfg: &LossConfig) -> f64 {
        match cfg.regularizer {
            Regularizer::Iae => cfg.lambda_rec * self.rec + cfg.lambda_iso * self.iso + cfg.lambda_piso() * self.piso,
            _ => cfg.lambda_rec * self.rec + cfg.lambda_iso * self.reg,
        }
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={:.6e} rec={:.6e} iso={:.6e} piso={:.6e} reg={:.6e}",
            self.total, self.rec, self.iso, self.piso, self.reg
        )
    }
}

fn check_unit_rows(u: &Tensor) -> Result<()> {
    if u.rank() != 2 {
        return Err(Error::shape(format!("directions must be a matrix, got {:?}", u.shape())));
    }
    for (i, row) in u.row_iter().enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::contract(format!("direction {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

fn check_rows(what: &str, a: &Var<'_>, b: &Tensor) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::shape(format!("{what}: {} points but {} directions", a.rows(), b.rows())));
    }
    Ok(())
}

/// `mean_j (‖t_j‖ − 1)²` over the rows of `t`.
fn unit_speed_penalty<'t>(t: Var<'t>) -> Result<Var<'t>> {
    t.row_norms()?.add_scalar(-1.0)?.square()?.mean()
}

/// `k · mean_j ‖t_j‖²`: unbiased Frobenius² estimate from probes on `S^{k−1}`.
fn frobenius_estimate<'t>(t: Var<'t>, probe_dim: usize) -> Result<Var<'t>> {
    let n = t.rows();
    t.sum_sq()?.scale(probe_dim as f64 / n as f64)
}

/// `(1/n)·Σᵢ‖recon_i − target_i‖²`.
pub fn reconstruction_error<'t>(recon: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    let n = target.rows();
    if n == 0 || target.shape().len() != 2 {
        return Err(Error::contract("reconstruction needs a non-empty batch matrix"));
    }
    recon.sub(target)?.sum_sq()?.scale(1.0 / n as f64)
}

/// `L_rec = (1/n)·Σᵢ‖f(g(xᵢ)) − xᵢ‖²`.
pub fn loss_rec<'t>(encoder: &BoundMlp<'t>, decoder: &BoundMlp<'t>, batch: Var<'t>) -> Result<Var<'t>> {
    if batch.shape().len() != 2 || batch.rows() == 0 {
        return Err(Error::contract("reconstruction needs a non-empty batch matrix"));
    }
    let recon = decoder.forward(encoder.forward(batch)?)?;
    reconstruction_error(recon, batch)
}

/// `L_iso ≈ (1/m)·Σⱼ(‖df(zⱼ)uⱼ‖ − 1)²` with taped JVPs.
pub fn loss_iso<'t>(decoder: &BoundMlp<'t>, z: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    check_unit_rows(u)?;
    check_rows("loss_iso", &z, u)?;
    let tape = z.tape();
    let y = decoder.forward(z)?;
    let t = tape.jvp_at(y, z, tape.constant(u.clone()))?;
    unit_speed_penalty(t)
}

/// `L_piso ≈ (1/m)·Σⱼ(‖uⱼᵀdg(xⱼ)‖ − 1)²` with taped VJPs.
pub fn loss_piso<'t>(encoder: &BoundMlp<'t>, x: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    let codes = encoder.forward(x)?;
    loss_piso_at(codes, x, u)
}

/// [`loss_piso`] for an encoder output `codes = g(x)` already on the tape.
pub fn loss_piso_at<'t>(codes: Var<'t>, x: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    check_unit_rows(u)?;
    check_rows("loss_piso", &x, u)?;
    let tape = x.tape();
    let t = tape.vjp_at(codes, x, tape.constant(u.clone()))?;
    unit_speed_penalty(t)
}

/// Contractive penalty: `d·E_u‖uᵀdg(x)‖²`, averaged over the rows of `x`.
pub fn reg_cae<'t>(encoder: &BoundMlp<'t>, x: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    let codes = encoder.forward(x)?;
    reg_cae_at(codes, x, u)
}

pub fn reg_cae_at<'t>(codes: Var<'t>, x: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    check_unit_rows(u)?;
    check_rows("reg_cae", &x, u)?;
    let tape = x.tape();
    let t = tape.vjp_at(codes, x, tape.constant(u.clone()))?;
    frobenius_estimate(t, u.cols())
}

/// Contractive penalty of a tied autoencoder; same estimator as [`reg_cae`].
pub fn reg_tcae<'t>(model: &BoundAutoencoder<'t>, x: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    if !model.tied {
        return Err(Error::config("TCAE needs an autoencoder with tied weights"));
    }
    reg_cae(&model.encoder, x, u)
}

/// Decoder gradient penalty: `d·E_u‖df(z)u‖²`, averaged over the rows of `z`.
pub fn reg_rae_gp<'t>(decoder: &BoundMlp<'t>, z: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    let y = decoder.forward(z)?;
    reg_rae_gp_at(y, z, u)
}

pub fn reg_rae_gp_at<'t>(y: Var<'t>, z: Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    check_unit_rows(u)?;
    check_rows("reg_rae_gp", &z, u)?;
    let tape = z.tape();
    let t = tape.jvp_at(y, z, tape.constant(u.clone()))?;
    frobenius_estimate(t, u.cols())
}

/// `batch + σ·ε` with iid standard normal `ε`.
pub fn dae_corrupt(batch: &Tensor, sigma: f64, rng: &mut impl Rng) -> Tensor {
    if sigma == 0.0 {
        return batch.clone();
    }
    let noisy = batch.data().iter().map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(batch.shape().to_vec(), noisy).expect("shape preserved")
}

/// Stacks `k` copies of the rows of `t`: row `r·n + i` is row `i`.
pub fn tile_rows(t: &Tensor, k: usize) -> Tensor {
    let n = t.rows();
    let idx: Vec<usize> = (0..k).flat_map(|_| 0..n).collect();
    t.select_rows(&idx)
}

/// Random inputs the Monte-Carlo terms need for one evaluation.
pub struct LossSamplers<'a> {
    pub latent: &'a LatentSampler,
    pub rngs: &'a mut RunRngs,
}

/// A recorded total loss and its components.
pub struct TapedLoss<'t> {
    pub total: Var<'t>,
    pub report: LossReport,
    /// `g(batch)`, the codes of the clean batch.
    pub codes: Var<'t>,
}

/// Records the configured objective for `batch` on the model's tape.
///
/// I-AE: `λ_rec·L_rec + λ_iso·L_iso + λ_piso·L_piso`.
/// Baselines: `λ_rec·L_rec + λ_iso·R` with `R` the selected regularizer.
/// Terms with zero weight are still reported but left out of the taped total.
pub fn loss_total<'t>(
    model: &BoundAutoencoder<'t>,
    batch: &Tensor,
    cfg: &LossConfig,
    samplers: LossSamplers<'_>,
) -> Result<TapedLoss<'t>> {
    cfg.validate()?;
    if batch.rank() != 2 || batch.rows() == 0 {
        return Err(Error::contract("loss needs a non-empty batch matrix"));
    }
    let tape: &'t Tape = model.encoder.layers[0].weight.tape();
    let n = batch.rows();
    let k = cfg.mc_samples;
    let d = model.encoder.layers.last().map_or(0, |l| {
        let w = l.weight.value();
        if l.transposed {
            w.cols()
        } else {
            w.rows()
        }
    });
    let rngs = samplers.rngs;

    let target = tape.constant(batch.clone());
    let input = if cfg.regularizer == Regularizer::Dae {
        tape.constant(dae_corrupt(batch, cfg.dae_sigma, &mut rngs.noise))
    } else {
        target
    };
    let codes = model.encoder.forward(input)?;
    let recon = model.decoder.forward(codes)?;
    let rec = reconstruction_error(recon, target)?;

    // Probe points: the batch itself when one draw per element, otherwise a
    // tiled copy with its own forward pass.
    let tiled = |x: Var<'t>| -> Result<(Var<'t>, Var<'t>)> {
        if k == 1 {
            Ok((x, codes))
        } else {
            let xr = tape.constant(tile_rows(batch, k));
            Ok((xr, model.encoder.forward(xr)?))
        }
    };

    let mut terms: Vec<(f64, Var<'t>)> = vec![(cfg.lambda_rec, rec)];
    let mut report = LossReport { rec: rec.value().item(), ..LossReport::default() };
    match cfg.regularizer {
        Regularizer::Iae => {
            let z = sample_latent(samplers.latent, &mut rngs.latent, n * k);
            let u = sample_sphere(&mut rngs.iso_dirs, d, n * k)?;
            let iso = loss_iso(&model.decoder, tape.constant(z), &u)?;
            let up = sample_sphere(&mut rngs.piso_dirs, d, n * k)?;
            let (xp, cp) = tiled(target)?;
            let piso = loss_piso_at(cp, xp, &up)?;
            report.iso = iso.value().item();
            report.piso = piso.value().item();
            terms.push((cfg.lambda_iso, iso));
            terms.push((cfg.lambda_piso(), piso));
        }
        Regularizer::Ae | Regularizer::Dae => {}
        Regularizer::Cae | Regularizer::Tcae => {
            if cfg.regularizer == Regularizer::Tcae && !model.tied {
                return Err(Error::config("TCAE needs an autoencoder with tied weights"));
            }
            let u = sample_sphere(&mut rngs.reg_dirs, d, n * k)?;
            let (xp, cp) = tiled(target)?;
            let reg = reg_cae_at(cp, xp, &u)?;
            report.reg = reg.value().item();
            terms.push((cfg.lambda_iso, reg));
        }
        Regularizer::RaeGp => {
            let u = sample_sphere(&mut rngs.reg_dirs, d, n * k)?;
            let reg = if k == 1 {
                reg_rae_gp_at(recon, codes, &u)?
            } else {
                let (_, cp) = tiled(target)?;
                reg_rae_gp(&model.decoder, cp, &u)?
            };
            report.reg = reg.value().item();
            terms.push((cfg.lambda_iso, reg));
        }
    }

    let mut total: Option<Var<'t>> = None;
    for (w, term) in terms {
        if w == 0.0 {
            continue;
        }
        let scaled = if w == 1.0 { term } else { term.scale(w)? };
        total = Some(match total {
            Some(acc) => acc.add(scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    report.total = total.value().item();
    Ok(TapedLoss { total, report, codes })
}

/// Loss components of a fixed model on fresh Monte-Carlo draws, without
/// recording gradients. Used to compare trained models after the fact: every
/// term (`L_rec`, `L_iso`, `L_piso`, and the CAE-style penalty as `reg`) is
/// reported regardless of how the model was trained.
pub fn measure_losses(
    model: &Autoencoder,
    data: &Tensor,
    latent: &LatentSampler,
    samples: usize,
    rngs: &mut RunRngs,
) -> Result<LossReport> {
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let d = model.latent_dim();
    let x = tape.constant(data.clone());
    let codes = bound.encoder.forward(x)?;
    let recon = bound.decoder.forward(codes)?;
    let rec = reconstruction_error(recon, x)?.value().item();

    let z = sample_latent(latent, &mut rngs.latent, samples);
    let u = sample_sphere(&mut rngs.iso_dirs, d, samples)?;
    let iso = loss_iso(&bound.decoder, tape.constant(z), &u)?.value().item();

    let idx: Vec<usize> = (0..samples).map(|_| rngs.batch.gen_range(0..data.rows())).collect();
    let xs = tape.constant(data.select_rows(&idx));
    let up = sample_sphere(&mut rngs.piso_dirs, d, samples)?;
    let piso = loss_piso(&bound.encoder, xs, &up)?.value().item();
    let ur = sample_sphere(&mut rngs.reg_dirs, d, samples)?;
    let reg = reg_cae(&bound.encoder, xs, &ur)?.value().item();
    Ok(LossReport { total: rec + iso + piso, rec, iso, piso, reg })
}
