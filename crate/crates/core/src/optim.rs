//! Adam and the training loop.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{loss_total, LossConfig, LossReport, LossSamplers};
use crate::nn::{build_autoencoder, AeConfig, Autoencoder};
use crate::sampling::{fit_latent_sampler, stream_rng, LatentMode, RunRngs, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub cfg: AdamConfig,
}

impl AdamState {
    /// Zero moments congruent to `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, cfg: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { t: 0, v: m.clone(), m, cfg }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[k].shape() {
            return Err(Error::shape(format!(
                "adam: parameter {k} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Domain(format!("adam: non-finite gradient for parameter {k} at step {}", state.t + 1)));
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.cfg;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mini-batch size, or the whole dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Size(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("batch_size must be positive")),
            Raw::N(n) => Ok(BatchSize::Size(n as usize)),
            Raw::S(s) if s.eq_ignore_ascii_case("full") => Ok(BatchSize::Full),
            Raw::S(s) => {
                Err(serde::de::Error::custom(format!("batch_size must be a positive integer or \"full\", got {s:?}")))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "full_batch")]
    pub batch_size: BatchSize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    /// History is logged every `eval_every` optimizer steps.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_latent_mode")]
    pub latent_mode: LatentMode,
    /// Steps between refits of the latent prior from `g(𝒳)`.
    #[serde(default = "default_latent_refresh")]
    pub latent_refresh: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    /// Where the best-by-total-loss model is written during training.
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(skip)]
    pub loss: LossConfig,
}

fn full_batch() -> BatchSize {
    BatchSize::Full
}
fn default_lr() -> f64 {
    1e-3
}
fn default_eval_every() -> usize {
    100
}
fn default_latent_mode() -> LatentMode {
    LatentMode::UniformBox
}
fn default_latent_refresh() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            batch_size: BatchSize::Full,
            lr: default_lr(),
            seed: 0,
            eval_every: default_eval_every(),
            latent_mode: default_latent_mode(),
            latent_refresh: default_latent_refresh(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            checkpoint_path: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if self.eval_every == 0 || self.latent_refresh == 0 {
            return Err(Error::config("eval_every and latent_refresh must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return Err(Error::config("adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

/// One logged history entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters before the first update.
    pub initial: Autoencoder,
    /// Parameters after the last update.
    pub last: Autoencoder,
    /// Parameters that achieved the lowest total training loss.
    pub best: Autoencoder,
    pub best_total: f64,
    pub best_step: usize,
    pub history: Vec<HistoryRow>,
    pub steps: usize,
}

/// Trains a freshly initialised autoencoder on `data`.
pub fn train(data: &Dataset, ae_cfg: &AeConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = build_autoencoder(ae_cfg, &mut stream_rng(cfg.seed, Stream::Init))?;
    train_from(data, model, cfg)
}

/// Trains starting from the given parameters.
pub fn train_from(data: &Dataset, mut model: Autoencoder, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if data.dim() != model.ambient_dim() {
        return Err(Error::shape(format!(
            "data has dimension {} but the encoder expects {}",
            data.dim(),
            model.ambient_dim()
        )));
    }
    let n = data.len();
    let mut rngs = RunRngs::new(cfg.seed);
    let mut adam = {
        let slots = model.param_slots_mut();
        AdamState::new(slots.iter().map(|t| &**t), cfg.adam())
    };
    let mut latent =
        fit_latent_sampler(&model.encode(&data.points)?, cfg.latent_mode, cfg.latent_refresh).or_else(|e| match e {
            // A single point cannot define a box; fall back to a unit box at its code.
            Error::Contract(_) if n == 1 => {
                let c = model.encode(&data.points)?;
                let twice = Tensor::from_rows(&[c.row(0).to_vec(), c.row(0).iter().map(|x| x + 1.0).collect()])?;
                fit_latent_sampler(&twice, cfg.latent_mode, cfg.latent_refresh)
            }
            e => Err(e),
        })?;

    let initial = model.clone();
    let mut best = model.clone();
    let mut best_total = f64::INFINITY;
    let mut best_step = 0;
    let mut written_best_step = None;
    let mut history = Vec::new();
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    let save_best = |best: &Autoencoder| -> Result<()> {
        if let Some(path) = &cfg.checkpoint_path {
            best.save(path)?;
        }
        Ok(())
    };

    for _epoch in 0..cfg.epochs {
        let batch_len = match cfg.batch_size {
            BatchSize::Full => n,
            BatchSize::Size(b) => b.min(n),
        };
        if batch_len < n {
            order.shuffle(&mut rngs.batch);
        }
        for chunk in order.chunks(batch_len) {
            if step > 0 && step.is_multiple_of(cfg.latent_refresh) && n >= 2 {
                latent.refit(&model.encode(&data.points)?)?;
            }
            let batch = if batch_len == n { data.points.clone() } else { data.points.select_rows(chunk) };

            let tape = Tape::new();
            let bound = model.bind(&tape, true);
            let loss = loss_total(&bound, &batch, &cfg.loss, LossSamplers { latent: &latent, rngs: &mut rngs })?;
            let report = loss.report;
            let diverged = |report: LossReport, best: &Autoencoder| {
                let _ = save_best(best);
                Error::NonFinite { step, report, last_good: Some(Box::new(best.clone())) }
            };
            if !report.all_finite() {
                return Err(diverged(report, &best));
            }
            let grads = tape.backward(loss.total)?;
            let grads: Vec<Tensor> = bound.params().iter().map(|&p| grads.wrt(p)).collect();
            drop(bound);
            drop(tape);

            if report.total < best_total {
                best_total = report.total;
                best = model.clone();
                best_step = step;
            }
            if step.is_multiple_of(cfg.eval_every) {
                history.push(HistoryRow { step, report });
                if written_best_step != Some(best_step) {
                    save_best(&best)?;
                    written_best_step = Some(best_step);
                }
            }

            let mut slots = model.param_slots_mut();
            if let Err(e) = adam_step(&mut slots, &grads, &mut adam) {
                return match e {
                    Error::Domain(_) => Err(diverged(report, &best)),
                    e => Err(e),
                };
            }
            model.sync_tied();
            step += 1;
        }
    }
    if !model.all_finite() {
        return Err(Error::NonFinite { step, report: LossReport::default(), last_good: Some(Box::new(best)) });
    }
    if written_best_step != Some(best_step) {
        save_best(&best)?;
    }
    Ok(TrainOutcome { initial, last: model, best, best_total, best_step, history, steps: step })
}
