//! Random draws for the Monte-Carlo losses: unit directions and the latent
//! prior used by the isometry loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Floor applied to degenerate latent ranges and variances.
pub const DEGENERATE_EPS: f64 = 1e-6;

/// Independent random streams of one run. Each consumer owns a stream so that
/// switching one loss term on or off leaves every other draw unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Init = 1,
    IsoDirections = 2,
    PisoDirections = 3,
    RegDirections = 4,
    Latent = 5,
    Batch = 6,
    Noise = 7,
    Data = 8,
    Diagnostics = 9,
}

/// ChaCha8 generator positioned on `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// The per-step random streams of a training run.
#[derive(Clone, Debug)]
pub struct RunRngs {
    pub iso_dirs: ChaCha8Rng,
    pub piso_dirs: ChaCha8Rng,
    pub reg_dirs: ChaCha8Rng,
    pub latent: ChaCha8Rng,
    pub batch: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        RunRngs {
            iso_dirs: stream_rng(seed, Stream::IsoDirections),
            piso_dirs: stream_rng(seed, Stream::PisoDirections),
            reg_dirs: stream_rng(seed, Stream::RegDirections),
            latent: stream_rng(seed, Stream::Latent),
            batch: stream_rng(seed, Stream::Batch),
            noise: stream_rng(seed, Stream::Noise),
        }
    }
}

/// `m` directions drawn from the rotation-invariant measure on the unit
/// sphere of `ℝᵈ` (normalised Gaussians).
pub fn sample_sphere(rng: &mut impl Rng, d: usize, m: usize) -> Result<Tensor> {
    if d == 0 {
        return Err(Error::contract("sphere dimension must be at least 1"));
    }
    let mut data = Vec::with_capacity(m * d);
    let mut row = vec![0.0; d];
    for _ in 0..m {
        loop {
            for x in row.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                data.extend(row.iter().map(|x| x / norm));
                break;
            }
        }
    }
    Tensor::matrix(m, d, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    UniformBox,
    GaussianFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDistribution {
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `mean + L·ε` with `ε ∼ N(0, I)` and `L` lower triangular.
    Gaussian {
        mean: Vec<f64>,
        factor: Tensor,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSampler {
    pub distribution: LatentDistribution,
    pub refresh_every: usize,
}

impl LatentSampler {
    pub fn dim(&self) -> usize {
        match &self.distribution {
            LatentDistribution::UniformBox { lo, .. } => lo.len(),
            LatentDistribution::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Refits from fresh latent codes, keeping the mode and refresh period.
    pub fn refit(&mut self, codes: &Tensor) -> Result<()> {
        let mode = match self.distribution {
            LatentDistribution::UniformBox { .. } => LatentMode::UniformBox,
            LatentDistribution::Gaussian { .. } => LatentMode::GaussianFit,
        };
        *self = fit_latent_sampler(codes, mode, self.refresh_every)?;
        Ok(())
    }
}

/// Fits the latent prior to the codes `g(𝒳)`: componentwise bounding box or
/// Gaussian with the (biased, `1/n`) sample covariance.
pub fn fit_latent_sampler(codes: &Tensor, mode: LatentMode, refresh_every: usize) -> Result<LatentSampler> {
    let (n, d) = (codes.rows(), codes.cols());
    if codes.rank() != 2 || n < 2 || d == 0 {
        return Err(Error::contract(format!(
            "fitting the latent prior needs at least 2 codes, got shape {:?}",
            codes.shape()
        )));
    }
    if refresh_every == 0 {
        return Err(Error::config("latent refresh period must be positive"));
    }
    let distribution = match mode {
        LatentMode::UniformBox => {
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for row in codes.row_iter() {
                for j in 0..d {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
            for j in 0..d {
                if hi[j] - lo[j] < DEGENERATE_EPS {
                    hi[j] = lo[j] + DEGENERATE_EPS;
                }
            }
            LatentDistribution::UniformBox { lo, hi }
        }
        LatentMode::GaussianFit => {
            let mut mean = vec![0.0; d];
            for row in codes.row_iter() {
                for j in 0..d {
                    mean[j] += row[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
            for row in codes.row_iter() {
                for a in 0..d {
                    for b in 0..d {
                        cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
                    }
                }
            }
            cov /= n as f64;
            for j in 0..d {
                if cov[(j, j)] < DEGENERATE_EPS {
                    cov[(j, j)] = DEGENERATE_EPS;
                }
            }
            let factor = cholesky_with_jitter(cov)?;
            LatentDistribution::Gaussian { mean, factor }
        }
    };
    Ok(LatentSampler { distribution, refresh_every })
}

fn cholesky_with_jitter(cov: nalgebra::DMatrix<f64>) -> Result<Tensor> {
    let d = cov.nrows();
    let mut jitter = 0.0;
    for _ in 0..20 {
        let attempt = &cov + nalgebra::DMatrix::<f64>::identity(d, d) * jitter;
        if let Some(ch) = attempt.cholesky() {
            let l = ch.l();
            return Ok(Tensor::from_fn(d, d, |i, j| l[(i, j)]));
        }
        jitter = if jitter == 0.0 { DEGENERATE_EPS } else { jitter * 10.0 };
    }
    Err(Error::Domain("latent covariance is not positive semidefinite".into()))
}

/// `m` independent draws from the fitted prior, one per row.
pub fn sample_latent(sampler: &LatentSampler, rng: &mut impl Rng, m: usize) -> Tensor {
    let d = sampler.dim();
    let mut data = Vec::with_capacity(m * d);
    match &sampler.distribution {
        LatentDistribution::UniformBox { lo, hi } => {
            for _ in 0..m {
                for j in 0..d {
                    data.push(lo[j] + (hi[j] - lo[j]) * rng.gen::<f64>());
                }
            }
        }
        LatentDistribution::Gaussian { mean, factor } => {
            let mut eps = vec![0.0; d];
            for _ in 0..m {
                for e in eps.iter_mut() {
                    *e = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let mut v = mean[i];
                    for j in 0..=i {
                        v += factor.get(i, j) * eps[j];
                    }
                    data.push(v);
                }
            }
        }
    }
    Tensor::from_fn(m, d, |i, j| data[i * d + j])
}
