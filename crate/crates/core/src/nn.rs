//! Fully connected encoder/decoder networks.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus { beta: f64 },
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Checks that layer dimensions chain and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.weight.rank() != 2 || layer.bias.rank() != 1 {
                return Err(Error::shape(format!("layer {k}: weight must be a matrix and bias a vector")));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(format!(
                    "layer {k}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if let Some(next) = self.layers.get(k + 1) {
                if next.in_dim() != layer.out_dim() {
                    return Err(Error::shape(format!(
                        "layer {} expects {} inputs but layer {k} produces {}",
                        k + 1,
                        next.in_dim(),
                        layer.out_dim()
                    )));
                }
            }
            if !layer.weight.all_finite() || !layer.bias.all_finite() {
                return Err(Error::Domain(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// A single linear layer `x ↦ Wx + b`.
    pub fn linear(weight: Tensor, bias: Tensor) -> Self {
        MlpParams { layers: vec![Layer { weight, bias, activation: Activation::Identity }] }
    }

    /// Records the parameters on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| BoundLayer {
                    weight: leaf(&l.weight),
                    transposed: false,
                    bias: leaf(&l.bias),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Binds the parameters as constants and applies the network to `x`.
    pub fn forward<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.bind(x.tape(), false).forward(x)
    }

    /// Evaluates the network on the rows of `x` without keeping a tape around.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let y = self.forward(tape.constant(x.clone()))?;
        let out = (*y.value()).clone();
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer<'t> {
    pub weight: Var<'t>,
    /// The stored weight is `in × out` and is used transposed (tied decoders).
    pub transposed: bool,
    pub bias: Var<'t>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct BoundMlp<'t> {
    pub layers: Vec<BoundLayer<'t>>,
}

impl<'t> BoundMlp<'t> {
    /// Applies the layers to a single vector or to the rows of a matrix.
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        match shape.len() {
            1 => {
                let row = x.reshape(&[1, shape[0]])?;
                let y = self.forward_rows(row)?;
                let n = y.cols();
                y.reshape(&[n])
            }
            2 => self.forward_rows(x),
            _ => Err(Error::shape(format!("network input must be a vector or matrix, got {shape:?}"))),
        }
    }

    fn forward_rows(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let w = layer.weight.value();
            let in_dim = if layer.transposed { w.rows() } else { w.cols() };
            if h.cols() != in_dim {
                return Err(Error::shape(format!("layer {k} expects {in_dim} inputs, got {}", h.cols())));
            }
            // rows · Wᵀ, or rows · W when the stored weight is already transposed
            let pre = h.matmul_ex(layer.weight, false, !layer.transposed)?.add_bias(layer.bias)?;
            h = match layer.activation {
                Activation::Softplus { beta } => pre.softplus(beta)?,
                Activation::Identity => pre,
            };
        }
        Ok(h)
    }

    /// Parameter leaves in layer order: weight, bias, weight, bias, ...
    pub fn params(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeConfig {
    pub ambient_dim: usize,
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_beta")]
    pub activation_beta: f64,
    /// Decoder weights are the transposed encoder weights (TCAE).
    #[serde(default)]
    pub tied: bool,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl AeConfig {
    /// Five hidden layers of width 256.
    pub fn full_size(ambient_dim: usize, latent_dim: usize) -> Self {
        AeConfig { ambient_dim, latent_dim, hidden_widths: vec![256; 5], activation_beta: DEFAULT_BETA, tied: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim == 0 || self.latent_dim == 0 {
            return Err(Error::config("ambient_dim and latent_dim must be positive"));
        }
        if self.latent_dim >= self.ambient_dim {
            return Err(Error::config(format!(
                "latent_dim ({}) must be smaller than ambient_dim ({})",
                self.latent_dim, self.ambient_dim
            )));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::config("hidden_widths must be a non-empty list of positive widths"));
        }
        if !(self.activation_beta > 0.0 && self.activation_beta.is_finite()) {
            return Err(Error::config("activation_beta must be positive"));
        }
        Ok(())
    }
}

fn init_mlp(dims: &[usize], beta: f64, rng: &mut impl Rng) -> MlpParams {
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Tensor::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound));
            Layer {
                weight,
                bias: Tensor::zeros(&[fan_out]),
                activation: if k == last { Activation::Identity } else { Activation::Softplus { beta } },
            }
        })
        .collect();
    MlpParams { layers }
}

/// An encoder/decoder pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    /// When set, decoder layer `k` uses the transpose of encoder layer `L−1−k`.
    #[serde(default)]
    pub tied: bool,
}

/// Builds an encoder `ℝᴰ→ℝᵈ` and a mirrored decoder `ℝᵈ→ℝᴰ`, with
/// `U(−1/√fan_in, 1/√fan_in)` weights and zero biases.
pub fn build_autoencoder(cfg: &AeConfig, rng: &mut impl Rng) -> Result<Autoencoder> {
    cfg.validate()?;
    let mut enc_dims = vec![cfg.ambient_dim];
    enc_dims.extend(&cfg.hidden_widths);
    enc_dims.push(cfg.latent_dim);
    let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
    let encoder = init_mlp(&enc_dims, cfg.activation_beta, rng);
    let mut decoder = init_mlp(&dec_dims, cfg.activation_beta, rng);
    if cfg.tied {
        let l = encoder.layers.len();
        for (k, layer) in decoder.layers.iter_mut().enumerate() {
            layer.weight = encoder.layers[l - 1 - k].weight.transpose();
        }
    }
    let ae = Autoencoder { encoder, decoder, tied: cfg.tied };
    ae.validate()?;
    Ok(ae)
}

impl Autoencoder {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.in_dim() != self.decoder.out_dim() || self.encoder.out_dim() != self.decoder.in_dim() {
            return Err(Error::shape(format!(
                "encoder {}→{} and decoder {}→{} do not compose",
                self.encoder.in_dim(),
                self.encoder.out_dim(),
                self.decoder.in_dim(),
                self.decoder.out_dim()
            )));
        }
        if self.tied {
            self.check_tie_shapes()?;
        }
        Ok(())
    }

    fn check_tie_shapes(&self) -> Result<()> {
        let l = self.encoder.layers.len();
        if self.decoder.layers.len() != l {
            return Err(Error::config("tied networks need the same number of layers"));
        }
        for (k, dec) in self.decoder.layers.iter().enumerate() {
            let enc = &self.encoder.layers[l - 1 - k].weight;
            if dec.weight.shape() != [enc.cols(), enc.rows()] {
                return Err(Error::config(format!(
                    "decoder layer {k} ({:?}) cannot be tied to encoder layer {} ({:?})",
                    dec.weight.shape(),
                    l - 1 - k,
                    enc.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    /// Records both networks on `tape`. Tied decoders reuse the encoder's
    /// weight leaves, so their gradients accumulate on the shared leaf.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundAutoencoder<'t> {
        let encoder = self.encoder.bind(tape, trainable);
        let decoder = if self.tied {
            let l = encoder.layers.len();
            let leaf = |t: &Tensor| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            };
            BoundMlp {
                layers: self
                    .decoder
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(k, dl)| BoundLayer {
                        weight: encoder.layers[l - 1 - k].weight,
                        transposed: true,
                        bias: leaf(&dl.bias),
                        activation: dl.activation,
                    })
                    .collect(),
            }
        } else {
            self.decoder.bind(tape, trainable)
        };
        BoundAutoencoder { encoder, decoder, tied: self.tied }
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.apply(x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.apply(z)
    }

    /// Mutable views of every independent parameter array, in a fixed order.
    /// Tied decoder weights are excluded.
    pub fn param_slots_mut(&mut self) -> Vec<&mut Tensor> {
        let tied = self.tied;
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.encoder.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in &mut self.decoder.layers {
            if !tied {
                out.push(&mut l.weight);
            }
            out.push(&mut l.bias);
        }
        out
    }

    /// Rewrites tied decoder weights from the encoder.
    pub fn sync_tied(&mut self) {
        if !self.tied {
            return;
        }
        let l = self.encoder.layers.len();
        for k in 0..l {
            self.decoder.layers[k].weight = self.encoder.layers[l - 1 - k].weight.transpose();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.layers.iter().chain(&self.decoder.layers).all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ae: Autoencoder = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        ae.validate()?;
        Ok(ae)
    }

    /// Writes the JSON checkpoint (layer shapes plus row-major arrays).
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug)]
pub struct BoundAutoencoder<'t> {
    pub encoder: BoundMlp<'t>,
    pub decoder: BoundMlp<'t>,
    pub tied: bool,
}

impl<'t> BoundAutoencoder<'t> {
    /// Parameter leaves in the order of [`Autoencoder::param_slots_mut`].
    pub fn params(&self) -> Vec<Var<'t>> {
        let mut out = self.encoder.params();
        for l in &self.decoder.layers {
            if !self.tied {
                out.push(l.weight);
            }
            out.push(l.bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> AeConfig {
        AeConfig { ambient_dim: 2, latent_dim: 1, hidden_widths: vec![4], activation_beta: DEFAULT_BETA, tied: false }
    }

    #[test]
    fn full_size_architecture_dims() {
        let cfg = AeConfig::full_size(3, 2);
        let ae = build_autoencoder(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let enc: Vec<_> = ae.encoder.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect();
        let dec: Vec<_> = ae.decoder.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect();
        assert_eq!(enc, vec![(3, 256), (256, 256), (256, 256), (256, 256), (256, 256), (256, 2)]);
        assert_eq!(dec, vec![(2, 256), (256, 256), (256, 256), (256, 256), (256, 256), (256, 3)]);
        assert!(ae.encoder.layers[..5].iter().all(|l| l.activation == Activation::Softplus { beta: 100.0 }));
        assert_eq!(ae.encoder.layers[5].activation, Activation::Identity);
    }

    #[test]
    fn small_architecture_shapes() {
        let ae = build_autoencoder(&small_cfg(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let shapes = |m: &MlpParams| m.layers.iter().map(|l| l.weight.shape().to_vec()).collect::<Vec<_>>();
        assert_eq!(shapes(&ae.encoder), vec![vec![4, 2], vec![1, 4]]);
        assert_eq!(shapes(&ae.decoder), vec![vec![4, 1], vec![2, 4]]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = AeConfig::full_size(3, 2);
        let a = build_autoencoder(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = build_autoencoder(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        for l in &a.encoder.layers {
            let bound = 1.0 / (l.in_dim() as f64).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= bound));
            assert!(l.bias.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.latent_dim = 2;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_cfg();
        cfg.hidden_widths.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_net_is_softplus_constant_chain() {
        // one hidden layer of width 3, all parameters zero:
        // hidden = ln2/β everywhere, output = b = 0 → 0; with unit output
        // weights the output is 3·ln2/β.
        let net = MlpParams {
            layers: vec![
                Layer {
                    weight: Tensor::zeros(&[3, 2]),
                    bias: Tensor::zeros(&[3]),
                    activation: Activation::Softplus { beta: 100.0 },
                },
                Layer {
                    weight: Tensor::full(&[1, 3], 1.0),
                    bias: Tensor::zeros(&[1]),
                    activation: Activation::Identity,
                },
            ],
        };
        let y = net.apply(&Tensor::vector(vec![0.7, -2.0])).unwrap();
        assert!((y.item() - 3.0 * std::f64::consts::LN_2 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn linear_layer_is_affine() {
        let w = Tensor::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]).unwrap();
        let net = MlpParams::linear(w, Tensor::vector(vec![0.25, -1.0]));
        let y = net.apply(&Tensor::vector(vec![2.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[10.25, -1.0]);
    }

    #[test]
    fn batched_rows_match_single_forwards() {
        let ae = build_autoencoder(
            &AeConfig { ambient_dim: 3, latent_dim: 2, hidden_widths: vec![8, 8], activation_beta: 100.0, tied: false },
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let x = Tensor::from_rows(&[[0.1, -0.4, 1.0], [2.0, 0.3, -0.7]]).unwrap();
        let batched = ae.encode(&x).unwrap();
        for i in 0..2 {
            let single = ae.encode(&Tensor::vector(x.row(i).to_vec())).unwrap();
            for (a, b) in single.data().iter().zip(batched.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dim_mismatch_is_a_shape_error() {
        let net = MlpParams::linear(Tensor::identity(2), Tensor::zeros(&[2]));
        assert!(matches!(net.apply(&Tensor::vector(vec![1.0, 2.0, 3.0])), Err(Error::Shape(_))));
    }

    #[test]
    fn tied_shapes_mirror() {
        let cfg =
            AeConfig { ambient_dim: 3, latent_dim: 2, hidden_widths: vec![4], activation_beta: 100.0, tied: true };
        let ae = build_autoencoder(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ae.encoder.layers[0].weight.shape(), &[4, 3]);
        assert_eq!(ae.decoder.layers[1].weight.shape(), &[3, 4]);
        assert_eq!(ae.encoder.layers[1].weight.shape(), &[2, 4]);
        assert_eq!(ae.decoder.layers[0].weight.shape(), &[4, 2]);
        assert_eq!(ae.decoder.layers[1].weight, ae.encoder.layers[0].weight.transpose());
        assert_eq!(ae.decoder.layers[0].weight, ae.encoder.layers[1].weight.transpose());
    }

    #[test]
    fn tying_needs_mirrored_shapes() {
        let mut ae = build_autoencoder(&small_cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        ae.decoder.layers[0].weight = Tensor::zeros(&[5, 1]);
        ae.decoder.layers[0].bias = Tensor::zeros(&[5]);
        ae.decoder.layers[1].weight = Tensor::zeros(&[2, 5]);
        ae.tied = true;
        assert!(matches!(ae.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let ae = build_autoencoder(&AeConfig::full_size(3, 2), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let back = Autoencoder::from_json(&ae.to_json().unwrap()).unwrap();
        for (a, b) in ae.encoder.layers.iter().zip(&back.encoder.layers) {
            assert!(a.weight.data().iter().zip(b.weight.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(ae, back);
    }
}
