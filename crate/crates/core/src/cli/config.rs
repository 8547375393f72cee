//! Run configuration: a TOML file with `dataset`, `ae`, `loss`, `train` and
//! `eval` sections, plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate, load_csv, Dataset, SurfaceKind, SurfaceSampling};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, Regularizer};
use crate::nn::AeConfig;
use crate::optim::TrainConfig;
use crate::sampling::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Synthetic surface to generate; exclusive with `path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SurfaceKind>,
    /// CSV file with one point per row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: SurfaceSampling,
    #[serde(default)]
    pub header: bool,
    /// Rescale so the longest side of the bounding box has this length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_to_box: Option<f64>,
}

fn default_n() -> usize {
    1000
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: Some(SurfaceKind::SwissRoll),
            path: None,
            n: default_n(),
            seed: 0,
            sampling: SurfaceSampling::default(),
            header: false,
            scale_to_box: None,
        }
    }
}

impl DatasetConfig {
    /// Generates or loads the dataset. Relative paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<Dataset> {
        let mut ds = match (&self.kind, &self.path) {
            (Some(kind), None) => generate(*kind, self.n, self.sampling, &mut stream_rng(self.seed, Stream::Data))?,
            (None, Some(path)) => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                if !path.exists() {
                    return Err(Error::config(format!("dataset file {} does not exist", path.display())));
                }
                load_csv(&path, self.header)?
            }
            _ => return Err(Error::config("dataset needs exactly one of `kind` or `path`")),
        };
        if let Some(extent) = self.scale_to_box {
            ds.scale_to_box(extent);
        }
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    #[serde(default = "default_diag_samples")]
    pub diagnostic_samples: usize,
    /// Monte-Carlo samples for post-hoc loss measurement.
    #[serde(default = "default_loss_samples")]
    pub loss_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Latent grid resolution for decoder-surface exports.
    #[serde(default = "default_surface_grid")]
    pub surface_resolution: usize,
}

fn default_grid() -> usize {
    crate::eval::DEFAULT_GRID_RESOLUTION
}
fn default_diag_samples() -> usize {
    100
}
fn default_loss_samples() -> usize {
    1000
}
fn default_surface_grid() -> usize {
    40
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid_resolution: default_grid(),
            diagnostic_samples: default_diag_samples(),
            loss_samples: default_loss_samples(),
            seed: 0,
            surface_resolution: default_surface_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub ae: AeConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        Self::from_table(value)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.normalise();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies `section.key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::config(format!("{}: {}", path.display(), e)))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn normalise(&mut self) {
        self.train.loss = self.loss.clone();
        if self.loss.regularizer == Regularizer::Tcae {
            self.ae.tied = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.dataset.scale_to_box {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config(format!("dataset.scale_to_box must be positive, got {e}")));
            }
        }
        self.ae.validate()?;
        self.train.validate()?;
        if self.eval.grid_resolution < 2 || self.eval.diagnostic_samples == 0 || self.eval.loss_samples == 0 {
            return Err(Error::config("eval resolution must be ≥ 2 and sample counts positive"));
        }
        if self.eval.surface_resolution < 2 {
            return Err(Error::config("eval.surface_resolution must be at least 2"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Default run name: `<surface or file>-<regularizer>-s<seed>`.
    pub fn run_name(&self) -> String {
        let data = match (&self.dataset.kind, &self.dataset.path) {
            (Some(k), _) => k.to_string(),
            (None, Some(p)) => p.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            _ => "data".into(),
        };
        format!("{}-{}-s{}", data, self.loss.regularizer, self.train.seed)
    }
}

/// Sets `section.key` (any depth) in `table` to the TOML value `value`;
/// values that are not valid TOML are taken as strings.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not of the form section.key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key {key:?} must be section.key")));
    }
    let value = parse_value(raw);
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::config(format!("override {key:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[dataset]
kind = "swiss_roll"
n = 50

[ae]
ambient_dim = 3
latent_dim = 2
hidden_widths = [8]

[loss]
lambda_iso = 0.01

[train]
epochs = 3
"#;

    fn table() -> toml::Table {
        BASE.parse().unwrap()
    }

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.loss.regularizer, Regularizer::Iae);
        assert_eq!(cfg.train.loss, cfg.loss);
        assert_eq!(cfg.eval.grid_resolution, 20);
        assert_eq!(cfg.run_name(), "swiss_roll-IAE-s0");
    }

    #[test]
    fn overrides_apply() {
        let mut t = table();
        apply_override(&mut t, "loss.lambda_iso=0.5").unwrap();
        apply_override(&mut t, "loss.regularizer=AE").unwrap();
        apply_override(&mut t, "train.batch_size=full").unwrap();
        apply_override(&mut t, "ae.hidden_widths=[4, 4]").unwrap();
        let cfg = RunConfig::from_table(t).unwrap();
        assert_eq!(cfg.loss.lambda_iso, 0.5);
        assert_eq!(cfg.loss.regularizer, Regularizer::Ae);
        assert_eq!(cfg.ae.hidden_widths, vec![4, 4]);
    }

    #[test]
    fn tcae_ties_weights() {
        let mut t = table();
        apply_override(&mut t, "loss.regularizer=TCAE").unwrap();
        assert!(RunConfig::from_table(t).unwrap().ae.tied);
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut t = table();
        apply_override(&mut t, "loss.lambda_isoo=0.5").unwrap();
        let msg = RunConfig::from_table(t).unwrap_err().to_string();
        assert!(msg.contains("lambda_isoo"), "{msg}");
        let mut t = table();
        apply_override(&mut t, "bogus.key=1").unwrap();
        assert!(RunConfig::from_table(t).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn malformed_override() {
        let mut t = table();
        assert!(apply_override(&mut t, "loss").is_err());
        assert!(apply_override(&mut t, "lambda=1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml(BASE).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn dataset_source_must_be_unique() {
        let both = DatasetConfig { path: Some("x.csv".into()), ..DatasetConfig::default() };
        assert!(both.load(None).is_err());
        let missing =
            DatasetConfig { kind: None, path: Some("/nonexistent/points.csv".into()), ..DatasetConfig::default() };
        assert!(matches!(missing.load(None), Err(Error::Config(_))));
    }
}
