//! Run directories: training, evaluation, sweeps and the pseudo-inverse ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{apply_override, RunConfig};
use super::svg;
use crate::autodiff::Tensor;
use crate::data::{fmt_f64, read_matrix_csv, write_matrix_csv, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    build_grid, edge_ratio_std, grid_bbox_from_codes, jacobian_diagnostics, IsometryReport, JacobianReport,
};
use crate::losses::{measure_losses, LossReport};
use crate::nn::{build_autoencoder, Autoencoder};
use crate::optim::{train_from, HistoryRow};
use crate::sampling::{fit_latent_sampler, stream_rng, LatentMode, RunRngs, Stream};

pub const OUTPUT_ROOT_ENV: &str = "IAE_OUTPUT_ROOT";
pub const CODE_VERSION: &str = concat!("iae ", env!("CARGO_PKG_VERSION"));

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const DATA: &str = "data.csv";
pub const CHART: &str = "chart.csv";
pub const HISTORY: &str = "loss_history.csv";
pub const INIT: &str = "init.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const FINAL: &str = "final.json";
pub const EMBEDDINGS: &str = "embeddings.csv";
pub const EDGE_RATIOS: &str = "edge_ratios.csv";
pub const JACOBIAN: &str = "jacobian.csv";
pub const SUMMARY: &str = "summary.txt";
pub const EVAL_JSON: &str = "eval.json";
pub const SURFACE_CSV: &str = "surface.csv";
pub const SURFACE_SVG: &str = "surface.svg";

/// Explicit root, else `$IAE_OUTPUT_ROOT`, else `./runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Git-style object hash (`blob <len>\0<content>`) using SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn sha256(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub seed: u64,
    pub code_version: String,
    pub code_hash: String,
    pub init_sha256: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub steps: usize,
    pub best_step: usize,
    pub best_total: f64,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub best: Autoencoder,
    pub last: Autoencoder,
    pub history: Vec<HistoryRow>,
}

pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut s = String::from("step,rec,iso,piso,reg,total\n");
    for h in history {
        let r = &h.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            h.step,
            fmt_f64(r.rec),
            fmt_f64(r.iso),
            fmt_f64(r.piso),
            fmt_f64(r.reg),
            fmt_f64(r.total)
        );
    }
    write(path, s)
}

/// Codes `g(𝒳)` next to the ground-truth chart when there is one.
fn write_embeddings(path: &Path, codes: &Tensor, data: &Dataset) -> Result<()> {
    let mut names: Vec<String> = (1..=codes.cols()).map(|j| format!("z{j}")).collect();
    let table = match &data.intrinsic {
        Some(chart) => {
            names.extend((1..=chart.cols()).map(|j| format!("chart{j}")));
            let (c1, c2) = (codes.cols(), chart.cols());
            Tensor::from_fn(codes.rows(), c1 + c2, |i, j| if j < c1 { codes.get(i, j) } else { chart.get(i, j - c1) })
        }
        None => codes.clone(),
    };
    write_matrix_csv(path, Some(&names), &table)
}

/// Trains the configured model and writes a complete run directory. The
/// dataset is resolved before anything is written.
pub fn run_train(cfg: &RunConfig, base: Option<&Path>, run_dir: &Path) -> Result<TrainSummary> {
    let started = unix_now();
    let data = cfg.dataset.load(base)?;
    let init = build_autoencoder(&cfg.ae, &mut stream_rng(cfg.train.seed, Stream::Init))?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;

    let mut cfg = cfg.clone();
    if let Some(p) = &cfg.dataset.path {
        // the snapshot must stay valid from inside the run directory
        let abs = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        cfg.dataset.path = Some(std::fs::canonicalize(&abs).unwrap_or(abs));
    }
    write(&run_dir.join(CONFIG), cfg.to_toml()?)?;
    write_matrix_csv(&run_dir.join(DATA), None, &data.points)?;
    if let Some(chart) = &data.intrinsic {
        write_matrix_csv(&run_dir.join(CHART), None, chart)?;
    }
    let init_json = init.to_json()?;
    write(&run_dir.join(INIT), &init_json)?;

    let mut tcfg = cfg.train.clone();
    if tcfg.checkpoint_path.is_none() {
        tcfg.checkpoint_path = Some(run_dir.join(CHECKPOINT));
    }
    let out = train_from(&data, init, &tcfg)?;
    write_history_csv(&run_dir.join(HISTORY), &out.history)?;
    out.last.save(&run_dir.join(FINAL))?;
    if tcfg.checkpoint_path.as_deref() != Some(&run_dir.join(CHECKPOINT)) {
        out.best.save(&run_dir.join(CHECKPOINT))?;
    }
    write_embeddings(&run_dir.join(EMBEDDINGS), &out.best.encode(&data.points)?, &data)?;

    let outputs = [CONFIG, DATA, INIT, HISTORY, CHECKPOINT, FINAL, EMBEDDINGS]
        .iter()
        .chain(data.intrinsic.as_ref().map(|_| &CHART))
        .map(|f| (f.split('.').next().unwrap_or(f).to_string(), f.to_string()))
        .collect();
    let manifest = RunManifest {
        seed: cfg.train.seed,
        code_version: CODE_VERSION.into(),
        code_hash: content_hash(CODE_VERSION.as_bytes()),
        init_sha256: sha256(init_json.as_bytes()),
        started_unix: started,
        finished_unix: unix_now(),
        steps: out.steps,
        best_step: out.best_step,
        best_total: out.best_total,
        outputs,
        config: cfg,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    write(&run_dir.join(MANIFEST), text)?;
    Ok(TrainSummary { run_dir: run_dir.to_path_buf(), manifest, best: out.best, last: out.last, history: out.history })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointChoice {
    Best,
    Final,
}

impl CheckpointChoice {
    fn file(self) -> &'static str {
        match self {
            CheckpointChoice::Best => CHECKPOINT,
            CheckpointChoice::Final => FINAL,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub isometry: Option<IsometryReport>,
    pub jacobian: JacobianReport,
    pub losses: LossReport,
    pub grid_box: Option<crate::eval::BBox>,
}

/// Evaluates a trained model against `data` with the given evaluation settings.
/// Codes of `samples` data points drawn with replacement on the diagnostics
/// stream. Diagnostics are taken on the chart the data actually occupies.
pub fn diagnostic_codes(codes: &Tensor, samples: usize, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, Stream::Diagnostics);
    let idx: Vec<usize> = (0..samples).map(|_| rng.gen_range(0..codes.rows())).collect();
    codes.select_rows(&idx)
}

pub fn evaluate(model: &Autoencoder, data: &Tensor, cfg: &super::config::EvalConfig) -> Result<EvalSummary> {
    let codes = model.encode(data)?;
    let (isometry, grid_box) = if model.latent_dim() == 2 {
        let bbox = grid_bbox_from_codes(&codes)?;
        let grid = build_grid(bbox, cfg.grid_resolution)?;
        (Some(edge_ratio_std(&model.decoder, &grid)?), Some(bbox))
    } else {
        (None, None)
    };
    let latent = if codes.rows() >= 2 {
        fit_latent_sampler(&codes, LatentMode::UniformBox, 1)?
    } else {
        let c = codes.row(0).to_vec();
        let shifted: Vec<f64> = c.iter().map(|x| x + 1.0).collect();
        fit_latent_sampler(&Tensor::from_rows(&[c, shifted])?, LatentMode::UniformBox, 1)?
    };
    let jacobian_points = diagnostic_codes(&codes, cfg.diagnostic_samples, cfg.seed);
    let jacobian = jacobian_diagnostics(&model.encoder, &model.decoder, &jacobian_points)?;
    let losses = measure_losses(model, data, &latent, cfg.loss_samples, &mut RunRngs::new(cfg.seed))?;
    Ok(EvalSummary { isometry, jacobian, losses, grid_box })
}

fn read_run_config(run_dir: &Path) -> Result<RunConfig> {
    let path = run_dir.join(CONFIG);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    RunConfig::from_toml(&text)
}

/// Evaluates the checkpoint in `run_dir` and writes the report files.
pub fn run_eval(run_dir: &Path, which: CheckpointChoice) -> Result<EvalSummary> {
    let ckpt = run_dir.join(which.file());
    if !ckpt.exists() {
        return Err(Error::config(format!("no checkpoint at {}", ckpt.display())));
    }
    let cfg = read_run_config(run_dir)?;
    let model = Autoencoder::load(&ckpt)?;
    let (_, data) = read_matrix_csv(&run_dir.join(DATA), false)?;
    let summary = evaluate(&model, &data, &cfg.eval)?;

    if let Some(iso) = &summary.isometry {
        let bbox = summary.grid_box.expect("grid box accompanies the isometry report");
        let grid = build_grid(bbox, cfg.eval.grid_resolution)?;
        let mut s = String::from("edge_i,edge_j,ratio\n");
        for (&(i, j), r) in grid.edges.iter().zip(&iso.ratios) {
            let _ = writeln!(s, "{i},{j},{}", fmt_f64(*r));
        }
        write(&run_dir.join(EDGE_RATIOS), s)?;
    }
    write(&run_dir.join(JACOBIAN), jacobian_csv(&summary.jacobian))?;
    write(&run_dir.join(SUMMARY), summary_text(&summary, &cfg))?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))?;
    write(&run_dir.join(EVAL_JSON), json)?;
    Ok(summary)
}

fn jacobian_csv(r: &JacobianReport) -> String {
    let d = r.median_singular_values.len();
    let mut s = String::from("sample");
    for k in 1..=d {
        let _ = write!(s, ",sigma{k}");
    }
    s.push_str(",ata_dev,bbt_dev,pinv_ratio\n");
    for (i, j) in r.samples.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in &j.singular_values {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        let _ = writeln!(s, ",{},{},{}", fmt_f64(j.ata_dev), fmt_f64(j.bbt_dev), fmt_f64(j.pinv_ratio));
    }
    s
}

fn summary_text(e: &EvalSummary, cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "regularizer        {}", cfg.loss.regularizer);
    match (&e.isometry, &e.grid_box) {
        (Some(iso), Some(b)) => {
            let _ = writeln!(
                s,
                "grid               {}x{} over [{:.4}, {:.4}] x [{:.4}, {:.4}] (code bounding box, 5% inset)",
                cfg.eval.grid_resolution, cfg.eval.grid_resolution, b.lo[0], b.hi[0], b.lo[1], b.hi[1]
            );
            let _ = writeln!(s, "edges              {}", iso.ratios.len());
            let _ = writeln!(s, "edge ratio mean    {:.6} (raw {:.6})", iso.mean, iso.raw_mean);
            let _ = writeln!(s, "edge ratio std     {:.6}", iso.std);
        }
        _ => {
            let _ = writeln!(s, "edge ratio std     n/a (latent dimension is not 2)");
        }
    }
    let j = &e.jacobian;
    let _ = writeln!(s, "jacobian samples   {}", j.samples.len());
    let _ = writeln!(s, "median sigma       {:?}", j.median_singular_values);
    let _ = writeln!(s, "sigma q10..q90     {:.6} .. {:.6}", j.singular_value_q10, j.singular_value_q90);
    let _ = writeln!(s, "median |AtA-I|     {:.6}", j.median_ata_dev);
    let _ = writeln!(s, "median |BBt-I|     {:.6}", j.median_bbt_dev);
    let _ = writeln!(s, "median |B-At|/|A|  {:.6}", j.median_pinv_ratio);
    let l = &e.losses;
    let _ =
        writeln!(s, "measured losses    rec {:.6e}  iso {:.6e}  piso {:.6e}  cae {:.6e}", l.rec, l.iso, l.piso, l.reg);
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub run_dir: PathBuf,
    pub losses: LossReport,
    pub edge_std: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(String, String)>,
}

/// One run per value of `param`, up to `jobs` at a time, then an aggregate
/// CSV of the evaluated losses in grid order. Failed children are recorded
/// and skipped.
pub fn run_sweep(
    base_table: &toml::Table,
    base_dir: Option<&Path>,
    param: &str,
    values: &[String],
    sweep_dir: &Path,
    jobs: usize,
) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    // surface config errors before any child starts
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut t = base_table.clone();
        apply_override(&mut t, &format!("{param}={v}"))?;
        configs.push(RunConfig::from_table(t)?);
    }
    std::fs::create_dir_all(sweep_dir).map_err(|e| Error::io(sweep_dir, e))?;
    let leaf = param.rsplit('.').next().unwrap_or(param);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<SweepRow, String>>>> = Mutex::new(vec![None; values.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, values.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= values.len() {
                    break;
                }
                let dir = sweep_dir.join(format!("{leaf}={}", values[i]));
                let outcome = run_train(&configs[i], base_dir, &dir)
                    .and_then(|_| run_eval(&dir, CheckpointChoice::Best))
                    .map(|e| SweepRow {
                        value: values[i].clone(),
                        run_dir: dir.clone(),
                        losses: e.losses,
                        edge_std: e.isometry.map(|r| r.std),
                    })
                    .map_err(|e| e.to_string());
                results.lock().expect("sweep result lock")[i] = Some(outcome);
            });
        }
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (v, r) in values.iter().zip(results.into_inner().expect("sweep result lock")) {
        match r {
            Some(Ok(row)) => rows.push(row),
            Some(Err(e)) => failures.push((v.clone(), e)),
            None => failures.push((v.clone(), "not run".into())),
        }
    }
    let mut s = format!("{leaf},rec,iso,piso,edge_std\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.value,
            fmt_f64(r.losses.rec),
            fmt_f64(r.losses.iso),
            fmt_f64(r.losses.piso),
            r.edge_std.map_or("nan".into(), fmt_f64)
        );
    }
    write(&sweep_dir.join("aggregate.csv"), s)?;
    if !failures.is_empty() {
        let mut f = String::from("value,error\n");
        for (v, e) in &failures {
            let _ = writeln!(f, "{v},{:?}", e);
        }
        write(&sweep_dir.join("failures.csv"), f)?;
    }
    Ok(SweepSummary { rows, failures })
}

#[derive(Clone, Debug)]
pub struct AblationSummary {
    pub without: (TrainSummary, EvalSummary),
    pub with: (TrainSummary, EvalSummary),
}

/// Decodes a dense grid over the code bounding box.
pub fn decoder_surface(model: &Autoencoder, data: &Tensor, resolution: usize) -> Result<Tensor> {
    let bbox = grid_bbox_from_codes(&model.encode(data)?)?;
    let grid = build_grid(bbox, resolution)?;
    model.decode(&grid.points)
}

/// Trains with `λ_piso = 0` and with `λ_piso = λ_iso` from the same
/// initialisation and random streams, then evaluates and compares both.
pub fn run_ablate_piso(cfg: &RunConfig, base: Option<&Path>, out_dir: &Path) -> Result<AblationSummary> {
    let mut runs = Vec::new();
    for (name, piso) in [("without_piso", 0.0), ("with_piso", cfg.loss.lambda_iso)] {
        let mut c = cfg.clone();
        c.loss.lambda_piso = Some(piso);
        c.train.loss = c.loss.clone();
        c.train.checkpoint_path = None;
        let dir = out_dir.join(name);
        let t = run_train(&c, base, &dir)?;
        let e = run_eval(&dir, CheckpointChoice::Best)?;
        let (_, data) = read_matrix_csv(&dir.join(DATA), false)?;
        let surface = decoder_surface(&t.best, &data, cfg.eval.surface_resolution)?;
        let names: Vec<String> = (1..=surface.cols()).map(|j| format!("x{j}")).collect();
        write_matrix_csv(&dir.join(SURFACE_CSV), Some(&names), &surface)?;
        let (a, b) = if surface.cols() >= 3 { (0, 2) } else { (0, surface.cols().saturating_sub(1)) };
        let xs: Vec<f64> = surface.row_iter().map(|r| r[a]).collect();
        let ys: Vec<f64> = surface.row_iter().map(|r| r[b]).collect();
        let color: Vec<f64> = surface.row_iter().map(|r| r[1.min(surface.cols() - 1)]).collect();
        write(&dir.join(SURFACE_SVG), svg::scatter(&xs, &ys, Some(&color), &format!("decoder surface, {name}")))?;
        runs.push((t, e));
    }
    let with = runs.pop().expect("two runs");
    let without = runs.pop().expect("two runs");

    let mut s = String::from("run,lambda_piso,init_sha256,rec,iso,piso,edge_std\n");
    for (name, (t, e)) in [("without_piso", &without), ("with_piso", &with)] {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{}",
            fmt_f64(t.manifest.config.loss.lambda_piso()),
            t.manifest.init_sha256,
            fmt_f64(e.losses.rec),
            fmt_f64(e.losses.iso),
            fmt_f64(e.losses.piso),
            e.isometry.as_ref().map_or("nan".into(), |r| fmt_f64(r.std))
        );
    }
    write(&out_dir.join("comparison.csv"), s)?;
    let ratio = without.1.losses.piso / with.1.losses.piso;
    let text = format!(
        "shared initialisation  {}\nmeasured L_piso        without {:.6e}  with {:.6e}  (ratio {:.3})\n",
        without.0.manifest.init_sha256 == with.0.manifest.init_sha256,
        without.1.losses.piso,
        with.1.losses.piso,
        ratio
    );
    write(&out_dir.join("comparison.txt"), text)?;
    Ok(AblationSummary { without, with })
}
