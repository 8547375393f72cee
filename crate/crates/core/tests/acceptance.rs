//! End-to-end acceptance checks. Prints one `criterion N: PASS|FAIL` line per
//! criterion. Exits non-zero on a failure only when `IAE_ACCEPTANCE_STRICT`
//! is set; `IAE_ACCEPTANCE_EPOCHS` shortens the training runs for smoke tests.

mod common;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::oracle::{jvp_vjp_max_error, monte_carlo_relative_errors, orthonormal_pair_max_deviation};
use common::{gradcheck_suite, TERMS};
use iae::cli::config::{apply_override, RunConfig};
use iae::cli::run::{
    run_ablate_piso, run_eval, run_sweep, run_train, CheckpointChoice, EvalSummary, CHECKPOINT, HISTORY,
};
use iae::eval::procrustes;
use iae::nn::Autoencoder;

const SWISS_ROLL: &str = include_str!("../configs/swiss_roll.toml");
const S_SHAPE: &str = include_str!("../configs/s_shape.toml");
const SEEDS: [u64; 3] = [0, 1, 2];
const LAMBDAS: [&str; 5] = ["0", "0.01", "0.05", "0.1", "0.5"];

struct Report {
    failed: Vec<u32>,
    lines: Vec<(u32, String)>,
}

impl Report {
    fn line(&mut self, n: u32, pass: bool, detail: String) {
        if !pass {
            self.failed.push(n);
        }
        let line = format!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        let _ = std::io::stdout().flush();
        self.lines.push((n, line));
    }
}

fn table(text: &str, overrides: &[String]) -> toml::Table {
    let mut table: toml::Table = text.parse().expect("acceptance config parses");
    for o in overrides {
        apply_override(&mut table, o).expect("override applies");
    }
    if let Ok(e) = std::env::var("IAE_ACCEPTANCE_EPOCHS") {
        apply_override(&mut table, &format!("train.epochs={e}")).expect("epochs override");
    }
    table
}

fn config(text: &str, overrides: &[String]) -> RunConfig {
    RunConfig::from_table(table(text, overrides)).expect("acceptance config is valid")
}

fn train_and_eval(cfg: &RunConfig, dir: &Path) -> EvalSummary {
    run_train(cfg, None, dir).unwrap_or_else(|e| panic!("training {} failed: {e}", dir.display()));
    run_eval(dir, CheckpointChoice::Best).unwrap_or_else(|e| panic!("eval {} failed: {e}", dir.display()))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let results = gradcheck_suite(105);
    let secs = start.elapsed().as_secs_f64();
    let bad: Vec<String> = results
        .iter()
        .filter(|(t, _, g)| g.max_rel_error.is_nan() || g.max_rel_error >= t.tolerance())
        .map(|(t, s, g)| format!("{t:?}/{s}={:.1e}", g.max_rel_error))
        .collect();
    let worst = TERMS
        .iter()
        .map(|t| {
            let w = results.iter().filter(|(u, _, _)| u == t).map(|(_, _, g)| g.max_rel_error).fold(0.0, f64::max);
            format!("{t:?} {w:.1e}")
        })
        .collect::<Vec<_>>()
        .join(", ");
    r.line(
        1,
        bad.is_empty() && secs < 120.0,
        format!("({} cases in {secs:.1}s; worst per term: {worst}; failing: {bad:?})", results.len()),
    );
}

fn criterion_2(r: &mut Report) {
    let gap = jvp_vjp_max_error(40, 11);
    let mc = monte_carlo_relative_errors(10_000);
    let rel: Vec<String> = mc.iter().map(|(n, e, x)| format!("{n} {:.2}%", 100.0 * (e - x).abs() / x)).collect();
    let ok = gap < 1e-10 && mc.iter().all(|(_, e, x)| (e - x).abs() / x < 0.01);
    r.line(2, ok, format!("(jvp/vjp gap {gap:.1e}; Monte-Carlo error {})", rel.join(", ")));
}

fn criterion_3(r: &mut Report) {
    let dev = orthonormal_pair_max_deviation(21);
    r.line(3, dev < 1e-12, format!("(largest loss or diagnostic deviation {dev:.1e})"));
}

struct SwissRollRuns {
    edge_std: Vec<(String, Vec<f64>)>,
    iae: Vec<EvalSummary>,
    ae: Vec<EvalSummary>,
}

fn swiss_roll_runs(out: &Path) -> SwissRollRuns {
    let mut edge_std = Vec::new();
    let (mut iae, mut ae) = (Vec::new(), Vec::new());
    for reg in ["IAE", "AE", "CAE", "RAE-GP", "DAE"] {
        let mut stds = Vec::new();
        for seed in SEEDS {
            let cfg = config(
                SWISS_ROLL,
                &[format!("loss.regularizer=\"{reg}\""), format!("dataset.seed={seed}"), format!("train.seed={seed}")],
            );
            let start = Instant::now();
            let e = train_and_eval(&cfg, &out.join(cfg.run_name()));
            let std = e.isometry.as_ref().expect("2D latent").std;
            println!(
                "  swiss roll {reg} seed {seed}: edge std {std:.4}, median singular values {:?}, pinv ratio {:.3} ({:.0}s)",
                e.jacobian.median_singular_values,
                e.jacobian.median_pinv_ratio,
                start.elapsed().as_secs_f64()
            );
            stds.push(std);
            match reg {
                "IAE" => iae.push(e),
                "AE" => ae.push(e),
                _ => {}
            }
        }
        edge_std.push((reg.to_string(), stds));
    }
    SwissRollRuns { edge_std, iae, ae }
}

fn criterion_4(r: &mut Report, runs: &SwissRollRuns) {
    let avg: Vec<(String, f64)> = runs.edge_std.iter().map(|(k, v)| (k.clone(), mean(v))).collect();
    let iae = avg[0].1;
    let mut ok = iae < 0.15;
    for (k, v) in &avg[1..] {
        let factor = if k == "AE" { 3.0 } else { 2.0 };
        ok &= *v >= factor * iae;
    }
    let detail = avg.iter().map(|(k, v)| format!("{k} {v:.4} ({:.1}x)", v / iae)).collect::<Vec<_>>().join(", ");
    r.line(4, ok, format!("(seed-averaged edge-ratio std: {detail})"));
}

/// Seed-averaged (median singular values, |σ−1| deviation, pinv ratio).
fn jacobian_summary(evals: &[EvalSummary]) -> (Vec<f64>, f64, f64) {
    let d = evals[0].jacobian.median_singular_values.len();
    let sv: Vec<f64> =
        (0..d).map(|k| mean(&evals.iter().map(|e| e.jacobian.median_singular_values[k]).collect::<Vec<_>>())).collect();
    let dev = sv.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let pinv = mean(&evals.iter().map(|e| e.jacobian.median_pinv_ratio).collect::<Vec<_>>());
    (sv, dev, pinv)
}

fn criterion_5(r: &mut Report, runs: &SwissRollRuns) {
    let (sv, dev, pinv) = jacobian_summary(&runs.iae);
    let (ae_sv, ae_dev, ae_pinv) = jacobian_summary(&runs.ae);
    let in_band = sv.iter().all(|s| (0.9..=1.1).contains(s));
    let worse = ae_dev >= 3.0 * dev || ae_pinv >= 3.0 * pinv;
    r.line(
        5,
        in_band && pinv < 0.2 && worse,
        format!(
            "(I-AE singular values {sv:.3?}, pinv ratio {pinv:.3}; AE singular values {ae_sv:.3?}, pinv ratio {ae_pinv:.3}; \
             AE/I-AE deviation {:.1}x, pinv {:.1}x)",
            ae_dev / dev,
            ae_pinv / pinv
        ),
    );
}

fn criterion_6_and_8(r: &mut Report, out: &Path) {
    let text = S_SHAPE;
    let table = table(text, &[]);
    let dir = out.join("s_shape_sweep");
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let values: Vec<String> = LAMBDAS.iter().map(|s| s.to_string()).collect();
    let s = run_sweep(&table, None, "loss.lambda_iso", &values, &dir, jobs).expect("sweep runs");
    for row in &s.rows {
        println!(
            "  s-shape lambda_iso={}: rec {:.3e}, iso {:.3e}, piso {:.3e}, edge std {:.4}",
            row.value,
            row.losses.rec,
            row.losses.iso,
            row.losses.piso,
            row.edge_std.unwrap_or(f64::NAN)
        );
    }
    let complete = s.failures.is_empty() && s.rows.len() == LAMBDAS.len();
    let finite = complete
        && s.rows.iter().all(|r| r.losses.rec.is_finite() && r.losses.iso.is_finite() && r.losses.piso.is_finite());
    let mut below = complete;
    let mut monotone = complete;
    if complete {
        let base = &s.rows[0].losses;
        below = s.rows[1..].iter().all(|r| r.losses.iso < base.iso && r.losses.piso < base.piso);
        monotone = s.rows.windows(2).all(|w| w[1].losses.rec >= 0.9 * w[0].losses.rec);
    }
    r.line(
        6,
        finite && below && monotone,
        format!("(finite {finite}, iso/piso below lambda=0 {below}, rec non-decreasing within 10% {monotone}; failures {:?})", s.failures),
    );

    // Ground-truth chart recovery on the default-weight run.
    let run = s.rows.iter().find(|r| r.value == "0.01").map(|r| r.run_dir.clone());
    let Some(run) = run else {
        r.line(8, false, "(no lambda_iso=0.01 run)".into());
        return;
    };
    let cfg = config(text, &[]);
    let ds = cfg.dataset.load(None).expect("s-shape data");
    let model = Autoencoder::load(&run.join(CHECKPOINT)).expect("checkpoint");
    let codes = model.encode(&ds.points).expect("encode");
    let chart = ds.intrinsic.as_ref().expect("s-shape has a chart");
    let fit = procrustes(&codes, chart).expect("procrustes");
    let diameter = ds.diameter();
    r.line(
        8,
        fit.rmse < 0.1 * diameter,
        format!("(Procrustes RMSE {:.4} = {:.3} x diameter {diameter:.3})", fit.rmse, fit.rmse / diameter),
    );
}

fn criterion_7(r: &mut Report, out: &Path) {
    let cfg = config(S_SHAPE, &[]);
    let dir = out.join("s_shape_ablate_piso");
    let s = run_ablate_piso(&cfg, None, &dir).expect("ablation runs");
    let shared = s.without.0.manifest.init_sha256 == s.with.0.manifest.init_sha256;
    let (a, b) = (s.without.1.losses.piso, s.with.1.losses.piso);
    let csvs = ["without_piso", "with_piso"].iter().all(|n| dir.join(n).join("surface.csv").is_file());
    r.line(
        7,
        shared && csvs && a >= 5.0 * b,
        format!(
            "(L_piso without {a:.3e}, with {b:.3e}, ratio {:.1}; shared init {shared}; surface CSVs {csvs})",
            a / b
        ),
    );
}

fn criterion_9(r: &mut Report, out: &Path) {
    let cfg =
        config(SWISS_ROLL, &["dataset.n=200".into(), "train.eval_every=10".into(), "ae.hidden_widths=[16, 16]".into()]);
    let mut cfg = cfg;
    cfg.train.epochs = cfg.train.epochs.min(300);
    let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|n| out.join("determinism").join(n)).collect();
    for d in &dirs {
        run_train(&cfg, None, d).expect("determinism run");
    }
    let a = std::fs::read(dirs[0].join(HISTORY)).unwrap();
    let b = std::fs::read(dirs[1].join(HISTORY)).unwrap();
    r.line(9, a == b && !a.is_empty(), format!("({} bytes of loss history, identical {})", a.len(), a == b));
}

fn main() {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out).expect("output directory");
    println!("acceptance outputs in {}", out.display());
    let mut r = Report { failed: Vec::new(), lines: Vec::new() };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_9(&mut r, &out);
    let runs = swiss_roll_runs(&out);
    criterion_4(&mut r, &runs);
    criterion_5(&mut r, &runs);
    criterion_6_and_8(&mut r, &out);
    criterion_7(&mut r, &out);
    r.failed.sort();
    r.lines.sort();
    println!("\nsummary");
    for (_, line) in &r.lines {
        println!("{line}");
    }
    println!("acceptance: {} of 9 criteria passed; failed {:?}", 9 - r.failed.len(), r.failed);
    if !r.failed.is_empty() && std::env::var_os("IAE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
