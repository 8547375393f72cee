//! Command-line interface of the `iae` binary.

pub mod config;
pub mod run;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{generate, read_matrix_csv, save_csv, write_matrix_csv, SurfaceKind, SurfaceSampling};
use crate::error::{Error, Result};
use crate::sampling::{stream_rng, Stream};
use config::RunConfig;
use run::{output_root, CheckpointChoice, RunManifest, OUTPUT_ROOT_ENV};

#[derive(Parser, Debug)]
#[command(name = "iae", version, about = "Isometric autoencoders on synthetic surfaces")]
pub struct Cli {
    /// Directory that receives run directories.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    pub out_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Evaluate the checkpoint of a run directory.
    Eval(EvalArgs),
    /// One run per value of a config key, plus an aggregate CSV.
    Sweep(SweepArgs),
    /// Train with and without the pseudo-inverse loss from a shared initialisation.
    AblatePiso(ConfigArgs),
    /// Render CSV files as SVG.
    Plot(PlotArgs),
    /// Sample a synthetic surface to CSV.
    GenData(GenDataArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// TOML config with dataset, ae, loss, train and eval sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config entry, e.g. `--set loss.lambda_iso=0.05`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Name of the output directory under the output root.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", conflicts_with = "manifest")]
    pub overrides: Vec<String>,
    /// Re-run the configuration recorded in a run manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WhichCheckpoint {
    Best,
    Final,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    pub checkpoint: WhichCheckpoint,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: ConfigArgs,
    /// Config key to vary.
    #[arg(long, default_value = "loss.lambda_iso")]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Concurrent runs; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(subcommand)]
    pub kind: PlotKind,
}

#[derive(Subcommand, Debug)]
pub enum PlotKind {
    /// Scatter of two columns, optionally coloured by a third.
    Scatter {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Column name or zero-based index.
        #[arg(long, default_value = "0")]
        x: String,
        #[arg(long, default_value = "1")]
        y: String,
        #[arg(long)]
        color: Option<String>,
        /// The first row holds column names.
        #[arg(long)]
        header: bool,
        #[arg(long, default_value = "")]
        title: String,
    },
    /// One line per column against the `x` column.
    Lines {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0")]
        x: String,
        /// Columns to draw; all others by default.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long)]
        header: bool,
        #[arg(long, default_value = "")]
        title: String,
    },
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_surface)]
    pub kind: SurfaceKind,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_sampling, default_value = "parameter")]
    pub sampling: SurfaceSampling,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ground-truth chart coordinates here.
    #[arg(long)]
    pub chart: Option<PathBuf>,
    #[arg(long)]
    pub header: bool,
}

fn parse_surface(s: &str) -> std::result::Result<SurfaceKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sampling(s: &str) -> std::result::Result<SurfaceSampling, String> {
    match s {
        "parameter" => Ok(SurfaceSampling::Parameter),
        "area" => Ok(SurfaceSampling::Area),
        _ => Err(format!("unknown sampling {s:?}; expected parameter or area")),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let root = output_root(cli.out_root.as_deref());
    match cli.command {
        Command::Train(a) => {
            let (cfg, base) = match (&a.manifest, &a.config) {
                (Some(m), _) => (RunManifest::load(m)?.config, None),
                (None, Some(c)) => (RunConfig::load(c, &a.overrides)?, c.parent().map(Path::to_path_buf)),
                (None, None) => return Err(Error::config("either --config or --manifest is required")),
            };
            let dir = root.join(a.name.unwrap_or_else(|| cfg.run_name()));
            let s = run::run_train(&cfg, base.as_deref(), &dir)?;
            println!(
                "{}: {} steps, best total {:.6e} at step {}",
                dir.display(),
                s.manifest.steps,
                s.manifest.best_total,
                s.manifest.best_step
            );
        }
        Command::Eval(a) => {
            let which = match a.checkpoint {
                WhichCheckpoint::Best => CheckpointChoice::Best,
                WhichCheckpoint::Final => CheckpointChoice::Final,
            };
            run::run_eval(&a.run_dir, which)?;
            let text = std::fs::read_to_string(a.run_dir.join(run::SUMMARY)).map_err(|e| Error::io(&a.run_dir, e))?;
            print!("{text}");
        }
        Command::Sweep(a) => {
            let text = std::fs::read_to_string(&a.base.config).map_err(|e| Error::io(&a.base.config, e))?;
            let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
            for o in &a.base.overrides {
                config::apply_override(&mut table, o)?;
            }
            let base_cfg = RunConfig::from_table(table.clone())?;
            let name = a.base.name.unwrap_or_else(|| format!("{}-sweep", base_cfg.run_name()));
            let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let dir = root.join(name);
            let s = run::run_sweep(&table, a.base.config.parent(), &a.param, &a.values, &dir, jobs)?;
            println!("{}: {} runs completed", dir.display(), s.rows.len());
            if !s.failures.is_empty() {
                return Err(Error::Contract(format!(
                    "{} of {} sweep runs failed: {}",
                    s.failures.len(),
                    a.values.len(),
                    s.failures.iter().map(|(v, e)| format!("{v}: {e}")).collect::<Vec<_>>().join("; ")
                )));
            }
        }
        Command::AblatePiso(a) => {
            let cfg = RunConfig::load(&a.config, &a.overrides)?;
            let dir = root.join(a.name.unwrap_or_else(|| format!("{}-ablate-piso", cfg.run_name())));
            run::run_ablate_piso(&cfg, a.config.parent(), &dir)?;
            let text = std::fs::read_to_string(dir.join("comparison.txt")).map_err(|e| Error::io(&dir, e))?;
            print!("{}: \n{text}", dir.display());
        }
        Command::Plot(p) => plot(p.kind)?,
        Command::GenData(a) => {
            let ds = generate(a.kind, a.n, a.sampling, &mut stream_rng(a.seed, Stream::Data))?;
            save_csv(&ds, &a.out, a.header)?;
            if let Some(path) = &a.chart {
                match &ds.intrinsic {
                    Some(chart) => {
                        let names: Vec<String> = (1..=chart.cols()).map(|j| format!("chart{j}")).collect();
                        write_matrix_csv(path, a.header.then_some(&names[..]), chart)?;
                    }
                    None => return Err(Error::config(format!("{} has no ground-truth chart", a.kind))),
                }
            }
        }
    }
    Ok(())
}

fn column(names: &[String], spec: &str) -> Result<usize> {
    if let Some(i) = names.iter().position(|n| n == spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < names.len() || names.is_empty() => Ok(i),
        _ => Err(Error::config(format!("no column {spec:?}"))),
    }
}

fn plot(kind: PlotKind) -> Result<()> {
    let write = |path: &Path, s: String| std::fs::write(path, s).map_err(|e| Error::io(path, e));
    match kind {
        PlotKind::Scatter { input, out, x, y, color, header, title } => {
            let (names, t) = read_matrix_csv(&input, header)?;
            let names = names.unwrap_or_else(|| (0..t.cols()).map(|i| i.to_string()).collect());
            let col = |i: usize| -> Vec<f64> { t.row_iter().map(|r| r[i]).collect() };
            let (xi, yi) = (column(&names, &x)?, column(&names, &y)?);
            let ci = color.as_deref().map(|c| column(&names, c)).transpose()?;
            if xi.max(yi).max(ci.unwrap_or(0)) >= t.cols() {
                return Err(Error::config(format!("{} has only {} columns", input.display(), t.cols())));
            }
            let c = ci.map(col);
            write(&out, svg::scatter(&col(xi), &col(yi), c.as_deref(), &title))
        }
        PlotKind::Lines { input, out, x, columns, header, title } => {
            let (names, t) = read_matrix_csv(&input, header)?;
            let names = names.unwrap_or_else(|| (0..t.cols()).map(|i| i.to_string()).collect());
            let xi = column(&names, &x)?;
            let picked: Vec<usize> = if columns.is_empty() {
                (0..t.cols()).filter(|&i| i != xi).collect()
            } else {
                columns.iter().map(|c| column(&names, c)).collect::<Result<_>>()?
            };
            if picked.iter().chain([&xi]).any(|&i| i >= t.cols()) {
                return Err(Error::config(format!("{} has only {} columns", input.display(), t.cols())));
            }
            let col = |i: usize| -> Vec<f64> { t.row_iter().map(|r| r[i]).collect() };
            let series: Vec<(String, Vec<f64>)> = picked.iter().map(|&i| (names[i].clone(), col(i))).collect();
            write(&out, svg::lines(&col(xi), &series, &title))
        }
    }
}
