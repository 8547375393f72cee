//! Synthetic surfaces in ℝ³ and point-cloud CSV I/O.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const SWISS_ROLL_T_MIN: f64 = 1.5 * PI;
pub const SWISS_ROLL_T_MAX: f64 = 4.5 * PI;
pub const SWISS_ROLL_HEIGHT: f64 = 10.0;
pub const S_SHAPE_T_MAX: f64 = 1.5 * PI;
pub const S_SHAPE_HEIGHT: f64 = 2.0;
pub const OPEN_SPHERE_MAX_POLAR: f64 = 2.0 * PI / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    SwissRoll,
    SShape,
    OpenSphere,
}

impl std::str::FromStr for SurfaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "swiss_roll" => Ok(SurfaceKind::SwissRoll),
            "s_shape" => Ok(SurfaceKind::SShape),
            "open_sphere" => Ok(SurfaceKind::OpenSphere),
            other => Err(Error::config(format!("unknown surface {other:?}"))),
        }
    }
}

impl std::fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SurfaceKind::SwissRoll => "swiss_roll",
            SurfaceKind::SShape => "s_shape",
            SurfaceKind::OpenSphere => "open_sphere",
        })
    }
}

/// How surface points are spread over the parameter domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceSampling {
    /// Uniform in the surface parameters.
    #[default]
    Parameter,
    /// Uniform with respect to surface area.
    Area,
}

/// Provenance of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub kind: SurfaceKind,
    pub n: usize,
    pub sampling: SurfaceSampling,
    pub parametrization: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × D`
    pub points: Tensor,
    pub name: String,
    pub generator: Option<GeneratorParams>,
    /// Ground-truth chart coordinates, `n × d`, when the generator knows them.
    pub intrinsic: Option<Tensor>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, points: Tensor) -> Result<Self> {
        if points.rank() != 2 || points.rows() == 0 || points.cols() == 0 {
            return Err(Error::contract(format!("dataset needs at least one point, got shape {:?}", points.shape())));
        }
        if !points.all_finite() {
            return Err(Error::Domain("dataset contains NaN or infinite coordinates".into()));
        }
        Ok(Dataset { points, name: name.into(), generator: None, intrinsic: None })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Largest pairwise Euclidean distance between points.
    pub fn diameter(&self) -> f64 {
        let p = &self.points;
        let mut best: f64 = 0.0;
        for i in 0..p.rows() {
            let a = p.row(i);
            for j in i + 1..p.rows() {
                let d2: f64 = a.iter().zip(p.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.max(d2);
            }
        }
        best.sqrt()
    }

    /// Translates and uniformly scales the points so their bounding box
    /// starts at the origin and its longest side is `extent`. The chart is
    /// scaled by the same factor so it stays isometric.
    pub fn scale_to_box(&mut self, extent: f64) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in self.points.row_iter() {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let current = (0..d).map(|j| hi[j] - lo[j]).fold(0.0, f64::max);
        if current <= 0.0 {
            return;
        }
        let s = extent / current;
        let (n, cols) = (self.points.rows(), d);
        self.points = Tensor::from_fn(n, cols, |i, j| (self.points.get(i, j) - lo[j]) * s);
        if let Some(chart) = &self.intrinsic {
            self.intrinsic = Some(chart.scale(s));
        }
    }
}

/// `∫₀ᵗ √(1+τ²) dτ`.
fn arc_primitive(t: f64) -> f64 {
    0.5 * (t * (1.0 + t * t).sqrt() + t.asinh())
}

/// Arc length of the swiss-roll spiral from `SWISS_ROLL_T_MIN` to `t`.
pub fn swiss_roll_arc_length(t: f64) -> f64 {
    arc_primitive(t) - arc_primitive(SWISS_ROLL_T_MIN)
}

/// Inverse of [`swiss_roll_arc_length`] by Newton iteration.
fn swiss_roll_t_at_length(s: f64) -> f64 {
    let target = s + arc_primitive(SWISS_ROLL_T_MIN);
    let mut t = 0.5 * (SWISS_ROLL_T_MIN + SWISS_ROLL_T_MAX);
    for _ in 0..50 {
        let step = (arc_primitive(t) - target) / (1.0 + t * t).sqrt();
        t -= step;
        if step.abs() < 1e-15 * t.abs() {
            break;
        }
    }
    t
}

/// `(t·cos t, h, t·sin t)` with `t ∈ [1.5π, 4.5π]`, `h ∈ [0, 10]`. The
/// intrinsic chart is `(s(t), h)` with `s` the arc length, an exact isometry.
pub fn gen_swiss_roll(n: usize, sampling: SurfaceSampling, rng: &mut impl Rng) -> Result<Dataset> {
    check_n(n)?;
    let total = swiss_roll_arc_length(SWISS_ROLL_T_MAX);
    let mut pts = Vec::with_capacity(3 * n);
    let mut chart = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let t = match sampling {
            SurfaceSampling::Parameter => rng.gen_range(SWISS_ROLL_T_MIN..SWISS_ROLL_T_MAX),
            SurfaceSampling::Area => swiss_roll_t_at_length(rng.gen_range(0.0..total)),
        };
        let h = rng.gen_range(0.0..SWISS_ROLL_HEIGHT);
        pts.extend([t * t.cos(), h, t * t.sin()]);
        chart.extend([swiss_roll_arc_length(t), h]);
    }
    finish(
        "swiss_roll",
        SurfaceKind::SwissRoll,
        sampling,
        "(t cos t, h, t sin t), t~[1.5pi,4.5pi], h~[0,10]; chart (arc length from 1.5pi, h)",
        pts,
        chart,
    )
}

/// `(sin t, h, sign(t)·(cos t − 1))` with `t ∈ [−1.5π, 1.5π]`, `h ∈ [0, 2]`.
/// The curve has unit speed, so `(t, h)` is an isometric chart.
pub fn gen_s_shape(n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    check_n(n)?;
    let mut pts = Vec::with_capacity(3 * n);
    let mut chart = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let t = rng.gen_range(-S_SHAPE_T_MAX..S_SHAPE_T_MAX);
        let h = rng.gen_range(0.0..S_SHAPE_HEIGHT);
        pts.extend(s_shape_point(t, h));
        chart.extend([t, h]);
    }
    finish(
        "s_shape",
        SurfaceKind::SShape,
        SurfaceSampling::Parameter,
        "(sin t, h, sign(t)(cos t - 1)), t~[-1.5pi,1.5pi], h~[0,2]; chart (t, h)",
        pts,
        chart,
    )
}

pub fn s_shape_point(t: f64, h: f64) -> [f64; 3] {
    [t.sin(), h, t.signum() * (t.cos() - 1.0)]
}

/// Unit sphere cap with polar angle at most 2π/3, area-uniform
/// (`cos θ ∼ U[cos θ_max, 1]`, azimuth uniform). There is no isometric
/// planar chart, so no intrinsic coordinates are stored.
pub fn gen_open_sphere(n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    check_n(n)?;
    let cmin = OPEN_SPHERE_MAX_POLAR.cos();
    let mut pts = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let c: f64 = rng.gen_range(cmin..=1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        let phi = rng.gen_range(0.0..2.0 * PI);
        pts.extend([s * phi.cos(), s * phi.sin(), c]);
    }
    let mut ds = Dataset::new("open_sphere", Tensor::matrix(n, 3, pts)?)?;
    ds.generator = Some(GeneratorParams {
        kind: SurfaceKind::OpenSphere,
        n,
        sampling: SurfaceSampling::Area,
        parametrization: "unit sphere, polar angle <= 2pi/3, cos(polar)~U[cos max,1], azimuth~U[0,2pi)".into(),
    });
    Ok(ds)
}

/// Dispatches to the named generator.
pub fn generate(kind: SurfaceKind, n: usize, sampling: SurfaceSampling, rng: &mut impl Rng) -> Result<Dataset> {
    match kind {
        SurfaceKind::SwissRoll => gen_swiss_roll(n, sampling, rng),
        SurfaceKind::SShape => gen_s_shape(n, rng),
        SurfaceKind::OpenSphere => gen_open_sphere(n, rng),
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::contract("need at least one point"));
    }
    Ok(())
}

fn finish(
    name: &str,
    kind: SurfaceKind,
    sampling: SurfaceSampling,
    parametrization: &str,
    pts: Vec<f64>,
    chart: Vec<f64>,
) -> Result<Dataset> {
    let n = pts.len() / 3;
    let mut ds = Dataset::new(name, Tensor::matrix(n, 3, pts)?)?;
    ds.intrinsic = Some(Tensor::matrix(n, 2, chart)?);
    ds.generator = Some(GeneratorParams { kind, n, sampling, parametrization: parametrization.into() });
    Ok(ds)
}

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a matrix as CSV with an optional header line.
pub fn write_matrix_csv(path: &Path, header: Option<&[String]>, rows: &Tensor) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in rows.row_iter() {
        let mut first = true;
        for &x in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{}", fmt_f64(x));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a numeric CSV with one row per point. Returns the column names when
/// `header` is set.
pub fn read_matrix_csv(path: &Path, header: bool) -> Result<(Option<Vec<String>>, Tensor)> {
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader =
        csv::ReaderBuilder::new().has_headers(header).flexible(true).trim(csv::Trim::All).from_reader(file);
    let names = if header {
        let h = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut cols: Option<usize> = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(line, format!("expected {c} fields, found {}", record.len())));
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    let Some(cols) = cols else {
        return Err(parse_err(1, "no data rows".into()));
    };
    Ok((names, Tensor::matrix(rows, cols, data)?))
}

pub fn load_csv(path: &Path, header: bool) -> Result<Dataset> {
    let (_, points) = read_matrix_csv(path, header)?;
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, points)
}

pub fn save_csv(dataset: &Dataset, path: &Path, header: bool) -> Result<()> {
    let names: Vec<String> = (0..dataset.dim()).map(|j| format!("x{}", j + 1)).collect();
    write_matrix_csv(path, header.then_some(&names[..]), &dataset.points)
}
