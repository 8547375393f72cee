//! Isometry evaluation on a triangulated latent grid, Jacobian diagnostics
//! for encoder/decoder pairs, and rigid alignment against a reference chart.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{explicit_jacobian, Tensor};
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::sampling::DEGENERATE_EPS;

pub const DEFAULT_GRID_RESOLUTION: usize = 20;
/// Fraction of the code bounding box trimmed from each side.
pub const GRID_SHRINK: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridTriangulation {
    /// `k²×2`, row-major over the grid: index `r·k + c`.
    pub points: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub resolution: usize,
}

impl GridTriangulation {
    pub fn num_triangles(&self) -> usize {
        2 * (self.resolution - 1) * (self.resolution - 1)
    }
}

/// `k×k` grid over `bbox`; every cell is cut along its `(r,c)-(r+1,c+1)` diagonal.
pub fn build_grid(bbox: BBox, k: usize) -> Result<GridTriangulation> {
    if k < 2 {
        return Err(Error::Domain(format!("grid resolution must be at least 2, got {k}")));
    }
    for a in 0..2 {
        let (lo, hi) = (bbox.lo[a], bbox.hi[a]);
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Domain(format!("degenerate grid box on axis {a}: [{lo}, {hi}]")));
        }
    }
    let step = |a: usize, i: usize| {
        if i == k - 1 {
            bbox.hi[a]
        } else {
            bbox.lo[a] + (bbox.hi[a] - bbox.lo[a]) * i as f64 / (k - 1) as f64
        }
    };
    let points = Tensor::from_fn(k * k, 2, |i, a| if a == 0 { step(0, i % k) } else { step(1, i / k) });
    let idx = |r: usize, c: usize| r * k + c;
    let mut edges = Vec::with_capacity(3 * k * k);
    for r in 0..k {
        for c in 0..k {
            if c + 1 < k {
                edges.push((idx(r, c), idx(r, c + 1)));
            }
            if r + 1 < k {
                edges.push((idx(r, c), idx(r + 1, c)));
            }
            if r + 1 < k && c + 1 < k {
                edges.push((idx(r, c), idx(r + 1, c + 1)));
            }
        }
    }
    Ok(GridTriangulation { points, edges, resolution: k })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    /// Edge length ratios after dividing by their mean.
    pub ratios: Vec<f64>,
    /// Mean of the raw ratios (the normalising factor).
    pub raw_mean: f64,
    pub mean: f64,
    pub std: f64,
}

/// Edge length ratios `‖f(zᵢ) − f(zⱼ)‖ / ‖zᵢ − zⱼ‖` over the grid edges,
/// normalised to mean one, and their (population) standard deviation.
pub fn edge_ratio_std(decoder: &MlpParams, grid: &GridTriangulation) -> Result<IsometryReport> {
    if decoder.in_dim() != grid.points.cols() {
        return Err(Error::shape(format!(
            "decoder takes {} inputs but the grid is {}-dimensional",
            decoder.in_dim(),
            grid.points.cols()
        )));
    }
    let image = decoder.apply(&grid.points)?;
    edge_ratios_between(&grid.points, &image, &grid.edges)
}

/// [`edge_ratio_std`] for precomputed images of the grid points.
pub fn edge_ratios_between(points: &Tensor, image: &Tensor, edges: &[(usize, usize)]) -> Result<IsometryReport> {
    if edges.is_empty() {
        return Err(Error::Domain("no edges".into()));
    }
    let dist = |t: &Tensor, i: usize, j: usize| -> f64 {
        t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut raw = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        if i >= points.rows() || j >= points.rows() {
            return Err(Error::shape(format!("edge ({i}, {j}) out of range")));
        }
        let len = dist(points, i, j);
        if len == 0.0 {
            return Err(Error::Domain(format!("edge ({i}, {j}) has zero length")));
        }
        raw.push(dist(image, i, j) / len);
    }
    let raw_mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if !(raw_mean > 0.0 && raw_mean.is_finite()) {
        return Err(Error::Domain(format!("mean edge ratio is {raw_mean}")));
    }
    let ratios: Vec<f64> = raw.iter().map(|r| r / raw_mean).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / ratios.len() as f64;
    Ok(IsometryReport { ratios, raw_mean, mean, std: var.sqrt() })
}

/// Bounding box of 2D codes, trimmed by [`GRID_SHRINK`] on each side.
pub fn grid_bbox_from_codes(codes: &Tensor) -> Result<BBox> {
    if codes.rank() != 2 || codes.cols() != 2 {
        return Err(Error::shape(format!("expected n×2 codes, got {:?}", codes.shape())));
    }
    if codes.rows() == 0 {
        return Err(Error::contract("no codes to bound"));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for row in codes.row_iter() {
        for a in 0..2 {
            lo[a] = lo[a].min(row[a]);
            hi[a] = hi[a].max(row[a]);
        }
    }
    for a in 0..2 {
        if !(lo[a].is_finite() && hi[a].is_finite()) {
            return Err(Error::Domain("non-finite latent codes".into()));
        }
        if hi[a] - lo[a] < DEGENERATE_EPS {
            hi[a] = lo[a] + DEGENERATE_EPS;
        }
        let pad = GRID_SHRINK * (hi[a] - lo[a]);
        lo[a] += pad;
        hi[a] -= pad;
    }
    Ok(BBox { lo, hi })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianSample {
    /// Singular values of `A = df(z)`, descending.
    pub singular_values: Vec<f64>,
    /// `‖AᵀA − I‖_F`
    pub ata_dev: f64,
    /// `‖BBᵀ − I‖_F` with `B = dg(f(z))`
    pub bbt_dev: f64,
    /// `‖B − Aᵀ‖_F / ‖A‖_F`
    pub pinv_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub samples: Vec<JacobianSample>,
    /// Per singular-value index, the median over samples.
    pub median_singular_values: Vec<f64>,
    pub singular_value_q10: f64,
    pub singular_value_q90: f64,
    pub median_ata_dev: f64,
    pub median_bbt_dev: f64,
    pub median_pinv_ratio: f64,
}

impl JacobianReport {
    /// `maxₖ |median σₖ − 1|`
    pub fn singular_value_deviation(&self) -> f64 {
        self.median_singular_values.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

/// Explicit-Jacobian diagnostics at each row of `z`.
pub fn jacobian_diagnostics(encoder: &MlpParams, decoder: &MlpParams, z: &Tensor) -> Result<JacobianReport> {
    if z.rank() != 2 || z.cols() != decoder.in_dim() {
        return Err(Error::shape(format!(
            "latent samples {:?} do not match decoder input dimension {}",
            z.shape(),
            decoder.in_dim()
        )));
    }
    if encoder.in_dim() != decoder.out_dim() || encoder.out_dim() != decoder.in_dim() {
        return Err(Error::shape("encoder and decoder dimensions do not mirror"));
    }
    if z.rows() == 0 {
        return Err(Error::contract("no latent samples"));
    }
    let d = decoder.in_dim();
    let mut samples = Vec::with_capacity(z.rows());
    for zi in z.row_iter() {
        let zi = Tensor::vector(zi.to_vec());
        let a = explicit_jacobian(|v| decoder.forward(v), &zi)?;
        let x = decoder.apply(&zi)?;
        let b = explicit_jacobian(|v| encoder.forward(v), &x)?;
        let (a, b) = (to_na(&a), to_na(&b));
        let eye = DMatrix::<f64>::identity(d, d);
        let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|p, q| q.total_cmp(p));
        let a_norm = a.norm();
        samples.push(JacobianSample {
            singular_values: sv,
            ata_dev: (a.transpose() * &a - &eye).norm(),
            bbt_dev: (&b * b.transpose() - &eye).norm(),
            pinv_ratio: if a_norm > 0.0 { (&b - a.transpose()).norm() / a_norm } else { f64::INFINITY },
        });
    }
    let median_singular_values =
        (0..d).map(|k| median(samples.iter().map(|s| s.singular_values[k]).collect())).collect();
    let all_sv: Vec<f64> = samples.iter().flat_map(|s| s.singular_values.iter().copied()).collect();
    Ok(JacobianReport {
        median_singular_values,
        singular_value_q10: quantile(all_sv.clone(), 0.1),
        singular_value_q90: quantile(all_sv, 0.9),
        median_ata_dev: median(samples.iter().map(|s| s.ata_dev).collect()),
        median_bbt_dev: median(samples.iter().map(|s| s.bbt_dev).collect()),
        median_pinv_ratio: median(samples.iter().map(|s| s.pinv_ratio).collect()),
        samples,
    })
}

/// Linear-interpolated quantile; NaN for an empty sample.
pub fn quantile(mut xs: Vec<f64>, q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < xs.len() {
        xs[i] + frac * (xs[i + 1] - xs[i])
    } else {
        xs[i]
    }
}

pub fn median(xs: Vec<f64>) -> f64 {
    quantile(xs, 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesFit {
    /// Orthogonal `d×d`, applied as `x ↦ x·R + t`.
    pub rotation: Tensor,
    pub translation: Vec<f64>,
    pub rmse: f64,
    pub aligned: Tensor,
}

/// Orthogonal Procrustes without scaling: the rotation (or reflection) and
/// translation minimising the squared distance from `source` to `target`.
pub fn procrustes(source: &Tensor, target: &Tensor) -> Result<ProcrustesFit> {
    if source.rank() != 2 || source.shape() != target.shape() {
        return Err(Error::shape(format!(
            "procrustes needs equal n×d shapes, got {:?} and {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let (n, d) = (source.rows(), source.cols());
    if n == 0 {
        return Err(Error::contract("procrustes on an empty point set"));
    }
    let (x, y) = (to_na(source), to_na(target));
    let xm = x.row_mean();
    let ym = y.row_mean();
    let mut xc = x.clone();
    let mut yc = y.clone();
    for i in 0..n {
        for j in 0..d {
            xc[(i, j)] -= xm[j];
            yc[(i, j)] -= ym[j];
        }
    }
    let svd = (xc.transpose() * &yc).svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Domain("procrustes: SVD failed".into())),
    };
    let r = u * vt;
    let aligned = &xc * &r;
    let mut sq = 0.0;
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        for j in 0..d {
            let v = aligned[(i, j)] + ym[j];
            out.data_mut()[i * d + j] = v;
            sq += (v - y[(i, j)]).powi(2);
        }
    }
    let translation: Vec<f64> = (0..d).map(|j| ym[j] - (0..d).map(|i| xm[i] * r[(i, j)]).sum::<f64>()).collect();
    Ok(ProcrustesFit {
        rotation: Tensor::from_fn(d, d, |i, j| r[(i, j)]),
        translation,
        rmse: (sq / n as f64).sqrt(),
        aligned: out,
    })
}
