//! C interface to `iae`.
//!
//! Datasets and models are opaque handles created by `iae_*` constructors and
//! released with the matching `*_free`. Every fallible call returns an
//! [`IaeStatus`]; on failure a message is available from [`iae_last_error`]
//! on the same thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use iae::autodiff::Tensor;
use iae::cli::config::RunConfig;
use iae::data::{generate, Dataset, SurfaceKind, SurfaceSampling};
use iae::eval::{build_grid, edge_ratio_std, grid_bbox_from_codes};
use iae::nn::Autoencoder;
use iae::optim::train;
use iae::sampling::{stream_rng, Stream};
use iae::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Domain = 4,
    Contract = 5,
    Config = 6,
    Parse = 7,
    NonFinite = 8,
    Io = 9,
    Serde = 10,
    Panic = 11,
}

/// Opaque point cloud.
pub struct IaeDataset {
    inner: Dataset,
}

/// Opaque trained encoder/decoder pair.
pub struct IaeModel {
    inner: Autoencoder,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> IaeStatus {
    match e {
        Error::Shape(_) => IaeStatus::Shape,
        Error::Domain(_) => IaeStatus::Domain,
        Error::Contract(_) => IaeStatus::Contract,
        Error::Config(_) => IaeStatus::Config,
        Error::Parse { .. } => IaeStatus::Parse,
        Error::NonFinite { .. } => IaeStatus::NonFinite,
        Error::Io { .. } => IaeStatus::Io,
        Error::Serde(_) => IaeStatus::Serde,
    }
}

struct Fail(IaeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IaeStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IaeStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(IaeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(IaeStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Tensor, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let data = std::slice::from_raw_parts(p, rows * cols).to_vec();
    Ok(Tensor::new(vec![rows, cols], data)?)
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn iae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Samples `n` points of a named surface (`swiss_roll`, `s_shape`,
/// `open_sphere`), uniformly in its parameters.
#[no_mangle]
pub unsafe extern "C" fn iae_dataset_generate(
    kind: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut IaeDataset,
) -> IaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: SurfaceKind = str_arg(kind, "kind")?.parse()?;
        let ds = generate(kind, n, SurfaceSampling::Parameter, &mut stream_rng(seed, Stream::Data))?;
        *out = Box::into_raw(Box::new(IaeDataset { inner: ds }));
        Ok(())
    })
}

/// Copies a row-major `n×dim` array into a new dataset.
#[no_mangle]
pub unsafe extern "C" fn iae_dataset_from_points(
    points: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut IaeDataset,
) -> IaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = matrix_arg(points, n, dim, "points")?;
        *out = Box::into_raw(Box::new(IaeDataset { inner: Dataset::new("points", t)? }));
        Ok(())
    })
}

/// Number of points; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn iae_dataset_len(ds: *const IaeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Ambient dimension; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn iae_dataset_dim(ds: *const IaeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.dim())
}

/// Copies the points into `out`, which must hold `len × dim` values.
#[no_mangle]
pub unsafe extern "C" fn iae_dataset_points(ds: *const IaeDataset, out: *mut f64, capacity: usize) -> IaeStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let src = ds.inner.points.data();
        if capacity < src.len() {
            return Err(Fail(
                IaeStatus::InvalidArgument,
                format!("buffer holds {capacity} values, need {}", src.len()),
            ));
        }
        out_slice(out, src.len(), "out")?.copy_from_slice(src);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn iae_dataset_free(ds: *mut IaeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains on `ds` with a TOML configuration (`ae`, `train` and optional
/// `loss` sections; a `dataset` section is ignored). Returns the
/// lowest-loss parameters.
#[no_mangle]
pub unsafe extern "C" fn iae_train(
    ds: *const IaeDataset,
    config_toml: *const c_char,
    out: *mut *mut IaeModel,
) -> IaeStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::from_toml(str_arg(config_toml, "config")?)?;
        let outcome = train(&ds.inner, &cfg.ae, &cfg.train)?;
        *out = Box::into_raw(Box::new(IaeModel { inner: outcome.best }));
        Ok(())
    })
}

/// Loads a JSON checkpoint.
#[no_mangle]
pub unsafe extern "C" fn iae_model_load(path: *const c_char, out: *mut *mut IaeModel) -> IaeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = Autoencoder::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(IaeModel { inner: model }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn iae_model_save(model: *const IaeModel, path: *const c_char) -> IaeStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        model.inner.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn iae_model_ambient_dim(model: *const IaeModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.ambient_dim())
}

#[no_mangle]
pub unsafe extern "C" fn iae_model_latent_dim(model: *const IaeModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.latent_dim())
}

/// `out (n×latent_dim) = g(x (n×ambient_dim))`, row-major.
#[no_mangle]
pub unsafe extern "C" fn iae_model_encode(model: *const IaeModel, x: *const f64, n: usize, out: *mut f64) -> IaeStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let z = m.encode(&matrix_arg(x, n, m.ambient_dim(), "x")?)?;
        out_slice(out, z.len(), "out")?.copy_from_slice(z.data());
        Ok(())
    })
}

/// `out (n×ambient_dim) = f(z (n×latent_dim))`, row-major.
#[no_mangle]
pub unsafe extern "C" fn iae_model_decode(model: *const IaeModel, z: *const f64, n: usize, out: *mut f64) -> IaeStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let x = m.decode(&matrix_arg(z, n, m.latent_dim(), "z")?)?;
        out_slice(out, x.len(), "out")?.copy_from_slice(x.data());
        Ok(())
    })
}

/// Edge-ratio standard deviation of the decoder on a `resolution²` grid over
/// the codes of `ds`. Requires a 2-dimensional latent space.
#[no_mangle]
pub unsafe extern "C" fn iae_model_edge_ratio_std(
    model: *const IaeModel,
    ds: *const IaeDataset,
    resolution: usize,
    out_std: *mut f64,
) -> IaeStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        if out_std.is_null() {
            return Err(null("out_std"));
        }
        let grid = build_grid(grid_bbox_from_codes(&m.encode(&ds.points)?)?, resolution)?;
        *out_std = edge_ratio_std(&m.decoder, &grid)?.std;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn iae_model_free(model: *mut IaeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
