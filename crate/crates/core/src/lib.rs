//! Isometric autoencoders.
//!
//! A small tape-based autodiff engine ([`autodiff`]) drives MLP encoders and
//! decoders ([`nn`]) trained on a reconstruction loss plus Monte-Carlo
//! isometry and pseudo-inverse penalties ([`losses`], [`optim`]). The
//! [`eval`] module measures how close a trained decoder is to an isometry.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod sampling;

pub use error::{Error, Result};
