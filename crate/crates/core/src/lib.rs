// SPDX-License-Identifier: Apache-2.0

//! Chaos-controlled reservoir computing on a surrogate living substrate.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical
//! pipeline: a seeded spiking network standing in for a neural culture,
//! optical pattern encoding, pre-flight diagnostics, GPFA latent models,
//! ridge readouts, entrainment statistics and readout transplant between
//! substrates. File formats, protocol orchestration and the command line
//! live in the `ccrc` crate.

#![no_std]
// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod control;
pub mod diagnostics;
pub mod encoding;
pub mod error;
pub mod latent;
mod linalg;
pub mod readout;
pub mod seed;
pub mod substrate;
pub mod synthetic;
pub mod transplant;

pub use error::{Error, Result};
