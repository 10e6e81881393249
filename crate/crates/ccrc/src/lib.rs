// SPDX-License-Identifier: Apache-2.0

//! File formats, experiment harness and command line for chaos-controlled
//! reservoir computing on a surrogate spiking substrate.

pub use ccrc_core as core;

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod harness;
pub mod report;
pub mod text;
