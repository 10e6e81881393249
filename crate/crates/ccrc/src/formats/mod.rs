// SPDX-License-Identifier: Apache-2.0

//! Versioned plain-text file formats.

pub mod model;
pub mod program;
pub mod spikes;
