// SPDX-License-Identifier: Apache-2.0

use alloc::string::String;

/// Errors raised by the numerical pipeline.
///
/// `Invalid` and `DimensionMismatch` are caller mistakes; `NotComputable` and
/// `Numerical` come from the data or the arithmetic.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0} is not computable on this input")]
    NotComputable(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid { .. } | Error::DimensionMismatch { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;
