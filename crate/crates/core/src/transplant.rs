// SPDX-License-Identifier: Apache-2.0

//! Knowledge transplant: align a student's latent attractor to an expert's
//! and carry the expert readout over by composition.

use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::latent::{labeled_bin_means, AttractorModel, LabeledTrajectory};
use crate::linalg;
use crate::readout::{FeatureSpace, ReadoutModel};

pub use crate::readout::fine_tune;

/// Default number of labeled probe windows used to estimate a student attractor.
pub const DEFAULT_PROBE_BUDGET: usize = 60;

/// Affine student → expert map `e ≈ linear · s + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTransform {
    /// expert_dim × student_dim
    pub linear: DMatrix<f64>,
    pub translation: DVector<f64>,
    pub ridge_lambda: f64,
    /// RMS distance between mapped student points and their expert partners.
    pub fit_residual: f64,
    pub probe_count: usize,
}

impl AlignmentTransform {
    pub fn student_dim(&self) -> usize {
        self.linear.ncols()
    }

    pub fn expert_dim(&self) -> usize {
        self.linear.nrows()
    }

    /// Maps the rows of `points` (n × student_dim) into expert coordinates.
    pub fn apply_rows(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != self.student_dim() {
            return Err(Error::DimensionMismatch {
                what: "student points",
                expected: self.student_dim(),
                found: points.ncols(),
            });
        }
        let mut out = points * self.linear.transpose();
        for mut row in out.row_iter_mut() {
            row += self.translation.transpose();
        }
        Ok(out)
    }
}

/// Ridge-regularized affine fit; the translation is not penalized.
pub fn fit_alignment(student: &DMatrix<f64>, expert: &DMatrix<f64>, lambda: f64) -> Result<AlignmentTransform> {
    let (n, ds) = student.shape();
    if expert.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "corresponding points",
            expected: n,
            found: expert.nrows(),
        });
    }
    if ds == 0 || expert.ncols() == 0 {
        return Err(Error::invalid("alignment", "point dimensions must be positive"));
    }
    if n < ds + 1 {
        return Err(Error::invalid("alignment", "needs at least student_dim + 1 point pairs"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("alignment", "lambda must be finite and nonnegative"));
    }
    if student.iter().chain(expert.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("alignment", "points must be finite"));
    }
    let s_mean = student.row_mean();
    let e_mean = expert.row_mean();
    let mut sc = student.clone();
    let mut ec = expert.clone();
    for mut row in sc.row_iter_mut() {
        row -= &s_mean;
    }
    for mut row in ec.row_iter_mut() {
        row -= &e_mean;
    }
    let mut gram = sc.transpose() * &sc;
    if lambda == 0.0 && linalg::effective_rank(&sc, 1e-10) < ds {
        return Err(Error::invalid("alignment", "rank-deficient student cloud needs lambda > 0"));
    }
    for i in 0..ds {
        gram[(i, i)] += lambda;
    }
    // linearᵀ = (ScᵀSc + λI)⁻¹ ScᵀEc
    let linear_t = linalg::solve_spd(gram, &(sc.transpose() * &ec))?;
    let linear = linear_t.transpose();
    let translation = e_mean.transpose() - &linear * s_mean.transpose();
    let mut transform = AlignmentTransform {
        linear,
        translation,
        ridge_lambda: lambda,
        fit_residual: 0.0,
        probe_count: n,
    };
    let mapped = transform.apply_rows(student)?;
    let sq: f64 = (mapped - expert).iter().map(|v| v * v).sum();
    transform.fit_residual = libm::sqrt(sq / n as f64);
    Ok(transform)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    /// n × student_dim
    pub student_points: DMatrix<f64>,
    /// n × expert_dim
    pub expert_points: DMatrix<f64>,
    /// (label, phase bin) of each pair.
    pub keys: Vec<(u8, usize)>,
    /// Pair count per shared label.
    pub pairs_per_label: Vec<(u8, usize)>,
    /// Student labels with no counterpart in the expert attractor.
    pub skipped_labels: Vec<u8>,
    /// Set when only one label is shared.
    pub single_label: bool,
}

/// Pairs student and expert bin means that share a (label, phase bin) key.
pub fn correspond_points(student: &[LabeledTrajectory], expert: &AttractorModel) -> Result<Correspondence> {
    if expert.labeled.is_empty() || expert.labeled_phase_bins == 0 {
        return Err(Error::invalid("expert attractor", "carries no labeled structure"));
    }
    let student_bins = labeled_bin_means(student, expert.labeled_phase_bins)?;
    let mut keys = Vec::new();
    let mut s_rows: Vec<&DVector<f64>> = Vec::new();
    let mut e_rows: Vec<&DVector<f64>> = Vec::new();
    let mut skipped: Vec<u8> = Vec::new();
    for sb in &student_bins {
        match expert
            .labeled
            .binary_search_by(|e| (e.label, e.phase_bin).cmp(&(sb.label, sb.phase_bin)))
        {
            Ok(i) => {
                keys.push((sb.label, sb.phase_bin));
                s_rows.push(&sb.mean);
                e_rows.push(&expert.labeled[i].mean);
            }
            Err(_) => {
                if !expert.labeled.iter().any(|e| e.label == sb.label) && !skipped.contains(&sb.label) {
                    skipped.push(sb.label);
                }
            }
        }
    }
    if keys.is_empty() {
        return Err(Error::invalid("correspondence", "no overlapping labels"));
    }
    let mut pairs_per_label: Vec<(u8, usize)> = Vec::new();
    for &(label, _) in &keys {
        match pairs_per_label.last_mut() {
            Some((l, c)) if *l == label => *c += 1,
            _ => pairs_per_label.push((label, 1)),
        }
    }
    let ds = s_rows[0].len();
    let de = e_rows[0].len();
    Ok(Correspondence {
        student_points: DMatrix::from_fn(keys.len(), ds, |i, j| s_rows[i][j]),
        expert_points: DMatrix::from_fn(keys.len(), de, |i, j| e_rows[i][j]),
        single_label: pairs_per_label.len() == 1,
        keys,
        pairs_per_label,
        skipped_labels: skipped,
    })
}

impl Correspondence {
    /// Keeps only pairs whose phase bin is at least `first_phase_bin`.
    pub fn from_phase(&self, first_phase_bin: usize) -> Result<Correspondence> {
        let rows: Vec<usize> = (0..self.keys.len())
            .filter(|&i| self.keys[i].1 >= first_phase_bin)
            .collect();
        if rows.is_empty() {
            return Err(Error::invalid("correspondence", "no pairs at or after the requested phase bin"));
        }
        let keys: Vec<(u8, usize)> = rows.iter().map(|&i| self.keys[i]).collect();
        let mut pairs_per_label: Vec<(u8, usize)> = Vec::new();
        for &(label, _) in &keys {
            match pairs_per_label.last_mut() {
                Some((l, c)) if *l == label => *c += 1,
                _ => pairs_per_label.push((label, 1)),
            }
        }
        Ok(Correspondence {
            student_points: self.student_points.select_rows(&rows),
            expert_points: self.expert_points.select_rows(&rows),
            single_label: pairs_per_label.len() == 1,
            keys,
            pairs_per_label,
            skipped_labels: self.skipped_labels.clone(),
        })
    }
}

/// Student readout `W_s = W_e · T`, `b_s = W_e · t + b_e`.
pub fn transplant_readout(expert: &ReadoutModel, transform: &AlignmentTransform) -> Result<ReadoutModel> {
    let FeatureSpace::Latent(de) = expert.feature_space else {
        return Err(Error::invalid("transplant", "expert readout must use latent features"));
    };
    if de != transform.expert_dim() || expert.weights.ncols() != de {
        return Err(Error::DimensionMismatch {
            what: "expert latent dimension",
            expected: transform.expert_dim(),
            found: de,
        });
    }
    Ok(ReadoutModel {
        weights: &expert.weights * &transform.linear,
        bias: &expert.weights * &transform.translation + &expert.bias,
        ridge_lambda: expert.ridge_lambda,
        feature_space: FeatureSpace::Latent(transform.student_dim()),
        class_labels: expert.class_labels.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransplantRecord {
    pub expert_id: String,
    pub student_id: String,
    pub transform: AlignmentTransform,
    pub transplanted_readout: ReadoutModel,
    /// Free-form description of the expert's training.
    pub provenance: String,
}

impl TransplantRecord {
    pub fn new(
        expert_id: String,
        student_id: String,
        expert: &ReadoutModel,
        transform: AlignmentTransform,
        provenance: String,
    ) -> Result<Self> {
        let transplanted_readout = transplant_readout(expert, &transform)?;
        Ok(TransplantRecord {
            expert_id,
            student_id,
            transform,
            transplanted_readout,
            provenance,
        })
    }
}
