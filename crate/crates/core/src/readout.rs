// SPDX-License-Identifier: Apache-2.0

//! Linear readouts trained by one-vs-all ridge regression.
//!
//! Features are the rate vector of the 100 ms bin that begins where a
//! window's active interval ends, either as observed channel rates or
//! projected into GPFA latent coordinates. The intercept is unpenalized
//! (features and one-hot targets are centered before the ridge solve).

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::encoding::StimulusProgram;
use crate::error::{Error, Result};
use crate::latent::{self, LatentModel};
use crate::linalg;
use crate::seed;
use crate::substrate::{bin_rates, SpikeTrainSet};

pub const FEATURE_BIN_MS: f64 = 100.0;
pub const DEFAULT_FOLDS: usize = 10;

/// Relative ridge grid; each value is multiplied by the mean feature energy
/// `trace(XcᵀXc) / d`, which makes the grid act on trace-normalized features.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpace {
    ObservedRates(usize),
    Latent(usize),
}

impl FeatureSpace {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureSpace::ObservedRates(d) | FeatureSpace::Latent(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    /// samples × feature_dim
    pub features: DMatrix<f64>,
    pub labels: Vec<u8>,
    pub sample_times_ms: Vec<f64>,
    pub space: FeatureSpace,
}

impl LabeledFeatureSet {
    pub fn new(features: DMatrix<f64>, labels: Vec<u8>, space: FeatureSpace) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "feature set labels",
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if features.ncols() != space.dim() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: space.dim(),
                found: features.ncols(),
            });
        }
        let times = (0..labels.len()).map(|i| i as f64).collect();
        Ok(LabeledFeatureSet {
            features,
            labels,
            sample_times_ms: times,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> LabeledFeatureSet {
        LabeledFeatureSet {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sample_times_ms: rows.iter().map(|&r| self.sample_times_ms[r]).collect(),
            space: self.space,
        }
    }

    /// Samples whose time lies in `[start, end)`.
    pub fn time_range(&self, start_ms: f64, end_ms: f64) -> LabeledFeatureSet {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| self.sample_times_ms[i] >= start_ms && self.sample_times_ms[i] < end_ms)
            .collect();
        self.select(&rows)
    }
}

/// Feature extraction outcome; windows past the end of the recording are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub data: LabeledFeatureSet,
    pub dropped: usize,
}

/// One feature vector per labeled window of `program`.
///
/// In latent space each window is treated as a GPFA trial: its bins are
/// inferred jointly and the posterior mean at the sample bin is kept.
pub fn extract_features(
    spikes: &SpikeTrainSet,
    program: &StimulusProgram,
    latent_model: Option<&LatentModel>,
) -> Result<Extraction> {
    let rates = bin_rates(spikes, FEATURE_BIN_MS, 0.0)?;
    let channels = spikes.channel_count();
    let space = match latent_model {
        Some(m) => {
            if m.channel_count() != channels {
                return Err(Error::DimensionMismatch {
                    what: "latent model channels",
                    expected: m.channel_count(),
                    found: channels,
                });
            }
            FeatureSpace::Latent(m.latent_dim())
        }
        None => FeatureSpace::ObservedRates(channels),
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut times = Vec::new();
    let mut dropped = 0;
    for w in &program.windows {
        let sample_t = (w.onset_ms + u64::from(w.active_ms)) as f64;
        let (Some(first), Some(k)) = (rates.bin_at(w.onset_ms as f64), rates.bin_at(sample_t)) else {
            dropped += 1;
            continue;
        };
        let row = match latent_model {
            None => rates.values.column(k).iter().copied().collect(),
            Some(m) => {
                let last = rates
                    .bin_at(w.end_ms() as f64 - FEATURE_BIN_MS)
                    .unwrap_or(k)
                    .max(k);
                let trial = rates.values.columns(first, last - first + 1).into_owned();
                let traj = latent::infer_states(m, &trial)?;
                traj.row(k - first).iter().copied().collect()
            }
        };
        rows.push(row);
        labels.push(w.label);
        times.push(sample_t);
    }
    let dim = space.dim();
    let features = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    Ok(Extraction {
        data: LabeledFeatureSet {
            features,
            labels,
            sample_times_ms: times,
            space,
        },
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    /// classes × features
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub ridge_lambda: f64,
    pub feature_space: FeatureSpace,
    pub class_labels: Vec<u8>,
}

impl ReadoutModel {
    pub fn scores(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                what: "readout input",
                expected: self.weights.ncols(),
                found: x.len(),
            });
        }
        Ok(&self.weights * DVector::from_column_slice(x) + &self.bias)
    }

    /// Argmax class; ties go to the smallest label.
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        let s = self.scores(x)?;
        Ok(self.argmax_label(s.as_slice()))
    }

    fn argmax_label(&self, scores: &[f64]) -> u8 {
        let mut best = 0;
        for k in 1..scores.len() {
            let better = scores[k] > scores[best]
                || (scores[k] == scores[best] && self.class_labels[k] < self.class_labels[best]);
            if better {
                best = k;
            }
        }
        self.class_labels[best]
    }

    pub fn predict_all(&self, features: &DMatrix<f64>) -> Result<Vec<u8>> {
        if features.ncols() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                what: "readout input",
                expected: self.weights.ncols(),
                found: features.ncols(),
            });
        }
        let scores = features * self.weights.transpose();
        Ok((0..features.nrows())
            .map(|i| {
                let row: Vec<f64> = (0..scores.ncols()).map(|k| scores[(i, k)] + self.bias[k]).collect();
                self.argmax_label(&row)
            })
            .collect())
    }
}

fn check_finite(data: &LabeledFeatureSet) -> Result<()> {
    if data.features.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("features", "must be finite"));
    }
    Ok(())
}

fn classes_of(labels: &[u8]) -> Vec<u8> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Column means of `x`.
fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.ncols(), |j, _| x.column(j).mean())
}

fn one_hot(labels: &[u8], classes: &[u8]) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), classes.len(), |i, k| {
        if labels[i] == classes[k] {
            1.0
        } else {
            0.0
        }
    })
}

/// Ridge solution anchored at `anchor` (classes × features, or none):
/// minimizes ‖Yc − Xc Wᵀ‖² + λ‖W‖² + α‖W − anchor‖².
fn solve_anchored(
    data: &LabeledFeatureSet,
    classes: &[u8],
    lambda: f64,
    anchor: Option<(&DMatrix<f64>, &DVector<f64>, f64)>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let x = &data.features;
    let d = x.ncols();
    let y = one_hot(&data.labels, classes);
    if let Some((w0, b0, a)) = anchor {
        // Augmented system over [W | b]; the intercept is pulled toward b0 but not shrunk.
        let n = x.nrows();
        let z = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
        let mut gram = z.transpose() * &z;
        for i in 0..d {
            gram[(i, i)] += lambda + a;
        }
        gram[(d, d)] += a;
        let mut theta0 = DMatrix::zeros(d + 1, classes.len());
        theta0.view_mut((0, 0), (d, classes.len())).copy_from(&w0.transpose());
        theta0.row_mut(d).copy_from(&b0.transpose());
        let rhs = z.transpose() * &y + theta0 * a;
        let theta = linalg::solve_spd(gram, &rhs)?;
        let weights = theta.rows(0, d).transpose();
        let bias = theta.row(d).transpose();
        return Ok((weights, bias));
    }
    let x_mean = column_means(x);
    let y_mean = column_means(&y);
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= x_mean.transpose();
    }
    let mut yc = y;
    for mut row in yc.row_iter_mut() {
        row -= y_mean.transpose();
    }
    let mut gram = xc.transpose() * &xc;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let w_t = linalg::solve_spd(gram, &(xc.transpose() * &yc))?;
    let weights = w_t.transpose();
    let bias = &y_mean - &weights * &x_mean;
    Ok((weights, bias))
}

/// Ridge readout at a fixed λ (absolute, in raw feature units).
pub fn fit_ridge(data: &LabeledFeatureSet, lambda: f64) -> Result<ReadoutModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("ridge lambda", "must be finite and nonnegative"));
    }
    check_finite(data)?;
    let classes = classes_of(&data.labels);
    if classes.len() < 2 {
        return Err(Error::invalid("training data", "needs at least two classes"));
    }
    let (weights, bias) = solve_anchored(data, &classes, lambda, None)?;
    Ok(ReadoutModel {
        weights,
        bias,
        ridge_lambda: lambda,
        feature_space: data.space,
        class_labels: classes,
    })
}

/// Mean feature energy used to scale the relative λ grid.
pub fn feature_energy(data: &LabeledFeatureSet) -> f64 {
    let x = &data.features;
    let n = x.nrows().max(1) as f64;
    let means = column_means(x);
    let mut total = 0.0;
    for j in 0..x.ncols() {
        total += x.column(j).iter().map(|v| (v - means[j]) * (v - means[j])).sum::<f64>();
    }
    let e = total / x.ncols().max(1) as f64;
    if e > 0.0 {
        e
    } else {
        1.0 / n
    }
}

/// Fold index of every sample: a seeded shuffle dealt round-robin.
pub fn fold_assignment(samples: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut fold = vec![0; samples];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// (absolute λ, mean held-out accuracy)
    pub scores: Vec<(f64, f64)>,
    pub chosen_lambda: f64,
    pub folds: usize,
}

/// λ chosen by k-fold CV accuracy (ties to the smaller λ), then refit on all data.
///
/// `relative_grid` is scaled by [`feature_energy`].
pub fn train_ridge(
    data: &LabeledFeatureSet,
    relative_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(ReadoutModel, CvReport)> {
    check_finite(data)?;
    let classes = classes_of(&data.labels);
    if classes.len() < 2 {
        return Err(Error::invalid("training data", "needs at least two classes"));
    }
    if folds < 2 || folds > data.len() {
        return Err(Error::invalid("folds", "need 2 <= folds <= samples"));
    }
    if relative_grid.is_empty() || relative_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid("lambda grid", "must be nonempty, finite and nonnegative"));
    }
    let energy = feature_energy(data);
    let mut grid: Vec<f64> = relative_grid.iter().map(|g| g * energy).collect();
    grid.sort_by(f64::total_cmp);
    let fold = fold_assignment(data.len(), folds, seed);
    let mut correct = vec![0usize; grid.len()];
    for f in 0..folds {
        let train_rows: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != f).collect();
        let test_rows: Vec<usize> = (0..data.len()).filter(|&i| fold[i] == f).collect();
        let train = data.select(&train_rows);
        let test = data.select(&test_rows);
        // A training fold can miss a class; predictions then cover only the classes it saw.
        let fold_classes = classes_of(&train.labels);
        if fold_classes.len() < 2 {
            continue;
        }
        for (g, &lambda) in grid.iter().enumerate() {
            let (weights, bias) = solve_anchored(&train, &fold_classes, lambda, None)?;
            let model = ReadoutModel {
                weights,
                bias,
                ridge_lambda: lambda,
                feature_space: data.space,
                class_labels: fold_classes.clone(),
            };
            let pred = model.predict_all(&test.features)?;
            correct[g] += pred.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
        }
    }
    let scores: Vec<(f64, f64)> = grid
        .iter()
        .zip(&correct)
        .map(|(&l, &c)| (l, c as f64 / data.len() as f64))
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 > scores[best].1 {
            best = i;
        }
    }
    let chosen = scores[best].0;
    let model = fit_ridge(data, chosen)?;
    Ok((
        model,
        CvReport {
            scores,
            chosen_lambda: chosen,
            folds,
        },
    ))
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn evaluate(model: &ReadoutModel, data: &LabeledFeatureSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation data", "must not be empty"));
    }
    if data.space != model.feature_space {
        return Err(Error::DimensionMismatch {
            what: "feature space",
            expected: model.feature_space.dim(),
            found: data.space.dim(),
        });
    }
    let pred = model.predict_all(&data.features)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Ridge refit pulled toward `initial` by `anchor_weight · (‖W − W_initial‖² + ‖b − b_initial‖²)`.
///
/// Classes absent from `new_data` keep the initial model's rows through the
/// anchor; the class set is that of `initial`.
pub fn fine_tune(
    initial: &ReadoutModel,
    new_data: &LabeledFeatureSet,
    lambda: f64,
    anchor_weight: f64,
) -> Result<ReadoutModel> {
    if new_data.space != initial.feature_space {
        return Err(Error::DimensionMismatch {
            what: "feature space",
            expected: initial.feature_space.dim(),
            found: new_data.space.dim(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) || !(anchor_weight >= 0.0) || anchor_weight.is_nan() {
        return Err(Error::invalid("fine tune", "lambda and anchor weight must be nonnegative"));
    }
    check_finite(new_data)?;
    if new_data.is_empty() {
        return Err(Error::invalid("fine tune", "needs data"));
    }
    if new_data.labels.iter().any(|l| !initial.class_labels.contains(l)) {
        return Err(Error::invalid("fine tune", "label unknown to the initial model"));
    }
    if anchor_weight.is_infinite() {
        return Ok(ReadoutModel {
            ridge_lambda: lambda,
            ..initial.clone()
        });
    }
    if anchor_weight == 0.0 && classes_of(&new_data.labels).len() < 2 {
        return Err(Error::invalid("training data", "needs at least two classes"));
    }
    let anchor = (anchor_weight > 0.0).then_some((&initial.weights, &initial.bias, anchor_weight));
    let (weights, bias) = solve_anchored(new_data, &initial.class_labels, lambda, anchor)?;
    Ok(ReadoutModel {
        weights,
        bias,
        ridge_lambda: lambda,
        feature_space: initial.feature_space,
        class_labels: initial.class_labels.clone(),
    })
}

/// Ridge refit anchored by `anchor_samples` pseudo-samples of `reference`.
///
/// The penalty is `anchor_samples · mean_r ‖(W − W_initial)·x_r + (b − b_initial)‖²`
/// over the reference features, so the pull is strongest along directions the
/// reference actually visits. The intercept is not shrunk by `lambda`.
pub fn fine_tune_on_reference(
    initial: &ReadoutModel,
    new_data: &LabeledFeatureSet,
    reference: &LabeledFeatureSet,
    lambda: f64,
    anchor_samples: f64,
) -> Result<ReadoutModel> {
    for set in [new_data, reference] {
        if set.space != initial.feature_space {
            return Err(Error::DimensionMismatch {
                what: "feature space",
                expected: initial.feature_space.dim(),
                found: set.space.dim(),
            });
        }
        check_finite(set)?;
    }
    if !(lambda >= 0.0 && lambda.is_finite()) || !(anchor_samples >= 0.0 && anchor_samples.is_finite()) {
        return Err(Error::invalid("fine tune", "lambda and anchor samples must be finite and nonnegative"));
    }
    if reference.is_empty() || new_data.is_empty() {
        return Err(Error::invalid("fine tune", "needs data and a nonempty reference"));
    }
    if new_data.labels.iter().any(|l| !initial.class_labels.contains(l)) {
        return Err(Error::invalid("fine tune", "label unknown to the initial model"));
    }
    let d = initial.weights.ncols();
    let k = initial.class_labels.len();
    let augment = |x: &DMatrix<f64>| DMatrix::from_fn(x.nrows(), d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
    let z = augment(&new_data.features);
    let zr = augment(&reference.features);
    let metric = (zr.transpose() * &zr) * (anchor_samples / reference.len() as f64);
    let mut theta0 = DMatrix::zeros(d + 1, k);
    theta0.view_mut((0, 0), (d, k)).copy_from(&initial.weights.transpose());
    theta0.row_mut(d).copy_from(&initial.bias.transpose());
    let y = one_hot(&new_data.labels, &initial.class_labels);
    let mut gram = z.transpose() * &z + &metric;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = z.transpose() * &y + metric * theta0;
    let theta = linalg::solve_spd(gram, &rhs)?;
    Ok(ReadoutModel {
        weights: theta.rows(0, d).transpose(),
        bias: theta.row(d).transpose(),
        ridge_lambda: lambda,
        feature_space: initial.feature_space,
        class_labels: initial.class_labels.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTimeline {
    pub round_times_h: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl AccuracyTimeline {
    /// First round time after which accuracy stays below `threshold` for the rest of the record.
    pub fn threshold_crossing(&self, threshold: f64) -> Option<f64> {
        let last_ok = self.accuracies.iter().rposition(|&a| a >= threshold);
        match last_ok {
            None => self.round_times_h.first().copied(),
            Some(i) if i + 1 < self.accuracies.len() => Some(self.round_times_h[i + 1]),
            Some(_) => None,
        }
    }

    /// Time spent above `threshold`: the crossing, or the whole horizon when there is none.
    pub fn time_above(&self, threshold: f64) -> f64 {
        self.threshold_crossing(threshold)
            .or_else(|| self.round_times_h.last().copied())
            .unwrap_or(0.0)
    }
}

/// Per-round accuracy of a fixed readout.
pub fn accuracy_timeline(
    model: &ReadoutModel,
    per_round: &[LabeledFeatureSet],
    round_times_h: &[f64],
) -> Result<AccuracyTimeline> {
    if per_round.len() != round_times_h.len() {
        return Err(Error::DimensionMismatch {
            what: "rounds",
            expected: round_times_h.len(),
            found: per_round.len(),
        });
    }
    if round_times_h.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("round times", "must be increasing"));
    }
    let accuracies = per_round
        .iter()
        .map(|d| if d.is_empty() { Ok(0.0) } else { evaluate(model, d) })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyTimeline {
        round_times_h: round_times_h.to_vec(),
        accuracies,
    })
}
