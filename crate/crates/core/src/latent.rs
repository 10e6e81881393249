// SPDX-License-Identifier: Apache-2.0

//! Gaussian-process factor analysis.
//!
//! Observations `y_t = C x_t + d + e_t` with diagonal noise `R`; each latent
//! dimension is an independent GP with a squared-exponential kernel of unit
//! signal variance plus a small diagonal jitter. Fitting is EM over
//! equal-length segments: exact posterior E-step, closed-form `C`, `d`, `R`,
//! and a line-searched gradient step on each log-timescale that only accepts
//! improvements, so the marginal likelihood never decreases.
//!
//! The fitted latent frame is rotated so that the reported loading has
//! orthonormal columns (ordered by singular value), with each column's
//! largest-magnitude entry positive.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::substrate::FiringRateMatrix;

pub const DEFAULT_LATENT_DIM: usize = 3;
pub const GP_JITTER: f64 = 1e-6;
pub const INITIAL_TIMESCALE_MS: f64 = 100.0;
/// Noise variances are floored at this fraction of the channel variance.
pub const NOISE_FLOOR_FRACTION: f64 = 1e-6;
const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    /// Loading in the fitted (GP-independent) latent frame, channels × latent_dim.
    pub loading: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// Diagonal of the observation noise covariance.
    pub noise: DVector<f64>,
    pub timescales_ms: Vec<f64>,
    pub bin_width_ms: f64,
    /// Maps fitted-frame latents to the reported orthonormal frame.
    pub frame: DMatrix<f64>,
}

impl LatentModel {
    pub fn channel_count(&self) -> usize {
        self.loading.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.loading.ncols()
    }

    /// Loading of the reported frame; its columns are orthonormal.
    pub fn orthonormal_loading(&self) -> Result<DMatrix<f64>> {
        let inv = self
            .frame
            .clone()
            .try_inverse()
            .ok_or(Error::Numerical("singular latent frame"))?;
        Ok(&self.loading * inv)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = self.loading.shape();
        if q == 0 || q > p {
            return Err(Error::invalid("latent model", "need 0 < latent_dim <= channels"));
        }
        if self.offset.len() != p || self.noise.len() != p {
            return Err(Error::DimensionMismatch {
                what: "latent model",
                expected: p,
                found: self.offset.len().min(self.noise.len()),
            });
        }
        if self.timescales_ms.len() != q || self.frame.shape() != (q, q) {
            return Err(Error::DimensionMismatch {
                what: "latent model",
                expected: q,
                found: self.timescales_ms.len(),
            });
        }
        if self.noise.iter().any(|r| !(*r > 0.0)) || self.timescales_ms.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::invalid("latent model", "noise and timescales must be positive"));
        }
        if !(self.bin_width_ms > 0.0) {
            return Err(Error::invalid("latent model", "bin width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpfaParams {
    pub latent_dim: usize,
    pub max_iters: usize,
    /// Relative log-likelihood change below which EM stops.
    pub tol: f64,
    /// Bins per EM segment.
    pub segment_bins: usize,
}

impl Default for GpfaParams {
    fn default() -> Self {
        GpfaParams {
            latent_dim: DEFAULT_LATENT_DIM,
            max_iters: 100,
            tol: 1e-6,
            segment_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpfaFit {
    pub model: LatentModel,
    /// Marginal log-likelihood at the start of every EM iteration plus the final value.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

/// T × T squared-exponential Gram matrix on a regular grid.
fn se_kernel(t: usize, timescale_ms: f64, bin_ms: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |a, b| {
        let dt = (a as f64 - b as f64) * bin_ms;
        let k = libm::exp(-dt * dt / (2.0 * timescale_ms * timescale_ms));
        if a == b {
            k + GP_JITTER
        } else {
            k
        }
    })
}

/// Posterior quantities shared by all segments of length `t`.
struct Posterior {
    /// Joint posterior covariance, latent-major ordering (dim i, bin s) -> i * t + s.
    cov: DMatrix<f64>,
    log_det_prior: f64,
    log_det_precision: f64,
}

fn posterior(model: &LatentModel, t: usize) -> Result<Posterior> {
    let q = model.latent_dim();
    let m = weighted_gram(model);
    let mut prec = DMatrix::zeros(q * t, q * t);
    let mut log_det_prior = 0.0;
    for i in 0..q {
        let k = se_kernel(t, model.timescales_ms[i], model.bin_width_ms);
        let chol = Cholesky::new(k).ok_or(Error::Numerical("GP kernel not positive definite"))?;
        log_det_prior += 2.0 * chol.l().diagonal().iter().map(|v| libm::log(*v)).sum::<f64>();
        let kinv = chol.inverse();
        prec.view_mut((i * t, i * t), (t, t)).copy_from(&kinv);
    }
    for i in 0..q {
        for j in 0..q {
            for s in 0..t {
                prec[(i * t + s, j * t + s)] += m[(i, j)];
            }
        }
    }
    let chol = Cholesky::new(prec).ok_or(Error::Numerical("posterior precision not positive definite"))?;
    let log_det_precision = 2.0 * chol.l().diagonal().iter().map(|v| libm::log(*v)).sum::<f64>();
    Ok(Posterior {
        cov: chol.inverse(),
        log_det_prior,
        log_det_precision,
    })
}

/// Cᵀ R⁻¹ C
fn weighted_gram(model: &LatentModel) -> DMatrix<f64> {
    let mut cr = model.loading.clone();
    for (c, mut row) in cr.row_iter_mut().enumerate() {
        row /= model.noise[c];
    }
    model.loading.transpose() * cr
}

/// Posterior mean (t × q, fitted frame) and the data term of the log-likelihood.
fn segment_mean(model: &LatentModel, post: &Posterior, y: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (p, t) = y.shape();
    let q = model.latent_dim();
    let mut resid = y.clone();
    for c in 0..p {
        let d = model.offset[c];
        resid.row_mut(c).add_scalar_mut(-d);
    }
    let mut quad = 0.0;
    let mut scaled = resid.clone();
    for c in 0..p {
        let r = model.noise[c];
        for s in 0..t {
            quad += resid[(c, s)] * resid[(c, s)] / r;
            scaled[(c, s)] /= r;
        }
    }
    // b[(i, s)] = sum_c C[c, i] (y[c, s] - d[c]) / R[c]
    let b_qt = model.loading.transpose() * scaled;
    let b = DVector::from_fn(q * t, |k, _| b_qt[(k / t, k % t)]);
    let mu = &post.cov * &b;
    quad -= b.dot(&mu);
    let mean = DMatrix::from_fn(t, q, |s, i| mu[i * t + s]);
    (mean, quad)
}

fn log_det_noise(model: &LatentModel) -> f64 {
    model.noise.iter().map(|r| libm::log(*r)).sum()
}

/// Splits the rate matrix into consecutive full segments of `len` bins.
fn segments(rates: &DMatrix<f64>, len: usize) -> Vec<DMatrix<f64>> {
    (0..rates.ncols() / len)
        .map(|k| rates.columns(k * len, len).into_owned())
        .collect()
}

struct Stats {
    ll: f64,
    sum_x: DVector<f64>,
    sum_xx: DMatrix<f64>,
    sum_yx: DMatrix<f64>,
    /// Per latent dimension, Σ over segments of E[x_i x_iᵀ] (t × t).
    per_dim: Vec<DMatrix<f64>>,
}

fn e_step(model: &LatentModel, segs: &[DMatrix<f64>]) -> Result<Stats> {
    let p = model.channel_count();
    let q = model.latent_dim();
    let t = segs[0].ncols();
    let post = posterior(model, t)?;
    let mut stats = Stats {
        ll: 0.0,
        sum_x: DVector::zeros(q),
        sum_xx: DMatrix::zeros(q, q),
        sum_yx: DMatrix::zeros(p, q),
        per_dim: vec![DMatrix::zeros(t, t); q],
    };
    let const_term = (p * t) as f64 * LOG_2PI + t as f64 * log_det_noise(model) + post.log_det_prior + post.log_det_precision;
    let n_seg = segs.len() as f64;
    for y in segs {
        let (mean, quad) = segment_mean(model, &post, y);
        stats.ll += -0.5 * (const_term + quad);
        for s in 0..t {
            let xs = mean.row(s).transpose();
            stats.sum_x += &xs;
            stats.sum_xx += &xs * xs.transpose();
            stats.sum_yx += y.column(s) * xs.transpose();
        }
        for i in 0..q {
            let mi = mean.column(i);
            stats.per_dim[i] += mi * mi.transpose();
        }
    }
    for i in 0..q {
        for j in 0..q {
            let mut tr = 0.0;
            for s in 0..t {
                tr += post.cov[(i * t + s, j * t + s)];
            }
            stats.sum_xx[(i, j)] += n_seg * tr;
        }
        stats.per_dim[i] += post.cov.view((i * t, i * t), (t, t)) * n_seg;
    }
    Ok(stats)
}

/// Expected log GP prior of one latent dimension (up to constants).
fn timescale_objective(tau: f64, t: usize, bin_ms: f64, n_seg: f64, second_moment: &DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(se_kernel(t, tau, bin_ms))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| libm::log(*v)).sum::<f64>();
    let tr = (chol.inverse() * second_moment).trace();
    Some(-0.5 * n_seg * log_det - 0.5 * tr)
}

fn update_timescale(tau: f64, t: usize, bin_ms: f64, n_seg: f64, second_moment: &DMatrix<f64>) -> f64 {
    let Some(mut best) = timescale_objective(tau, t, bin_ms, n_seg, second_moment) else {
        return tau;
    };
    let mut log_tau = libm::log(tau);
    let mut step = 0.5;
    for _ in 0..20 {
        let h = 1e-4;
        let up = timescale_objective(libm::exp(log_tau + h), t, bin_ms, n_seg, second_moment);
        let dn = timescale_objective(libm::exp(log_tau - h), t, bin_ms, n_seg, second_moment);
        let (Some(up), Some(dn)) = (up, dn) else { break };
        let grad = (up - dn) / (2.0 * h);
        if grad == 0.0 || !grad.is_finite() {
            break;
        }
        let dir = grad.signum();
        let mut moved = false;
        while step > 1e-4 {
            let cand = (log_tau + dir * step).clamp(libm::log(bin_ms * 0.1), libm::log(bin_ms * 1e3));
            match timescale_objective(libm::exp(cand), t, bin_ms, n_seg, second_moment) {
                Some(v) if v > best => {
                    best = v;
                    log_tau = cand;
                    moved = true;
                    step *= 1.5;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !moved {
            break;
        }
    }
    libm::exp(log_tau)
}

fn channel_moments(data: &[DMatrix<f64>]) -> (DVector<f64>, DMatrix<f64>, f64) {
    let p = data[0].nrows();
    let mut sum = DVector::zeros(p);
    let mut n = 0.0;
    for y in data {
        for s in 0..y.ncols() {
            sum += y.column(s);
            n += 1.0;
        }
    }
    let mean = sum / n;
    let mut cov = DMatrix::zeros(p, p);
    for y in data {
        for s in 0..y.ncols() {
            let r = y.column(s) - &mean;
            cov += &r * r.transpose();
        }
    }
    (mean, cov / n, n)
}

fn fix_column_signs(loading: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = vec![1.0; loading.ncols()];
    for (k, mut col) in loading.column_iter_mut().enumerate() {
        let mut best = 0;
        for c in 0..col.len() {
            if libm::fabs(col[c]) > libm::fabs(col[best]) {
                best = c;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
            signs[k] = -1.0;
        }
    }
    signs
}

/// Fits GPFA to a single recording split into `segment_bins`-long segments.
pub fn fit_gpfa(rates: &FiringRateMatrix, params: &GpfaParams) -> Result<GpfaFit> {
    if params.segment_bins == 0 {
        return Err(Error::invalid("GPFA", "segment length must be positive"));
    }
    let segs = segments(&rates.values, params.segment_bins);
    fit_gpfa_segments(&segs, rates.bin_width_ms, params)
}

/// Fits GPFA to equal-length trials (channels × bins each).
pub fn fit_gpfa_segments(trials: &[DMatrix<f64>], bin_width_ms: f64, params: &GpfaParams) -> Result<GpfaFit> {
    let q = params.latent_dim;
    let Some(first) = trials.first() else {
        return Err(Error::invalid("GPFA", "needs at least one full segment"));
    };
    let (p, t) = first.shape();
    if q == 0 || q > p {
        return Err(Error::invalid("GPFA", "latent_dim must lie in 1..=channels"));
    }
    if t == 0 || trials.iter().any(|y| y.shape() != (p, t)) {
        return Err(Error::invalid("GPFA", "trials must share shape"));
    }
    if trials.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("GPFA", "rates must be finite"));
    }
    if !(bin_width_ms > 0.0) {
        return Err(Error::invalid("GPFA", "bin width must be positive"));
    }
    let (mean, cov, n) = channel_moments(trials);
    if n <= q as f64 {
        return Err(Error::invalid("GPFA", "too few bins for the latent dimension"));
    }
    let var = cov.diagonal();
    let mean_var = var.mean();
    if !(mean_var > 0.0) {
        return Err(Error::NotComputable("GPFA on constant data"));
    }
    let floor: DVector<f64> = var.map(|v| (NOISE_FLOOR_FRACTION * v).max(NOISE_FLOOR_FRACTION * 1e-3 * mean_var));

    // Factor-analysis style initialization from the leading principal components.
    let (evals, evecs) = linalg::symmetric_eigen_sorted(cov.clone());
    let resid_var = if p > q {
        evals[q..].iter().map(|v| v.max(0.0)).sum::<f64>() / (p - q) as f64
    } else {
        0.0
    };
    let mut loading = DMatrix::from_fn(p, q, |c, k| evecs[(c, k)] * libm::sqrt((evals[k] - resid_var).max(1e-3 * mean_var)));
    fix_column_signs(&mut loading);
    let cc = &loading * loading.transpose();
    let noise = DVector::from_fn(p, |c, _| (cov[(c, c)] - cc[(c, c)]).max(floor[c]).max(0.1 * var[c]).max(floor[c]));
    let mut model = LatentModel {
        loading,
        offset: mean,
        noise,
        timescales_ms: vec![INITIAL_TIMESCALE_MS; q],
        bin_width_ms,
        frame: DMatrix::identity(q, q),
    };

    let sum_yy: DVector<f64> = {
        let mut s = DVector::zeros(p);
        for y in trials {
            for c in 0..p {
                s[c] += y.row(c).iter().map(|v| v * v).sum::<f64>();
            }
        }
        s
    };
    let sum_y: DVector<f64> = {
        let mut s = DVector::zeros(p);
        for y in trials {
            for c in 0..p {
                s[c] += y.row(c).sum();
            }
        }
        s
    };

    let n_seg = trials.len() as f64;
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        let stats = e_step(&model, trials)?;
        if !stats.ll.is_finite() {
            return Err(Error::Numerical("non-finite GPFA log-likelihood"));
        }
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            debug_assert!(stats.ll >= prev - 1e-8 * prev.abs().max(1.0), "EM decreased the likelihood");
            if (stats.ll - prev).abs() <= params.tol * prev.abs().max(1.0) {
                history.push(stats.ll);
                break;
            }
        }
        history.push(stats.ll);
        iterations += 1;

        // [C d] A = B with A = [[Sxx, Sx], [Sxᵀ, n]], B = [Syx, Sy].
        let mut a = DMatrix::zeros(q + 1, q + 1);
        a.view_mut((0, 0), (q, q)).copy_from(&stats.sum_xx);
        a.view_mut((0, q), (q, 1)).copy_from(&stats.sum_x);
        a.view_mut((q, 0), (1, q)).copy_from(&stats.sum_x.transpose());
        a[(q, q)] = n;
        let mut b = DMatrix::zeros(p, q + 1);
        b.view_mut((0, 0), (p, q)).copy_from(&stats.sum_yx);
        b.set_column(q, &sum_y);
        let cd_t = linalg::solve_spd(a, &b.transpose())?;
        let cd = cd_t.transpose();
        for c in 0..p {
            let r = (sum_yy[c] - cd.row(c).dot(&b.row(c))) / n;
            model.noise[c] = r.max(floor[c]);
        }
        model.loading = cd.columns(0, q).into_owned();
        model.offset = cd.column(q).into_owned();
        for i in 0..q {
            model.timescales_ms[i] = update_timescale(model.timescales_ms[i], t, bin_width_ms, n_seg, &stats.per_dim[i]);
        }
    }
    if history.len() == iterations {
        history.push(e_step(&model, trials)?.ll);
    }
    model.frame = orthonormal_frame(&model.loading);
    Ok(GpfaFit {
        model,
        log_likelihood: history,
        iterations,
    })
}

/// `frame` such that `loading · frame⁻¹` has orthonormal, sign-fixed columns.
fn orthonormal_frame(loading: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = loading.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let q = loading.ncols();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut u_sorted = DMatrix::from_fn(loading.nrows(), q, |r, k| u[(r, order[k])]);
    let signs = fix_column_signs(&mut u_sorted);
    DMatrix::from_fn(q, q, |k, j| signs[k] * svd.singular_values[order[k]] * vt[(order[k], j)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub times_ms: Vec<f64>,
    /// bins × latent_dim, reported frame
    pub states: DMatrix<f64>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl LatentTrajectory {
    pub fn len(&self) -> usize {
        self.times_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ms.is_empty()
    }
}

fn check_channels(model: &LatentModel, p: usize) -> Result<()> {
    model.validate()?;
    if p != model.channel_count() {
        return Err(Error::DimensionMismatch {
            what: "latent model channels",
            expected: model.channel_count(),
            found: p,
        });
    }
    Ok(())
}

/// Posterior means (bins × latent_dim, reported frame) of a channels × bins block.
pub fn infer_states(model: &LatentModel, rates: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_channels(model, rates.nrows())?;
    if rates.ncols() == 0 {
        return Ok(DMatrix::zeros(0, model.latent_dim()));
    }
    let post = posterior(model, rates.ncols())?;
    let (mean, _) = segment_mean(model, &post, rates);
    Ok(mean * model.frame.transpose())
}

/// Exact joint GP posterior over all bins of `rates`.
pub fn infer_trajectory(model: &LatentModel, rates: &FiringRateMatrix) -> Result<LatentTrajectory> {
    check_channels(model, rates.channel_count())?;
    let t = rates.bin_count();
    let q = model.latent_dim();
    if t == 0 {
        return Ok(LatentTrajectory {
            times_ms: Vec::new(),
            states: DMatrix::zeros(0, q),
            covariances: Vec::new(),
        });
    }
    let post = posterior(model, t)?;
    let (mean, _) = segment_mean(model, &post, &rates.values);
    let states = mean * model.frame.transpose();
    let covariances = (0..t)
        .map(|s| {
            let raw = DMatrix::from_fn(q, q, |i, j| post.cov[(i * t + s, j * t + s)]);
            let c = &model.frame * raw * model.frame.transpose();
            (&c + c.transpose()) * 0.5
        })
        .collect();
    Ok(LatentTrajectory {
        times_ms: (0..t).map(|s| rates.t0_ms + (s as f64 + 0.5) * rates.bin_width_ms).collect(),
        states,
        covariances,
    })
}

/// Axis-aligned grid over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    /// Grid spanning the bounding box of the trajectories (expanded by 5 %).
    pub fn covering(trajectories: &[LatentTrajectory], cells_per_dim: usize) -> Result<Self> {
        let q = trajectories
            .first()
            .map(|t| t.states.ncols())
            .ok_or_else(|| Error::invalid("grid", "needs a trajectory"))?;
        let mut min = vec![f64::INFINITY; q];
        let mut max = vec![f64::NEG_INFINITY; q];
        for tr in trajectories {
            for row in tr.states.row_iter() {
                for k in 0..q {
                    min[k] = min[k].min(row[k]);
                    max[k] = max[k].max(row[k]);
                }
            }
        }
        for k in 0..q {
            let pad = 0.05 * (max[k] - min[k]).max(1e-9);
            min[k] -= pad;
            max[k] += pad;
        }
        Ok(GridSpec {
            min,
            max,
            cells: vec![cells_per_dim; q],
        })
    }

    fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for k in (0..self.cells.len()).rev() {
            let width = (self.max[k] - self.min[k]) / self.cells[k] as f64;
            let f = (x[k] - self.min[k]) / width;
            if !(f >= 0.0) || f >= self.cells[k] as f64 {
                return None;
            }
            idx = idx * self.cells[k] + f as usize;
        }
        Some(idx)
    }

    /// Center of cell `idx`.
    pub fn cell_center(&self, mut idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cells.len()];
        for k in 0..self.cells.len() {
            let i = idx % self.cells[k];
            idx /= self.cells[k];
            let width = (self.max[k] - self.min[k]) / self.cells[k] as f64;
            out[k] = self.min[k] + (i as f64 + 0.5) * width;
        }
        out
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }
}

/// Mean latent velocity (units per second) in each grid cell; `None` where no sample fell.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: GridSpec,
    pub cells: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

pub fn velocity_field(trajectories: &[LatentTrajectory], grid: &GridSpec) -> Result<VelocityField> {
    let q = grid.cells.len();
    if grid.min.len() != q || grid.max.len() != q || grid.cells.contains(&0) {
        return Err(Error::invalid("grid", "inconsistent grid specification"));
    }
    if grid.min.iter().zip(&grid.max).any(|(a, b)| !(b > a)) {
        return Err(Error::invalid("grid", "max must exceed min"));
    }
    let n = grid.cell_count();
    let mut sums = vec![vec![0.0; q]; n];
    let mut counts = vec![0usize; n];
    for tr in trajectories {
        if tr.states.ncols() != q {
            return Err(Error::DimensionMismatch {
                what: "trajectory dimension",
                expected: q,
                found: tr.states.ncols(),
            });
        }
        for s in 1..tr.len() {
            let dt = (tr.times_ms[s] - tr.times_ms[s - 1]) / 1000.0;
            if !(dt > 0.0) {
                continue;
            }
            let mid: Vec<f64> = (0..q)
                .map(|k| 0.5 * (tr.states[(s, k)] + tr.states[(s - 1, k)]))
                .collect();
            if let Some(cell) = grid.cell_of(&mid) {
                for k in 0..q {
                    sums[cell][k] += (tr.states[(s, k)] - tr.states[(s - 1, k)]) / dt;
                }
                counts[cell] += 1;
            }
        }
    }
    let cells = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    Ok(VelocityField {
        grid: grid.clone(),
        cells,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttractorSource {
    Spontaneous,
    Evoked,
}

/// How sample times map to cycle phase.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseReference {
    /// Fixed period from an origin (e.g. window onsets or the modulation).
    Periodic { origin_ms: f64, period_ms: f64 },
    /// Phase advances linearly between consecutive event times (e.g. burst onsets).
    Events(Vec<f64>),
}

impl PhaseReference {
    fn phase(&self, t: f64) -> Option<f64> {
        match self {
            PhaseReference::Periodic { origin_ms, period_ms } => {
                let r = libm::fmod(t - origin_ms, *period_ms);
                Some(if r < 0.0 { r + period_ms } else { r } / period_ms)
            }
            PhaseReference::Events(ev) => {
                let i = ev.partition_point(|&e| e <= t);
                if i == 0 || i == ev.len() {
                    return None;
                }
                Some((t - ev[i - 1]) / (ev[i] - ev[i - 1]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttractorMode {
    PointCloud,
    Cycle { reference: PhaseReference, phase_bins: usize },
}

/// Minimum share of latent variance explained by the phase-bin means for a cycle to count as detected.
pub const CYCLE_MIN_EXPLAINED: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorModel {
    /// n_points × latent_dim
    pub point_cloud: DMatrix<f64>,
    /// Phase-ordered bin means (phase_bins × latent_dim).
    pub cycle: Option<DMatrix<f64>>,
    pub source: AttractorSource,
    pub trajectory_count: usize,
    /// Cycle requested but no periodicity detected.
    pub fallback: bool,
    /// Share of variance explained by the phase-bin means (cycle mode only).
    pub cycle_explained: Option<f64>,
    /// Per (label, phase bin) means of labeled evoked trajectories, sorted by key.
    pub labeled: Vec<LabeledBin>,
    /// Phase bins per labeled trajectory; zero when `labeled` is empty.
    pub labeled_phase_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBin {
    pub label: u8,
    pub phase_bin: usize,
    pub mean: DVector<f64>,
    pub count: usize,
}

/// A trajectory evoked by one labeled pattern window.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub label: u8,
    pub trajectory: LatentTrajectory,
}

/// Means of labeled trajectories per (label, phase bin).
///
/// Sample `s` of a trajectory of length `L` falls in phase bin `s · phase_bins / L`.
pub fn labeled_bin_means(trajectories: &[LabeledTrajectory], phase_bins: usize) -> Result<Vec<LabeledBin>> {
    if phase_bins == 0 {
        return Err(Error::invalid("phase bins", "must be positive"));
    }
    let q = trajectories.first().map(|t| t.trajectory.states.ncols()).unwrap_or(0);
    let mut bins: Vec<LabeledBin> = Vec::new();
    for lt in trajectories {
        let states = &lt.trajectory.states;
        if states.ncols() != q {
            return Err(Error::DimensionMismatch {
                what: "trajectory dimension",
                expected: q,
                found: states.ncols(),
            });
        }
        let len = states.nrows();
        for s in 0..len {
            let phase_bin = s * phase_bins / len;
            let key = (lt.label, phase_bin);
            let idx = match bins.binary_search_by(|b| (b.label, b.phase_bin).cmp(&key)) {
                Ok(i) => i,
                Err(i) => {
                    bins.insert(
                        i,
                        LabeledBin {
                            label: lt.label,
                            phase_bin,
                            mean: DVector::zeros(q),
                            count: 0,
                        },
                    );
                    i
                }
            };
            bins[idx].mean += states.row(s).transpose();
            bins[idx].count += 1;
        }
    }
    for b in &mut bins {
        b.mean /= b.count as f64;
    }
    Ok(bins)
}

/// Evoked attractor: pooled point cloud plus (label, phase bin) structure.
pub fn estimate_evoked_attractor(trajectories: &[LabeledTrajectory], phase_bins: usize) -> Result<AttractorModel> {
    let plain: Vec<LatentTrajectory> = trajectories.iter().map(|t| t.trajectory.clone()).collect();
    let mut model = estimate_attractor(&plain, &AttractorMode::PointCloud, AttractorSource::Evoked)?;
    model.labeled = labeled_bin_means(trajectories, phase_bins)?;
    model.labeled_phase_bins = phase_bins;
    Ok(model)
}

/// Pools trajectories into a point cloud and, in cycle mode, phase-binned means.
pub fn estimate_attractor(
    trajectories: &[LatentTrajectory],
    mode: &AttractorMode,
    source: AttractorSource,
) -> Result<AttractorModel> {
    let Some(first) = trajectories.first() else {
        return Err(Error::invalid("attractor", "needs at least one trajectory"));
    };
    let q = first.states.ncols();
    let total: usize = trajectories.iter().map(LatentTrajectory::len).sum();
    let mut cloud = DMatrix::zeros(total, q);
    let mut r = 0;
    for tr in trajectories {
        if tr.states.ncols() != q {
            return Err(Error::DimensionMismatch {
                what: "trajectory dimension",
                expected: q,
                found: tr.states.ncols(),
            });
        }
        cloud.view_mut((r, 0), (tr.len(), q)).copy_from(&tr.states);
        r += tr.len();
    }
    let mut model = AttractorModel {
        point_cloud: cloud,
        cycle: None,
        source,
        trajectory_count: trajectories.len(),
        fallback: false,
        cycle_explained: None,
        labeled: Vec::new(),
        labeled_phase_bins: 0,
    };
    let AttractorMode::Cycle { reference, phase_bins } = mode else {
        return Ok(model);
    };
    if *phase_bins < 2 {
        return Err(Error::invalid("attractor", "cycle needs at least 2 phase bins"));
    }
    let mut sums = DMatrix::zeros(*phase_bins, q);
    let mut counts = vec![0usize; *phase_bins];
    let mut used = Vec::new();
    for tr in trajectories {
        for s in 0..tr.len() {
            if let Some(ph) = reference.phase(tr.times_ms[s]) {
                let b = ((ph * *phase_bins as f64) as usize).min(phase_bins - 1);
                let row = tr.states.row(s);
                let mut acc = sums.row_mut(b);
                acc += row;
                counts[b] += 1;
                used.push((b, s, tr));
            }
        }
    }
    let filled = counts.iter().all(|&c| c > 0);
    let explained = if filled && !used.is_empty() {
        for b in 0..*phase_bins {
            let mut row = sums.row_mut(b);
            row /= counts[b] as f64;
        }
        let n = used.len() as f64;
        let grand = DVector::from_fn(q, |k, _| used.iter().map(|(_, s, tr)| tr.states[(*s, k)]).sum::<f64>() / n);
        let mut total_ss = 0.0;
        let mut within = 0.0;
        for (b, s, tr) in &used {
            for k in 0..q {
                let x = tr.states[(*s, k)];
                total_ss += (x - grand[k]) * (x - grand[k]);
                within += (x - sums[(*b, k)]) * (x - sums[(*b, k)]);
            }
        }
        if total_ss > 0.0 {
            1.0 - within / total_ss
        } else {
            0.0
        }
    } else {
        0.0
    };
    model.cycle_explained = Some(explained);
    if filled && explained >= CYCLE_MIN_EXPLAINED {
        model.cycle = Some(sums);
    } else {
        model.fallback = true;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_symmetric_with_jitter() {
        let k = se_kernel(4, 100.0, 50.0);
        assert!((k[(0, 0)] - (1.0 + GP_JITTER)).abs() < 1e-15);
        assert_eq!(k[(0, 3)], k[(3, 0)]);
    }

    #[test]
    fn rejects_constant_data() {
        let rates = FiringRateMatrix {
            bin_width_ms: 100.0,
            t0_ms: 0.0,
            values: DMatrix::from_element(4, 40, 3.0),
        };
        let params = GpfaParams {
            latent_dim: 1,
            ..GpfaParams::default()
        };
        assert_eq!(fit_gpfa(&rates, &params).unwrap_err(), Error::NotComputable("GPFA on constant data"));
    }

    #[test]
    fn rejects_too_many_latents() {
        let rates = FiringRateMatrix {
            bin_width_ms: 100.0,
            t0_ms: 0.0,
            values: DMatrix::from_fn(2, 40, |i, j| (i * j) as f64),
        };
        assert!(fit_gpfa(&rates, &GpfaParams::default()).is_err());
    }
}
