use ccrc_core::latent::*;
use ccrc_core::seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

struct Synthetic {
    trials: Vec<DMatrix<f64>>,
    loading: DMatrix<f64>,
}

fn gaussian(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Trials drawn from the GPFA generative model.
fn synthetic(rng: &mut seed::Rng, p: usize, q: usize, t: usize, trials: usize, noise_sd: f64) -> Synthetic {
    let bin = 50.0;
    let loading = DMatrix::from_fn(p, q, |_, _| gaussian(rng));
    let offset = DVector::from_fn(p, |_, _| 5.0 + rng.random::<f64>());
    let factors: Vec<DMatrix<f64>> = (0..q)
        .map(|i| {
            let tau = 100.0 + 150.0 * i as f64;
            let k = DMatrix::from_fn(t, t, |a, b| {
                let dt = (a as f64 - b as f64) * bin;
                (-dt * dt / (2.0 * tau * tau)).exp() + if a == b { 1e-6 } else { 0.0 }
            });
            k.cholesky().unwrap().l()
        })
        .collect();
    let trials = (0..trials)
        .map(|_| {
            let x = DMatrix::from_fn(q, t, |i, _| i as f64 * 0.0);
            let mut x = x;
            for i in 0..q {
                let z = DVector::from_fn(t, |_, _| gaussian(rng));
                x.set_row(i, &(&factors[i] * z).transpose());
            }
            let mut y = &loading * x;
            for c in 0..p {
                for s in 0..t {
                    y[(c, s)] += offset[c] + noise_sd * gaussian(rng);
                }
            }
            y
        })
        .collect();
    Synthetic { trials, loading }
}

/// Largest principal angle (degrees) between the column spans of `a` and `b`.
fn max_principal_angle_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = (qa.transpose() * qb).singular_values();
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smallest.acos().to_degrees()
}

#[test]
fn em_log_likelihood_is_monotone() {
    for case in 0..20u64 {
        let mut rng = seed::rng(seed::derive_indexed(1, "gpfa-ll", case));
        let p = rng.random_range(5..=12);
        let q = rng.random_range(1..=3);
        let sd = 0.3 + rng.random::<f64>();
        let data = synthetic(&mut rng, p, q, 12, 15, sd);
        let params = GpfaParams { latent_dim: q, max_iters: 40, tol: 0.0, segment_bins: 12 };
        let fit = fit_gpfa_segments(&data.trials, 50.0, &params).unwrap();
        assert!(fit.log_likelihood.len() >= 2);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "case {case}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn recovers_known_loadings_at_high_snr() {
    let mut rng = seed::rng(77);
    let data = synthetic(&mut rng, 20, 3, 20, 40, 0.05);
    let params = GpfaParams { latent_dim: 3, max_iters: 100, tol: 1e-8, segment_bins: 20 };
    let fit = fit_gpfa_segments(&data.trials, 50.0, &params).unwrap();
    let angle = max_principal_angle_deg(&data.loading, &fit.model.loading);
    assert!(angle < 5.0, "max principal angle {angle}");
    let ortho = fit.model.orthonormal_loading().unwrap();
    let gram = ortho.transpose() * &ortho;
    assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-8);
    // Timescales come out in the generative range.
    for tau in &fit.model.timescales_ms {
        assert!(*tau > 50.0 && *tau < 600.0, "{tau}");
    }
}

#[test]
fn inference_matches_between_entry_points() {
    let mut rng = seed::rng(5);
    let data = synthetic(&mut rng, 8, 2, 10, 20, 0.2);
    let params = GpfaParams { latent_dim: 2, max_iters: 20, tol: 1e-6, segment_bins: 10 };
    let model = fit_gpfa_segments(&data.trials, 50.0, &params).unwrap().model;
    let rates = ccrc_core::substrate::FiringRateMatrix { bin_width_ms: 50.0, t0_ms: 1000.0, values: data.trials[0].clone() };
    let traj = infer_trajectory(&model, &rates).unwrap();
    let states = infer_states(&model, &data.trials[0]).unwrap();
    assert!((&traj.states - &states).norm() < 1e-10);
    assert_eq!(traj.times_ms[0], 1025.0);
    assert_eq!(traj.covariances.len(), 10);
}

fn circle(n: usize, period_ms: f64, bin_ms: f64, radius: f64, phase0: f64) -> LatentTrajectory {
    let times: Vec<f64> = (0..n).map(|s| (s as f64 + 0.5) * bin_ms).collect();
    let states = DMatrix::from_fn(n, 2, |s, k| {
        let a = phase0 + 2.0 * std::f64::consts::PI * times[s] / period_ms;
        radius * if k == 0 { a.cos() } else { a.sin() }
    });
    LatentTrajectory { times_ms: times, states, covariances: vec![DMatrix::identity(2, 2); n] }
}

#[test]
fn velocity_field_of_a_circle_is_tangential() {
    let tr = circle(400, 1000.0, 10.0, 2.0, 0.0);
    let grid = GridSpec::covering(std::slice::from_ref(&tr), 8).unwrap();
    let field = velocity_field(&[tr], &grid).unwrap();
    let speed = 2.0 * std::f64::consts::PI * 2.0; // radius · ω in units per second
    let mut checked = 0;
    for (idx, cell) in field.cells.iter().enumerate() {
        let Some(v) = cell else { continue };
        let c = grid.cell_center(idx);
        let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
        if r < 1.0 {
            continue;
        }
        let radial = (v[0] * c[0] + v[1] * c[1]) / r;
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!(radial.abs() < 0.35 * norm, "cell {idx}: radial {radial} norm {norm}");
        assert!((norm - speed).abs() < 0.05 * speed, "cell {idx}: speed {norm}");
        // Counter-clockwise rotation.
        assert!(c[0] * v[1] - c[1] * v[0] > 0.0);
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn cycle_attractor_on_a_circle() {
    let trs: Vec<LatentTrajectory> = (0..5).map(|k| circle(100, 1000.0, 50.0, 1.0, 0.0).shifted(k as f64 * 5000.0)).collect();
    let mode = AttractorMode::Cycle { reference: PhaseReference::Periodic { origin_ms: 0.0, period_ms: 1000.0 }, phase_bins: 10 };
    let att = estimate_attractor(&trs, &mode, AttractorSource::Spontaneous).unwrap();
    assert!(!att.fallback);
    assert!(att.cycle_explained.unwrap() > 0.9);
    let cycle = att.cycle.unwrap();
    for b in 0..10 {
        let r = (cycle[(b, 0)].powi(2) + cycle[(b, 1)].powi(2)).sqrt();
        assert!((r - 1.0).abs() < 0.1);
    }
    assert_eq!(att.point_cloud.nrows(), 500);
}

#[test]
fn aperiodic_cloud_falls_back() {
    let mut rng = seed::rng(3);
    let n = 400;
    let tr = LatentTrajectory {
        times_ms: (0..n).map(|s| s as f64 * 37.0).collect(),
        states: DMatrix::from_fn(n, 3, |_, _| gaussian(&mut rng)),
        covariances: vec![DMatrix::identity(3, 3); n],
    };
    let mode = AttractorMode::Cycle { reference: PhaseReference::Periodic { origin_ms: 0.0, period_ms: 1000.0 }, phase_bins: 8 };
    let att = estimate_attractor(&[tr], &mode, AttractorSource::Spontaneous).unwrap();
    assert!(att.fallback);
    assert!(att.cycle.is_none());
}

trait Shift {
    fn shifted(self, dt: f64) -> Self;
}

impl Shift for LatentTrajectory {
    fn shifted(mut self, dt: f64) -> Self {
        self.times_ms.iter_mut().for_each(|t| *t += dt);
        self
    }
}
