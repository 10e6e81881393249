use ccrc_core::latent::*;
use ccrc_core::readout::*;
use ccrc_core::seed;
use ccrc_core::transplant::*;
use nalgebra::{DMatrix, DVector, Rotation3};
use proptest::prelude::*;
use rand::Rng as _;

fn random_points(rng: &mut seed::Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() * 4.0 - 2.0)
}

fn affine(points: &DMatrix<f64>, a: &DMatrix<f64>, t: &DVector<f64>) -> DMatrix<f64> {
    let mut out = points * a.transpose();
    for mut row in out.row_iter_mut() {
        row += t.transpose();
    }
    out
}

#[test]
fn identity_alignment() {
    let s = random_points(&mut seed::rng(1), 30, 3);
    let t = fit_alignment(&s, &s, 0.0).unwrap();
    assert!((&t.linear - DMatrix::identity(3, 3)).norm() < 1e-10);
    assert!(t.translation.norm() < 1e-10);
    assert!(t.fit_residual < 1e-10);
}

#[test]
fn recovers_an_exact_affine_map() {
    let mut rng = seed::rng(2);
    let s = random_points(&mut rng, 40, 3);
    let a = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
    let b = DVector::from_fn(4, |_, _| rng.random::<f64>());
    let e = affine(&s, &a, &b);
    let t = fit_alignment(&s, &e, 0.0).unwrap();
    assert!((&t.linear - &a).norm() < 1e-9);
    assert!((&t.translation - &b).norm() < 1e-9);
    assert_eq!((t.expert_dim(), t.student_dim(), t.probe_count), (4, 3, 40));
}

#[test]
fn recovers_a_rotation() {
    let s = random_points(&mut seed::rng(3), 25, 3);
    let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
    let rm = DMatrix::from_fn(3, 3, |i, j| r.matrix()[(i, j)]);
    let e = affine(&s, &rm, &DVector::from_vec(vec![1.0, -2.0, 0.5]));
    let t = fit_alignment(&s, &e, 0.0).unwrap();
    assert!((&t.linear - &rm).norm() < 1e-9);
}

#[test]
fn ridge_matches_closed_form() {
    let mut rng = seed::rng(4);
    let s = random_points(&mut rng, 20, 3);
    let e = random_points(&mut rng, 20, 2);
    let lambda = 0.7;
    let t = fit_alignment(&s, &e, lambda).unwrap();
    let sm = s.row_mean();
    let em = e.row_mean();
    let sc = DMatrix::from_fn(20, 3, |i, j| s[(i, j)] - sm[j]);
    let ec = DMatrix::from_fn(20, 2, |i, j| e[(i, j)] - em[j]);
    let lhs = sc.transpose() * &sc + DMatrix::identity(3, 3) * lambda;
    let expected = (lhs.try_inverse().unwrap() * sc.transpose() * ec).transpose();
    assert!((&t.linear - &expected).norm() < 1e-10);
}

#[test]
fn rejects_underdetermined_and_degenerate_fits() {
    let s = random_points(&mut seed::rng(5), 3, 3);
    assert!(fit_alignment(&s, &s, 0.1).is_err());
    let flat = DMatrix::from_fn(10, 3, |i, j| if j == 2 { 1.0 } else { i as f64 * (j + 1) as f64 });
    assert!(fit_alignment(&flat, &flat, 0.0).is_err());
    assert!(fit_alignment(&flat, &flat, 1e-3).is_ok());
}

fn latent_readout(rng: &mut seed::Rng, de: usize) -> ReadoutModel {
    ReadoutModel {
        weights: DMatrix::from_fn(4, de, |_, _| rng.random::<f64>() - 0.5),
        bias: DVector::from_fn(4, |_, _| rng.random::<f64>()),
        ridge_lambda: 1.0,
        feature_space: FeatureSpace::Latent(de),
        class_labels: vec![1, 2, 3, 4],
    }
}

#[test]
fn observed_space_readouts_cannot_be_transplanted() {
    let mut rng = seed::rng(6);
    let mut expert = latent_readout(&mut rng, 3);
    expert.feature_space = FeatureSpace::ObservedRates(3);
    let s = random_points(&mut rng, 10, 3);
    let t = fit_alignment(&s, &s, 0.0).unwrap();
    assert!(transplant_readout(&expert, &t).is_err());
}

fn labeled(label: u8, states: DMatrix<f64>) -> LabeledTrajectory {
    let n = states.nrows();
    LabeledTrajectory {
        label,
        trajectory: LatentTrajectory {
            times_ms: (0..n).map(|s| s as f64 * 100.0).collect(),
            covariances: vec![DMatrix::identity(states.ncols(), states.ncols()); n],
            states,
        },
    }
}

#[test]
fn correspondence_and_alignment_through_attractors() {
    let mut rng = seed::rng(7);
    let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.5 } else { 0.2 * (i as f64 - j as f64) });
    let b = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let mut expert_trajs = Vec::new();
    let mut student_trajs = Vec::new();
    for label in 1..=4u8 {
        for _ in 0..3 {
            let s = DMatrix::from_fn(6, 3, |k, j| (label as f64) * 0.3 * (j as f64 + 1.0) + k as f64 * 0.1 * (j as f64 - 1.0) + 0.01 * rng.random::<f64>());
            expert_trajs.push(labeled(label, affine(&s, &a, &b)));
            student_trajs.push(labeled(label, s));
        }
    }
    student_trajs.push(labeled(9, DMatrix::zeros(6, 3)));
    let attractor = estimate_evoked_attractor(&expert_trajs, 3).unwrap();
    let corr = correspond_points(&student_trajs, &attractor).unwrap();
    assert_eq!(corr.keys.len(), 12);
    assert_eq!(corr.skipped_labels, vec![9]);
    assert!(!corr.single_label);
    let t = fit_alignment(&corr.student_points, &corr.expert_points, 0.0).unwrap();
    assert!((&t.linear - &a).norm() < 1e-8);
    assert!((&t.translation - &b).norm() < 1e-8);

    let late = corr.from_phase(1).unwrap();
    assert_eq!(late.keys.len(), 8);
    assert!(late.keys.iter().all(|k| k.1 >= 1));
    assert_eq!(late.pairs_per_label, vec![(1, 2), (2, 2), (3, 2), (4, 2)]);
    for (i, k) in late.keys.iter().enumerate() {
        let j = corr.keys.iter().position(|c| c == k).unwrap();
        assert_eq!(late.student_points.row(i), corr.student_points.row(j));
    }
    assert!(corr.from_phase(3).is_err());
}

#[test]
fn correspondence_needs_labeled_structure() {
    let trajs = vec![labeled(1, DMatrix::zeros(4, 2))];
    let plain: Vec<LatentTrajectory> = trajs.iter().map(|t| t.trajectory.clone()).collect();
    let unlabeled = estimate_attractor(&plain, &AttractorMode::PointCloud, AttractorSource::Evoked).unwrap();
    assert!(correspond_points(&trajs, &unlabeled).is_err());
    let other = estimate_evoked_attractor(&[labeled(2, DMatrix::zeros(4, 2))], 2).unwrap();
    assert!(correspond_points(&trajs, &other).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transplanted_readout_composes(seed_value in 0u64..100_000) {
        let mut rng = seed::rng(seed_value);
        let s = random_points(&mut rng, 12, 3);
        let e = random_points(&mut rng, 12, 3);
        let t = fit_alignment(&s, &e, 0.1).unwrap();
        let expert = latent_readout(&mut rng, 3);
        let student = transplant_readout(&expert, &t).unwrap();
        let probe = random_points(&mut rng, 8, 3);
        let mapped = t.apply_rows(&probe).unwrap();
        for i in 0..8 {
            let x: Vec<f64> = probe.row(i).iter().copied().collect();
            let y: Vec<f64> = mapped.row(i).iter().copied().collect();
            let a = student.scores(&x).unwrap();
            let b = expert.scores(&y).unwrap();
            prop_assert!((a - b).norm() < 1e-9);
        }
        let rec = TransplantRecord::new("e".into(), "s".into(), &expert, t, String::new()).unwrap();
        prop_assert_eq!(rec.transplanted_readout, student);
    }

    #[test]
    fn residual_invariant_under_rigid_motion_of_expert(seed_value in 0u64..100_000, angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = seed::rng(seed_value);
        let s = random_points(&mut rng, 15, 3);
        let e = random_points(&mut rng, 15, 3);
        let r = Rotation3::from_euler_angles(angle, 0.5 * angle, -angle);
        let rm = DMatrix::from_fn(3, 3, |i, j| r.matrix()[(i, j)]);
        let moved = affine(&e, &rm, &DVector::from_vec(vec![3.0, -1.0, 0.2]));
        let a = fit_alignment(&s, &e, 0.5).unwrap();
        let b = fit_alignment(&s, &moved, 0.5).unwrap();
        prop_assert!((a.fit_residual - b.fit_residual).abs() < 1e-9);
    }
}
