use ccrc_core::diagnostics::*;
use ccrc_core::error::Error;
use ccrc_core::seed;
use ccrc_core::substrate::{ActivityType, SpikeTrainSet};
use ccrc_core::synthetic::*;
use proptest::prelude::*;

fn entropy_bits(p: f64) -> f64 {
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

#[test]
fn all_channels_every_bin_is_one_burst() {
    let spikes: Vec<Vec<f64>> = (0..16).map(|_| (0..100).map(|k| k as f64 * 10.0 + 1.0).collect()).collect();
    let set = SpikeTrainSet::new(1000.0, spikes).unwrap();
    let b = detect_bursts(&set, 10.0, 0.25).unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b.onsets_ms[0], 0.0);
    assert_eq!(b.offsets_ms[0], 1000.0);
    assert_eq!(b.spike_counts[0], 1600);
}

#[test]
fn sparse_poisson_has_no_bursts() {
    // P(>= 32 of 128 channels active in one 10 ms bin at 0.1 Hz) is astronomically small.
    let mut rng = seed::rng(11);
    let set = poisson_raster(128, 600_000.0, 0.1, &mut rng).unwrap();
    let b = detect_bursts(&set, BURST_BIN_MS, BURST_THRESHOLD_FRACTION).unwrap();
    assert!(b.is_empty());
}

#[test]
fn ten_synchronous_events_in_twenty_seconds() {
    let mut spec = BurstRasterSpec::new(0.5, 0.5);
    spec.duration_ms = 20_000.0;
    let set = burst_raster(&spec, &mut seed::rng(2)).unwrap();
    let b = detect_bursts(&set, BURST_BIN_MS, BURST_THRESHOLD_FRACTION).unwrap();
    assert_eq!(b.len(), 10);
    let rate = b.len() as f64 / 20.0;
    assert_eq!(rate, 0.5);
}

#[test]
fn branching_ratio_of_galton_watson_processes() {
    for sigma in [0.8f64, 1.0, 1.2] {
        let mut rng = seed::rng(seed::derive(5, "gw") ^ sigma.to_bits());
        let segs = galton_watson_segments(sigma, 20_000, 40, 2_000, &mut rng).unwrap();
        let est = branching_ratio_segments(segs.iter().map(Vec::as_slice)).unwrap();
        assert!((est - sigma).abs() <= 0.05, "sigma {sigma}: estimate {est}");
    }
}

#[test]
fn branching_ratio_closing_bin_counts_as_zero() {
    // 2 -> 4 -> 0: ratios 2 and 0.
    let r = branching_ratio_segments([[2u32, 4, 0].as_slice()]).unwrap();
    assert_eq!(r, 1.0);
    assert!(matches!(
        branching_ratio_segments([[0u32, 0, 0].as_slice()]),
        Err(Error::NotComputable(_))
    ));
}

#[test]
fn transfer_entropy_of_independent_series_is_small() {
    let mut rng = seed::rng(3);
    let x = bernoulli_series(0.5, 100_000, &mut rng);
    let y = bernoulli_series(0.5, 100_000, &mut rng);
    let te = transfer_entropy_binary(&x, &y, 1).unwrap();
    assert!(te < 0.01, "{te}");
}

#[test]
fn transfer_entropy_of_delayed_copy_is_source_entropy() {
    for p in [0.5, 0.2] {
        let mut rng = seed::rng(4);
        let x = bernoulli_series(p, 100_000, &mut rng);
        let mut y = vec![0u8; x.len()];
        y[1..].copy_from_slice(&x[..x.len() - 1]);
        let te = transfer_entropy_binary(&x, &y, 1).unwrap();
        let h = entropy_bits(p);
        assert!((te - h).abs() <= 0.05 * h, "p {p}: te {te} h {h}");
        // Nothing flows backwards in a pure delay of an i.i.d. source.
        assert!(transfer_entropy_binary(&y, &x, 1).unwrap() < 0.01);
    }
}

#[test]
fn mean_transfer_entropy_of_independent_channels_is_small() {
    let mut rng = seed::rng(9);
    let set = poisson_raster(8, 1_000_000.0, 20.0, &mut rng).unwrap();
    let te = mean_transfer_entropy(&set, TE_BIN_MS, 1).unwrap();
    assert!(te < 0.01, "{te}");
}

fn classify(rate: f64, interburst: f64, seed_value: u64) -> ActivityType {
    let set = burst_raster(&BurstRasterSpec::new(rate, interburst), &mut seed::rng(seed_value)).unwrap();
    categorize(&set).unwrap().type_label
}

#[test]
fn categorization_fixtures() {
    assert_eq!(classify(0.1, 2.0, 1), ActivityType::B);
    assert_eq!(classify(0.4, 1.0, 1), ActivityType::B);
    assert_eq!(classify(0.6, 1.0, 1), ActivityType::C);
    assert_eq!(classify(1.0, 1.0, 1), ActivityType::C);
    assert_eq!(classify(1.0, 0.0, 1), ActivityType::D);
    let a = poisson_raster(128, 300_000.0, 2.0, &mut seed::rng(1)).unwrap();
    assert_eq!(categorize(&a).unwrap().type_label, ActivityType::A);
}

#[test]
fn categorization_boundary() {
    assert_eq!(classify(0.49, 1.0, 2), ActivityType::B);
    assert_eq!(classify(0.51, 1.0, 2), ActivityType::C);
}

#[test]
fn categorization_needs_five_minutes() {
    let set = SpikeTrainSet::empty(4, 299_000.0);
    assert!(categorize(&set).is_err());
}

#[test]
fn kernel_rank_of_rank_two_rates() {
    use ccrc_core::substrate::FiringRateMatrix;
    let values = nalgebra::DMatrix::from_fn(10, 50, |i, t| (i as f64 + 1.0) * (t as f64).sin() + (i % 3) as f64 * (t as f64 * 0.3).cos());
    let rates = FiringRateMatrix { bin_width_ms: 100.0, t0_ms: 0.0, values };
    assert_eq!(kernel_rank(&rates, 1e-6).unwrap(), 2);
}

#[test]
fn spectral_radius_of_a_known_linear_system() {
    use ccrc_core::substrate::FiringRateMatrix;
    // Damped rotation with radius 0.9, driven by small noise.
    let mut rng = seed::rng(8);
    use rand::Rng as _;
    let (c, s) = (0.9 * 0.3f64.cos(), 0.9 * 0.3f64.sin());
    let mut x = [1.0f64, 0.0];
    let mut values = nalgebra::DMatrix::zeros(2, 5000);
    for t in 0..5000 {
        values[(0, t)] = x[0];
        values[(1, t)] = x[1];
        let e: [f64; 2] = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
        x = [c * x[0] - s * x[1] + e[0], s * x[0] + c * x[1] + e[1]];
    }
    let rates = FiringRateMatrix { bin_width_ms: 100.0, t0_ms: 0.0, values };
    let rho = spectral_radius(&rates).unwrap();
    assert!((rho - 0.9).abs() < 0.03, "{rho}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transfer_entropy_is_nonnegative(bits in proptest::collection::vec(0u8..2, 50..400), shift in 0usize..5) {
        let n = bits.len();
        let y: Vec<u8> = (0..n).map(|t| bits[(t + shift) % n] ^ (t % 3 == 0) as u8).collect();
        let te = transfer_entropy_binary(&bits, &y, 1).unwrap();
        prop_assert!(te >= 0.0);
    }

    #[test]
    fn burst_count_is_invariant_to_channel_order(rate in 0.2f64..2.0, seed_value in 0u64..1000) {
        let mut spec = BurstRasterSpec::new(rate, 1.0);
        spec.duration_ms = 20_000.0;
        spec.channels = 32;
        let set = burst_raster(&spec, &mut seed::rng(seed_value)).unwrap();
        let perm: Vec<usize> = (0..32).rev().collect();
        let a = detect_bursts(&set, BURST_BIN_MS, BURST_THRESHOLD_FRACTION).unwrap();
        let b = detect_bursts(&set.permute_channels(&perm).unwrap(), BURST_BIN_MS, BURST_THRESHOLD_FRACTION).unwrap();
        prop_assert_eq!(a, b);
    }
}
