// SPDX-License-Identifier: Apache-2.0

//! Synthetic recordings with known ground truth, for validating the
//! diagnostics against analytic answers.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::substrate::SpikeTrainSet;

/// Population-count segments of a Galton-Watson process with Poisson(`sigma`) offspring.
///
/// Each segment starts from one ancestor and runs until extinction, in which
/// case the closing empty generation is included, or until `max_generations`
/// or a population above `max_size` is reached.
pub fn galton_watson_segments(
    sigma: f64,
    avalanches: usize,
    max_generations: usize,
    max_size: u32,
    rng: &mut Rng,
) -> Result<Vec<Vec<u32>>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("offspring mean", "must be positive and finite"));
    }
    if max_generations < 2 {
        return Err(Error::invalid("max generations", "must be at least 2"));
    }
    let mut out = Vec::with_capacity(avalanches);
    for _ in 0..avalanches {
        let mut seg = vec![1u32];
        let mut n = 1u32;
        while n > 0 && n <= max_size && seg.len() < max_generations {
            let offspring = Poisson::new(sigma * f64::from(n))
                .map_err(|_| Error::invalid("offspring mean", "invalid Poisson mean"))?;
            n = offspring.sample(rng) as u32;
            seg.push(n);
        }
        out.push(seg);
    }
    Ok(out)
}

/// Independent Bernoulli(`p`) series.
pub fn bernoulli_series(p: f64, len: usize, rng: &mut Rng) -> Vec<u8> {
    (0..len).map(|_| u8::from(rng.random::<f64>() < p)).collect()
}

fn poisson_times(rate_hz: f64, duration_ms: f64, rng: &mut Rng, out: &mut Vec<f64>) {
    if rate_hz <= 0.0 {
        return;
    }
    let mean_gap = 1000.0 / rate_hz;
    let mut t = 0.0;
    loop {
        t -= mean_gap * libm::log(1.0 - rng.random::<f64>());
        if t >= duration_ms {
            break;
        }
        out.push(t);
    }
}

/// Independent Poisson spike trains.
pub fn poisson_raster(channels: usize, duration_ms: f64, rate_hz: f64, rng: &mut Rng) -> Result<SpikeTrainSet> {
    let spikes = (0..channels)
        .map(|_| {
            let mut tr = Vec::new();
            poisson_times(rate_hz, duration_ms, rng, &mut tr);
            tr
        })
        .collect();
    SpikeTrainSet::new(duration_ms, spikes)
}

/// Periodic population bursts over independent background firing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstRasterSpec {
    pub channels: usize,
    pub duration_ms: f64,
    pub burst_rate_hz: f64,
    /// Every channel fires `spikes_per_burst` spikes within this many ms of each burst onset.
    pub burst_width_ms: f64,
    pub spikes_per_burst: usize,
    /// Per-channel Poisson rate outside bursts.
    pub interburst_rate_hz: f64,
}

impl BurstRasterSpec {
    pub fn new(burst_rate_hz: f64, interburst_rate_hz: f64) -> Self {
        BurstRasterSpec {
            channels: 128,
            duration_ms: 300_000.0,
            burst_rate_hz,
            burst_width_ms: 8.0,
            spikes_per_burst: 3,
            interburst_rate_hz,
        }
    }
}

/// Builds the raster; the first burst starts half a period in.
pub fn burst_raster(spec: &BurstRasterSpec, rng: &mut Rng) -> Result<SpikeTrainSet> {
    if !(spec.burst_rate_hz > 0.0) || !(spec.burst_width_ms > 0.0) {
        return Err(Error::invalid("burst raster", "rate and width must be positive"));
    }
    let period = 1000.0 / spec.burst_rate_hz;
    let mut spikes = Vec::with_capacity(spec.channels);
    for _ in 0..spec.channels {
        let mut tr = Vec::new();
        let mut onset = 0.5 * period;
        while onset + spec.burst_width_ms < spec.duration_ms {
            for _ in 0..spec.spikes_per_burst {
                tr.push(onset + spec.burst_width_ms * rng.random::<f64>());
            }
            onset += period;
        }
        poisson_times(spec.interburst_rate_hz, spec.duration_ms, rng, &mut tr);
        tr.sort_by(f64::total_cmp);
        tr.dedup();
        spikes.push(tr);
    }
    SpikeTrainSet::new(spec.duration_ms, spikes)
}
