// SPDX-License-Identifier: Apache-2.0

//! Columnar spike file.
//!
//! ```text
//! ccrc-spikes 1
//! channels=<n> duration_ms=<d>
//! <channel>\t<timestamp_ms>      one row per spike, sorted by (channel, time)
//! ```

use std::fmt::Write as _;

use ccrc_core::substrate::SpikeTrainSet;

use crate::error::Result;
use crate::text::{real, Cursor};

pub const MAGIC: &str = "ccrc-spikes";
pub const VERSION: u32 = 1;

pub fn to_text(spikes: &SpikeTrainSet) -> String {
    let mut out = String::with_capacity(16 * spikes.total_spikes() + 64);
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(
        out,
        "channels={} duration_ms={}",
        spikes.channel_count(),
        real(spikes.duration_ms())
    );
    for (c, train) in spikes.channels().iter().enumerate() {
        for &t in train {
            let _ = writeln!(out, "{c}\t{t:?}");
        }
    }
    out
}

pub fn from_text(text: &str) -> Result<SpikeTrainSet> {
    let mut cur = Cursor::new("spike file", text);
    cur.expect_magic(MAGIC, VERSION)?;
    let header = cur.next_required("the channels/duration header")?;
    let mut channels = None;
    let mut duration = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("channels", v)) => channels = v.parse::<usize>().ok(),
            Some(("duration_ms", v)) => duration = v.parse::<f64>().ok(),
            _ => return Err(cur.err(format!("unexpected header field '{field}'"))),
        }
    }
    let (Some(channels), Some(duration)) = (channels, duration) else {
        return Err(cur.err("header needs channels=<n> duration_ms=<d>"));
    };
    let mut trains: Vec<Vec<f64>> = vec![Vec::new(); channels];
    let mut last: Option<(usize, f64)> = None;
    while !cur.at_end() {
        let line = cur.next_required("a spike row")?;
        let (c, t) = line
            .split_once('\t')
            .ok_or_else(|| cur.err("expected <channel>\\t<timestamp_ms>"))?;
        let c: usize = c.parse().map_err(|_| cur.err(format!("bad channel '{c}'")))?;
        let t: f64 = t.parse().map_err(|_| cur.err(format!("bad timestamp '{t}'")))?;
        if c >= channels {
            return Err(cur.err(format!("channel {c} out of range")));
        }
        if let Some((lc, lt)) = last {
            if c < lc || (c == lc && t <= lt) {
                return Err(cur.err("rows must be strictly sorted by (channel, time)"));
            }
        }
        last = Some((c, t));
        trains[c].push(t);
    }
    Ok(SpikeTrainSet::new(duration, trains)?)
}
