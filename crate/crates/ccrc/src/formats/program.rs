// SPDX-License-Identifier: Apache-2.0

//! Stimulus program file: key/value header, then window and event tables.
//!
//! ```text
//! ccrc-program 1
//! span_ms=<u64>
//! anchor_ms=<u64>
//! reference_intensity=<real>
//! modulation.enabled=<bool>
//! modulation.shape=triangular
//! modulation.frequency_hz=<real>
//! modulation.duty_cycle=<real>
//! modulation.amplitude_fraction=<real>
//! modulation.lead_in_ms=<u64>
//! modulation.phase_offset_ms=<real>
//! [windows <count>]
//! onset_ms\tactive_ms\tlength_ms\tlabel
//! [events <count>]
//! onset_ms\tduration_ms\tintensity\tlabel     label is '-' for unlabeled pulses
//! ```

use std::fmt::Write as _;

use ccrc_core::encoding::{ModulationSpec, PatternWindow, Pulse, StimulusProgram, WaveShape};

use crate::error::Result;
use crate::text::{real, Cursor, KeyValues};

pub const MAGIC: &str = "ccrc-program";
pub const VERSION: u32 = 1;

pub fn write_modulation(out: &mut String, prefix: &str, m: &ModulationSpec) {
    let shape = match m.shape {
        WaveShape::Triangular => "triangular",
    };
    let _ = writeln!(out, "{prefix}enabled={}", m.enabled);
    let _ = writeln!(out, "{prefix}shape={shape}");
    let _ = writeln!(out, "{prefix}frequency_hz={}", real(m.frequency_hz));
    let _ = writeln!(out, "{prefix}duty_cycle={}", real(m.duty_cycle));
    let _ = writeln!(out, "{prefix}amplitude_fraction={}", real(m.amplitude_fraction));
    let _ = writeln!(out, "{prefix}lead_in_ms={}", m.lead_in_ms);
    let _ = writeln!(out, "{prefix}phase_offset_ms={}", real(m.phase_offset_ms));
}

/// Reads modulation keys under `prefix`, defaulting absent keys from `base`.
pub fn read_modulation(kv: &mut KeyValues, prefix: &str, base: ModulationSpec) -> Result<ModulationSpec> {
    let key = |k: &str| format!("{prefix}{k}");
    if let Some((line, shape)) = kv.raw(&key("shape")) {
        if shape != "triangular" {
            return Err(crate::error::Error::parse(
                "modulation",
                line,
                format!("unsupported shape '{shape}'"),
            ));
        }
    }
    Ok(ModulationSpec {
        shape: WaveShape::Triangular,
        enabled: kv.flag(&key("enabled"))?.unwrap_or(base.enabled),
        frequency_hz: kv.opt(&key("frequency_hz"))?.unwrap_or(base.frequency_hz),
        duty_cycle: kv.opt(&key("duty_cycle"))?.unwrap_or(base.duty_cycle),
        amplitude_fraction: kv.opt(&key("amplitude_fraction"))?.unwrap_or(base.amplitude_fraction),
        lead_in_ms: kv.opt(&key("lead_in_ms"))?.unwrap_or(base.lead_in_ms),
        phase_offset_ms: kv.opt(&key("phase_offset_ms"))?.unwrap_or(base.phase_offset_ms),
    })
}

pub fn to_text(p: &StimulusProgram) -> String {
    let mut out = String::with_capacity(32 * (p.events.len() + p.windows.len()) + 512);
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "span_ms={}", p.span_ms);
    let _ = writeln!(out, "anchor_ms={}", p.anchor_ms);
    let _ = writeln!(out, "reference_intensity={}", real(p.reference_intensity));
    write_modulation(&mut out, "modulation.", &p.modulation);
    let _ = writeln!(out, "[windows {}]", p.windows.len());
    for w in &p.windows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", w.onset_ms, w.active_ms, w.length_ms, w.label);
    }
    let _ = writeln!(out, "[events {}]", p.events.len());
    for e in &p.events {
        let label = e.label.map_or_else(|| "-".to_string(), |l| l.to_string());
        let _ = writeln!(out, "{}\t{}\t{}\t{label}", e.onset_ms, e.duration_ms, real(e.intensity));
    }
    out
}

fn section_count(cur: &mut Cursor<'_>, name: &str) -> Result<usize> {
    let line = cur.next_required(name)?;
    line.strip_prefix(&format!("[{name} "))
        .and_then(|r| r.strip_suffix(']'))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| cur.err(format!("expected '[{name} <count>]', found '{line}'")))
}

pub fn from_text(text: &str) -> Result<StimulusProgram> {
    let mut cur = Cursor::new("program file", text);
    cur.expect_magic(MAGIC, VERSION)?;
    let mut kv = cur.key_values()?;
    let span_ms = kv.req("span_ms")?;
    let anchor_ms = kv.req("anchor_ms")?;
    let reference_intensity = kv.req("reference_intensity")?;
    let modulation = read_modulation(&mut kv, "modulation.", ModulationSpec::disabled())?;
    kv.finish()?;

    let nw = section_count(&mut cur, "windows")?;
    let mut windows = Vec::with_capacity(nw);
    for _ in 0..nw {
        let line = cur.next_required("a window row")?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(cur.err("window rows have 4 fields"));
        }
        let bad = |_| cur.err(format!("bad window row '{line}'"));
        windows.push(PatternWindow {
            onset_ms: f[0].parse().map_err(bad)?,
            active_ms: f[1].parse().map_err(bad)?,
            length_ms: f[2].parse().map_err(bad)?,
            label: f[3].parse().map_err(bad)?,
        });
    }
    let ne = section_count(&mut cur, "events")?;
    let mut events = Vec::with_capacity(ne);
    for _ in 0..ne {
        let line = cur.next_required("an event row")?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(cur.err("event rows have 4 fields"));
        }
        let label = if f[3] == "-" {
            None
        } else {
            Some(f[3].parse().map_err(|_| cur.err(format!("bad label '{}'", f[3])))?)
        };
        events.push(Pulse {
            onset_ms: f[0].parse().map_err(|_| cur.err(format!("bad onset '{}'", f[0])))?,
            duration_ms: f[1].parse().map_err(|_| cur.err(format!("bad duration '{}'", f[1])))?,
            intensity: f[2].parse().map_err(|_| cur.err(format!("bad intensity '{}'", f[2])))?,
            label,
        });
    }
    if !cur.at_end() {
        return Err(cur.err("trailing content after event table"));
    }
    let program = StimulusProgram {
        events,
        windows,
        modulation,
        reference_intensity,
        anchor_ms,
        span_ms,
    };
    program.validate()?;
    Ok(program)
}
