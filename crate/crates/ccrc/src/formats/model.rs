// SPDX-License-Identifier: Apache-2.0

//! Shared model file: a versioned header followed by one or more objects.
//!
//! ```text
//! ccrc-model 1
//! [object <latent|readout|attractor|transplant>]
//! key=value ...
//! [matrix <name> <rows> <cols>]
//! <rows tab-separated lines>
//! ...
//! [end]
//! ```
//!
//! A transplant object embeds its student readout as a nested readout object
//! before its own `[end]`.

use std::fmt::Write as _;

use ccrc_core::latent::{AttractorModel, AttractorSource, LabeledBin, LatentModel};
use ccrc_core::readout::{FeatureSpace, ReadoutModel};
use ccrc_core::transplant::{AlignmentTransform, TransplantRecord};
use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::text::{real, reals, write_matrix, write_vector, Cursor};

pub const MAGIC: &str = "ccrc-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelObject {
    Latent(LatentModel),
    Readout(ReadoutModel),
    Attractor(AttractorModel),
    Transplant(TransplantRecord),
}

impl ModelObject {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelObject::Latent(_) => "latent",
            ModelObject::Readout(_) => "readout",
            ModelObject::Attractor(_) => "attractor",
            ModelObject::Transplant(_) => "transplant",
        }
    }
}

/// Everything stored in one model file, in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelFile {
    pub objects: Vec<ModelObject>,
}

impl ModelFile {
    pub fn latent(&self) -> Option<&LatentModel> {
        self.objects.iter().find_map(|o| match o {
            ModelObject::Latent(m) => Some(m),
            _ => None,
        })
    }

    pub fn readout(&self) -> Option<&ReadoutModel> {
        self.objects.iter().find_map(|o| match o {
            ModelObject::Readout(m) => Some(m),
            ModelObject::Transplant(t) => Some(&t.transplanted_readout),
            _ => None,
        })
    }

    pub fn attractor(&self) -> Option<&AttractorModel> {
        self.objects.iter().find_map(|o| match o {
            ModelObject::Attractor(m) => Some(m),
            _ => None,
        })
    }

    pub fn transplant(&self) -> Option<&TransplantRecord> {
        self.objects.iter().find_map(|o| match o {
            ModelObject::Transplant(m) => Some(m),
            _ => None,
        })
    }
}

/// Escapes backslashes and newlines so free text fits on one line.
pub fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

pub fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn to_text(file: &ModelFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    for o in &file.objects {
        write_object(&mut out, o);
    }
    out
}

fn write_object(out: &mut String, o: &ModelObject) {
    let _ = writeln!(out, "[object {}]", o.kind());
    match o {
        ModelObject::Latent(m) => {
            let _ = writeln!(out, "bin_width_ms={}", real(m.bin_width_ms));
            let _ = writeln!(out, "timescales_ms={}", list(&m.timescales_ms));
            write_matrix(out, "loading", &m.loading);
            write_vector(out, "offset", &m.offset);
            write_vector(out, "noise", &m.noise);
            write_matrix(out, "frame", &m.frame);
        }
        ModelObject::Readout(m) => write_readout_body(out, m),
        ModelObject::Attractor(m) => {
            let source = match m.source {
                AttractorSource::Spontaneous => "spontaneous",
                AttractorSource::Evoked => "evoked",
            };
            let _ = writeln!(out, "source={source}");
            let _ = writeln!(out, "trajectory_count={}", m.trajectory_count);
            let _ = writeln!(out, "fallback={}", m.fallback);
            let _ = writeln!(
                out,
                "cycle_explained={}",
                m.cycle_explained.map_or_else(|| "-".to_string(), real)
            );
            let _ = writeln!(out, "has_cycle={}", m.cycle.is_some());
            let _ = writeln!(out, "labeled_phase_bins={}", m.labeled_phase_bins);
            write_matrix(out, "point_cloud", &m.point_cloud);
            if let Some(c) = &m.cycle {
                write_matrix(out, "cycle", c);
            }
            let q = m.point_cloud.ncols();
            let _ = writeln!(out, "[labeled {} {q}]", m.labeled.len());
            for b in &m.labeled {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", b.label, b.phase_bin, b.count, reals(b.mean.iter().copied()));
            }
        }
        ModelObject::Transplant(t) => {
            let _ = writeln!(out, "expert_id={}", escape(&t.expert_id));
            let _ = writeln!(out, "student_id={}", escape(&t.student_id));
            let _ = writeln!(out, "provenance={}", escape(&t.provenance));
            let _ = writeln!(out, "ridge_lambda={}", real(t.transform.ridge_lambda));
            let _ = writeln!(out, "fit_residual={}", real(t.transform.fit_residual));
            let _ = writeln!(out, "probe_count={}", t.transform.probe_count);
            write_matrix(out, "linear", &t.transform.linear);
            write_vector(out, "translation", &t.transform.translation);
            write_object(out, &ModelObject::Readout(t.transplanted_readout.clone()));
        }
    }
    out.push_str("[end]\n");
}

fn write_readout_body(out: &mut String, m: &ReadoutModel) {
    let space = match m.feature_space {
        FeatureSpace::ObservedRates(d) => format!("observed:{d}"),
        FeatureSpace::Latent(d) => format!("latent:{d}"),
    };
    let labels: Vec<String> = m.class_labels.iter().map(u8::to_string).collect();
    let _ = writeln!(out, "feature_space={space}");
    let _ = writeln!(out, "ridge_lambda={}", real(m.ridge_lambda));
    let _ = writeln!(out, "class_labels={}", labels.join(","));
    write_matrix(out, "weights", &m.weights);
    write_vector(out, "bias", &m.bias);
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| real(*x)).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(cur: &Cursor<'_>, s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse().map_err(|_| cur.err(format!("bad list entry '{x}'"))))
        .collect()
}

pub fn from_text(text: &str) -> Result<ModelFile> {
    let mut cur = Cursor::new("model file", text);
    cur.expect_magic(MAGIC, VERSION)?;
    let mut objects = Vec::new();
    while !cur.at_end() {
        objects.push(read_object(&mut cur)?);
    }
    if objects.is_empty() {
        return Err(cur.err("model file holds no objects"));
    }
    Ok(ModelFile { objects })
}

fn read_object(cur: &mut Cursor<'_>) -> Result<ModelObject> {
    let header = cur.next_required("an object")?;
    let kind = header
        .strip_prefix("[object ")
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| cur.err(format!("expected '[object <kind>]', found '{header}'")))?;
    let obj = match kind {
        "latent" => {
            let mut kv = cur.key_values()?;
            let bin_width_ms = kv.req("bin_width_ms")?;
            let ts: String = kv.req("timescales_ms")?;
            kv.finish()?;
            let timescales_ms = parse_list(cur, &ts)?;
            let m = LatentModel {
                loading: cur.matrix("loading")?,
                offset: cur.vector("offset")?,
                noise: cur.vector("noise")?,
                frame: cur.matrix("frame")?,
                timescales_ms,
                bin_width_ms,
            };
            m.validate()?;
            ModelObject::Latent(m)
        }
        "readout" => ModelObject::Readout(read_readout_body(cur)?),
        "attractor" => {
            let mut kv = cur.key_values()?;
            let source = match kv.req::<String>("source")?.as_str() {
                "spontaneous" => AttractorSource::Spontaneous,
                "evoked" => AttractorSource::Evoked,
                s => return Err(cur.err(format!("unknown attractor source '{s}'"))),
            };
            let trajectory_count = kv.req("trajectory_count")?;
            let fallback = kv.flag("fallback")?.unwrap_or(false);
            let ce: String = kv.req("cycle_explained")?;
            let cycle_explained = if ce == "-" {
                None
            } else {
                Some(ce.parse().map_err(|_| cur.err("bad cycle_explained"))?)
            };
            let has_cycle = kv.flag("has_cycle")?.unwrap_or(false);
            let labeled_phase_bins = kv.req("labeled_phase_bins")?;
            kv.finish()?;
            let point_cloud = cur.matrix("point_cloud")?;
            let cycle = if has_cycle { Some(cur.matrix("cycle")?) } else { None };
            let line = cur.next_required("the labeled table")?;
            let dims = line
                .strip_prefix("[labeled ")
                .and_then(|r| r.strip_suffix(']'))
                .and_then(|r| r.split_once(' '))
                .and_then(|(n, q)| Some((n.parse::<usize>().ok()?, q.parse::<usize>().ok()?)))
                .ok_or_else(|| cur.err(format!("expected '[labeled <n> <dim>]', found '{line}'")))?;
            let mut labeled = Vec::with_capacity(dims.0);
            for _ in 0..dims.0 {
                let row: Vec<f64> = cur.row(3 + dims.1)?;
                let as_int = |v: f64| -> Result<usize> {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(cur.err("labeled keys must be nonnegative integers"))
                    }
                };
                labeled.push(LabeledBin {
                    label: u8::try_from(as_int(row[0])?).map_err(|_| cur.err("label out of range"))?,
                    phase_bin: as_int(row[1])?,
                    count: as_int(row[2])?,
                    mean: DVector::from_column_slice(&row[3..]),
                });
            }
            ModelObject::Attractor(AttractorModel {
                point_cloud,
                cycle,
                source,
                trajectory_count,
                fallback,
                cycle_explained,
                labeled,
                labeled_phase_bins,
            })
        }
        "transplant" => {
            let mut kv = cur.key_values()?;
            let expert_id = unescape(&kv.req::<String>("expert_id")?);
            let student_id = unescape(&kv.req::<String>("student_id")?);
            let provenance = unescape(&kv.req::<String>("provenance")?);
            let ridge_lambda = kv.req("ridge_lambda")?;
            let fit_residual = kv.req("fit_residual")?;
            let probe_count = kv.req("probe_count")?;
            kv.finish()?;
            let linear: DMatrix<f64> = cur.matrix("linear")?;
            let translation = cur.vector("translation")?;
            let ModelObject::Readout(transplanted_readout) = read_object(cur)? else {
                return Err(cur.err("transplant object must embed a readout"));
            };
            ModelObject::Transplant(TransplantRecord {
                expert_id,
                student_id,
                transform: AlignmentTransform {
                    linear,
                    translation,
                    ridge_lambda,
                    fit_residual,
                    probe_count,
                },
                transplanted_readout,
                provenance,
            })
        }
        other => return Err(cur.err(format!("unknown object kind '{other}'"))),
    };
    cur.expect_line("[end]")?;
    Ok(obj)
}

fn read_readout_body(cur: &mut Cursor<'_>) -> Result<ReadoutModel> {
    let mut kv = cur.key_values()?;
    let space: String = kv.req("feature_space")?;
    let ridge_lambda = kv.req("ridge_lambda")?;
    let labels: String = kv.req("class_labels")?;
    kv.finish()?;
    let feature_space = match space.split_once(':') {
        Some(("observed", d)) => FeatureSpace::ObservedRates(d.parse().map_err(|_| cur.err("bad feature dim"))?),
        Some(("latent", d)) => FeatureSpace::Latent(d.parse().map_err(|_| cur.err("bad feature dim"))?),
        _ => return Err(cur.err(format!("bad feature_space '{space}'"))),
    };
    let class_labels: Vec<u8> = parse_list(cur, &labels)?;
    let weights = cur.matrix("weights")?;
    let bias = cur.vector("bias")?;
    if weights.nrows() != class_labels.len() || bias.len() != class_labels.len() || weights.ncols() != feature_space.dim() {
        return Err(cur.err("readout dimensions disagree with its labels or feature space"));
    }
    Ok(ReadoutModel {
        weights,
        bias,
        ridge_lambda,
        feature_space,
        class_labels,
    })
}
