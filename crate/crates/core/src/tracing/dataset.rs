//! Sampled causality maps, their persistence and the checks that run on
//! stored records.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Direction, EventKind, TraceError, Tracer};
use crate::flowfield::{MorseStrata, TangencyKind};
use crate::geometry::{canonical_t, param_distance, BoundaryPoint};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const F_TABLE_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("record {index} is corrupt: {reason}")]
    CorruptRecord { index: usize, reason: String },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("tracing from curve {} at t = {}: {error}", origin.curve, origin.t)]
pub struct SampleError {
    pub origin: BoundaryPoint,
    pub error: TraceError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub boundary: f64,
    pub tangency: f64,
    pub refine: f64,
    pub positivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub scene_hash: String,
    pub density: f64,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberEvent {
    pub curve: usize,
    pub t: f64,
    pub f: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub source: BoundaryPoint,
    pub target: BoundaryPoint,
    pub f_source: f64,
    pub f_target: f64,
    /// Boundary events of the trajectory ordered by increasing `f`.
    pub fiber: Vec<FiberEvent>,
    /// The source is one of the tangency points of the strata.
    pub at_tangency: bool,
}

impl Sample {
    /// Ordered `(curve, event kind)` list; constant along edges of the
    /// trajectory graph.
    pub fn signature(&self) -> Vec<(usize, EventKind)> {
        signature(&self.fiber)
    }

    pub fn is_fixed(&self) -> bool {
        self.source == self.target
    }
}

pub fn signature(fiber: &[FiberEvent]) -> Vec<(usize, EventKind)> {
    fiber.iter().map(|e| (e.curve, e.kind)).collect()
}

/// The boundary data of a flow: sampled causality map, strata and `f` on the
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalityDataset {
    pub header: DatasetHeader,
    pub curve_lengths: Vec<f64>,
    /// `f` at `t = k / n` on each curve.
    pub f_boundary: Vec<Vec<f64>>,
    pub strata: MorseStrata,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Samples per unit of boundary length.
    pub density: f64,
    /// Geometric refinement steps toward each tangency.
    pub refine_levels: usize,
    /// Parameter gap at which signature-change bisection stops.
    pub bisect_gap: f64,
}

impl SamplingConfig {
    pub fn with_density(density: f64) -> Self {
        SamplingConfig {
            density,
            refine_levels: 9,
            bisect_gap: 1e-10,
        }
    }
}

struct Work {
    u: f64,
    sample: Sample,
}

fn make_sample(tracer: &Tracer, b: BoundaryPoint, at_tangency: bool) -> Result<Sample, SampleError> {
    let wrap = |error| SampleError { origin: b, error };
    let back = tracer.trace(b, Direction::Backward).map_err(wrap)?;
    let fwd = tracer.trace(b, Direction::Forward).map_err(wrap)?;
    let start = fwd.events[0];
    let target = fwd.events.get(1).copied().unwrap_or(start);
    let fiber = back
        .events
        .iter()
        .chain(fwd.events.iter().skip(1))
        .map(|e| FiberEvent {
            curve: e.point.curve,
            t: e.point.t,
            f: e.f,
            kind: e.kind,
        })
        .collect();
    Ok(Sample {
        source: b,
        target: target.point,
        f_source: start.f,
        f_target: target.f,
        fiber,
        at_tangency,
    })
}

fn bisect_pair(
    tracer: &Tracer,
    curve: usize,
    a: (f64, Vec<(usize, EventKind)>),
    b: (f64, Vec<(usize, EventKind)>),
    gap: f64,
    out: &mut Vec<Work>,
) -> Result<(), SampleError> {
    if b.0 - a.0 < gap {
        return Ok(());
    }
    let m = 0.5 * (a.0 + b.0);
    let s = make_sample(tracer, BoundaryPoint::new(curve, m), false)?;
    let sig = s.signature();
    out.push(Work { u: m, sample: s });
    if sig != a.1 {
        bisect_pair(tracer, curve, a, (m, sig.clone()), gap, out)?;
    }
    if sig != b.1 {
        bisect_pair(tracer, curve, (m, sig), b, gap, out)?;
    }
    Ok(())
}

/// Samples the causality map on every positive arc and at every tangency.
pub fn sample_causality_map(
    tracer: &Tracer,
    strata: &MorseStrata,
    config: &SamplingConfig,
    tolerances: Tolerances,
) -> Result<CausalityDataset, SampleError> {
    let domain = tracer.domain();
    let threshold = tracer.config().tangency_threshold;
    let mut samples = Vec::new();
    for arc in &strata.positive_arcs {
        let total = domain.curve_length(arc.curve);
        let width = arc.width();
        let s0 = domain.arc_length_at(arc.curve, arc.start);
        let len = if width >= 1.0 {
            total
        } else {
            (domain.arc_length_at(arc.curve, arc.end) - s0).rem_euclid(total)
        };
        let n = ((len * config.density).ceil() as usize).max(1);
        let mut params: Vec<f64> = (0..n)
            .map(|i| {
                let t = domain.param_at_arc_length(arc.curve, s0 + (i as f64 + 0.5) / n as f64 * len);
                arc.start + (t - arc.start).rem_euclid(1.0)
            })
            .collect();
        if width < 1.0 {
            for k in 0..config.refine_levels {
                let d = 1e-4 * 0.5f64.powi(k as i32);
                if d >= width / 4.0 {
                    continue;
                }
                for u in [arc.start + d, arc.end - d] {
                    let e = tracer.classify(BoundaryPoint::new(arc.curve, u));
                    if e.normal_speed.abs() > 10.0 * threshold {
                        params.push(u);
                    }
                }
            }
        }
        params.sort_by(f64::total_cmp);
        params.dedup();

        let traced: Vec<Work> = params
            .par_iter()
            .map(|&u| {
                make_sample(tracer, BoundaryPoint::new(arc.curve, u), false).map(|sample| Work { u, sample })
            })
            .collect::<Result<_, _>>()?;
        let pairs: Vec<(usize, usize)> = (1..traced.len())
            .filter(|&i| traced[i - 1].sample.signature() != traced[i].sample.signature())
            .map(|i| (i - 1, i))
            .collect();
        let extra: Vec<Vec<Work>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut out = Vec::new();
                bisect_pair(
                    tracer,
                    arc.curve,
                    (traced[i].u, traced[i].sample.signature()),
                    (traced[j].u, traced[j].sample.signature()),
                    config.bisect_gap,
                    &mut out,
                )
                .map(|_| out)
            })
            .collect::<Result<_, _>>()?;
        let mut all: Vec<Work> = traced;
        all.extend(extra.into_iter().flatten());
        all.sort_by(|a, b| a.u.total_cmp(&b.u));
        samples.extend(all.into_iter().map(|w| w.sample));
    }
    let tangent: Vec<Sample> = strata
        .tangency_points
        .par_iter()
        .map(|p| make_sample(tracer, p.point, true))
        .collect::<Result<_, _>>()?;
    samples.extend(tangent);

    let f_boundary = (0..domain.curve_count())
        .map(|c| {
            (0..F_TABLE_SIZE)
                .map(|k| {
                    tracer
                        .flow()
                        .f_value(domain.position(BoundaryPoint::new(c, k as f64 / F_TABLE_SIZE as f64)))
                })
                .collect()
        })
        .collect();
    Ok(CausalityDataset {
        header: DatasetHeader {
            schema_version: DATASET_SCHEMA_VERSION,
            scene_hash: String::new(),
            density: config.density,
            tolerances,
        },
        curve_lengths: (0..domain.curve_count()).map(|c| domain.curve_length(c)).collect(),
        f_boundary,
        strata: strata.clone(),
        samples,
    })
}

impl CausalityDataset {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        let version = value
            .get("header")
            .and_then(|h| h.get("schema_version"))
            .and_then(|v| v.as_u64())
            .ok_or_else(|| DatasetError::Malformed("missing header.schema_version".into()))?;
        if version != DATASET_SCHEMA_VERSION as u64 {
            return Err(DatasetError::VersionMismatch {
                found: version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        if let Some(records) = value.get("samples").and_then(|s| s.as_array()) {
            for (index, r) in records.iter().enumerate() {
                serde_json::from_value::<Sample>(r.clone()).map_err(|e| DatasetError::CorruptRecord {
                    index,
                    reason: e.to_string(),
                })?;
            }
        }
        let ds: CausalityDataset =
            serde_json::from_value(value).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let curves = self.curve_lengths.len();
        let point_ok = |b: &BoundaryPoint| b.curve < curves && b.t.is_finite() && (0.0..1.0).contains(&b.t);
        for (index, s) in self.samples.iter().enumerate() {
            let bad = |reason: &str| DatasetError::CorruptRecord {
                index,
                reason: reason.to_string(),
            };
            if !point_ok(&s.source) || !point_ok(&s.target) {
                return Err(bad("boundary point out of range"));
            }
            if !(s.f_source.is_finite() && s.f_target.is_finite()) {
                return Err(bad("non-finite f value"));
            }
            if s.fiber.is_empty() {
                return Err(bad("empty fiber"));
            }
            if s.fiber.iter().any(|e| e.curve >= curves || !e.f.is_finite()) {
                return Err(bad("fiber event out of range"));
            }
        }
        if self.f_boundary.len() != curves {
            return Err(DatasetError::Malformed("f table count differs from curve count".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn curve_count(&self) -> usize {
        self.curve_lengths.len()
    }

    /// `f^∂` at an arbitrary parameter by periodic linear interpolation.
    pub fn f_at(&self, curve: usize, t: f64) -> f64 {
        interpolate_periodic(&self.f_boundary[curve], t)
    }

    /// Histogram of fiber cardinalities over all samples.
    pub fn cardinality_histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut h = std::collections::BTreeMap::new();
        for s in &self.samples {
            *h.entry(s.fiber.len()).or_insert(0) += 1;
        }
        h
    }
}

pub(crate) fn interpolate_periodic(table: &[f64], t: f64) -> f64 {
    let n = table.len();
    let u = canonical_t(t) * n as f64;
    let i = (u.floor() as usize).min(n - 1);
    let s = u - i as f64;
    table[i] * (1.0 - s) + table[(i + 1) % n] * s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyAReport {
    pub ok: bool,
    pub checked: usize,
    pub violations: Vec<Violation>,
}

/// A fiber passes when one of its events is transversal, or when it is a
/// single quadratic tangency.
pub fn check_property_a(dataset: &CausalityDataset) -> PropertyAReport {
    // a tangency fiber must sit on a stratum tangency point
    let window = (10.0 * dataset.header.tolerances.refine).max(1e-9);
    let mut violations = Vec::new();
    for (index, s) in dataset.samples.iter().enumerate() {
        let transversal = s.fiber.iter().any(|e| e.kind != EventKind::Tangency);
        if transversal {
            continue;
        }
        let singleton_quadratic = s.fiber.len() == 1 && {
            let e = s.fiber[0];
            dataset
                .strata
                .tangency_points
                .iter()
                .filter(|p| p.point.curve == e.curve)
                .min_by(|a, b| param_distance(a.point.t, e.t).total_cmp(&param_distance(b.point.t, e.t)))
                .filter(|p| param_distance(p.point.t, e.t) <= window)
                .map(|p| p.order == 1 && p.kind == TangencyKind::External)
                .unwrap_or(false)
        };
        if !singleton_quadratic {
            violations.push(Violation {
                index,
                reason: format!("fiber of {} tangency events with no transversal crossing", s.fiber.len()),
            });
        }
    }
    PropertyAReport {
        ok: violations.is_empty(),
        checked: dataset.samples.len(),
        violations,
    }
}

/// Indices of non-fixed samples whose target does not increase `f`.
pub fn check_monotone(dataset: &CausalityDataset) -> Vec<Violation> {
    dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_fixed() && !(s.f_target > s.f_source))
        .map(|(index, s)| Violation {
            index,
            reason: format!("f_target {} <= f_source {}", s.f_target, s.f_source),
        })
        .collect()
}

/// Fiber consistency of stored records: events strictly ordered by `f`, and
/// source and target both present in the fiber as consecutive events.
pub fn check_quotient(dataset: &CausalityDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for (index, s) in dataset.samples.iter().enumerate() {
        if s.fiber.windows(2).any(|w| !(w[1].f > w[0].f)) {
            out.push(Violation {
                index,
                reason: "fiber events not strictly increasing in f".into(),
            });
            continue;
        }
        let find = |b: &BoundaryPoint| {
            s.fiber
                .iter()
                .position(|e| e.curve == b.curve && param_distance(e.t, b.t) < 1e-12)
        };
        match (find(&s.source), find(&s.target)) {
            (Some(i), Some(j)) if j == i || j == i + 1 => {}
            _ => out.push(Violation {
                index,
                reason: "source and target are not consecutive fiber events".into(),
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformalReport {
    pub matched: usize,
    pub max_discrepancy: f64,
    pub worst_index: Option<usize>,
}

/// Compares two datasets of the same domain sample by sample: sources are
/// matched by curve and parameter, targets compared by parameter distance.
pub fn compare_causality(a: &CausalityDataset, b: &CausalityDataset) -> ConformalReport {
    let mut by_curve: Vec<Vec<(f64, usize)>> = vec![Vec::new(); b.curve_count()];
    for (i, s) in b.samples.iter().enumerate() {
        if s.source.curve < by_curve.len() {
            by_curve[s.source.curve].push((s.source.t, i));
        }
    }
    for v in &mut by_curve {
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
    }
    let mut report = ConformalReport {
        matched: 0,
        max_discrepancy: 0.0,
        worst_index: None,
    };
    for (i, s) in a.samples.iter().enumerate() {
        let Some(list) = by_curve.get(s.source.curve) else { continue };
        let pos = list.partition_point(|x| x.0 < s.source.t);
        let candidates = [pos.wrapping_sub(1), pos];
        let best = candidates
            .iter()
            .filter_map(|&k| list.get(k))
            .min_by(|x, y| param_distance(x.0, s.source.t).total_cmp(&param_distance(y.0, s.source.t)));
        let Some(&(t, j)) = best else { continue };
        if param_distance(t, s.source.t) > 1e-12 {
            continue;
        }
        let other = &b.samples[j];
        report.matched += 1;
        let d = if other.target.curve == s.target.curve {
            param_distance(other.target.t, s.target.t)
        } else {
            f64::INFINITY
        };
        if d > report.max_discrepancy || report.worst_index.is_none() {
            report.max_discrepancy = report.max_discrepancy.max(d);
            report.worst_index = Some(i);
        }
    }
    report
}
