//! Ground-truth world: recorded or synthesized victim traces, and the
//! app-usage schedules that turn a trace into location reports against the
//! oracle.
//!
//! Trace CSV format (one user per file, header required):
//! `user_id,timestamp_unix_s,lat_deg,lon_deg`. Popularity CSV:
//! `cell_ix,cell_iy,hour,count`.

use crate::geo::{GeoPoint, GeoError};
use crate::oracle::{Oracle, OracleError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Fix cadence of recorded and synthetic traces, seconds.
pub const TRACE_CADENCE_S: u64 = 1800;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: {msg}")]
    Invalid { line: u64, msg: String },
    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotonic { line: u64 },
    #[error("file mixes user ids ({first} and {second})")]
    MixedUsers { first: String, second: String },
    #[error("trace has no points")]
    Empty,
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Time-ordered fixes for one user. Timestamps strictly increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    user_id: String,
    points: Vec<(u64, GeoPoint)>,
}

impl Trace {
    pub fn new(user_id: impl Into<String>, points: Vec<(u64, GeoPoint)>) -> Result<Self, TraceError> {
        if points.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(TraceError::NonMonotonic { line: i as u64 + 2 });
            }
        }
        Ok(Trace { user_id: user_id.into(), points })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn points(&self) -> &[(u64, GeoPoint)] {
        &self.points
    }

    pub fn start_t(&self) -> u64 {
        self.points[0].0
    }

    pub fn end_t(&self) -> u64 {
        self.points[self.points.len() - 1].0
    }

    /// Position at time `t`: the last fix at or before `t` (piecewise
    /// constant, no interpolation). `None` before the first fix.
    pub fn position_at(&self, t: u64) -> Option<GeoPoint> {
        let idx = self.points.partition_point(|&(pt, _)| pt <= t);
        if idx == 0 {
            None
        } else {
            Some(self.points[idx - 1].1)
        }
    }

    /// The prefix of the trace with timestamps strictly below `cutoff_t`.
    pub fn truncated(&self, cutoff_t: u64) -> Option<Trace> {
        let idx = self.points.partition_point(|&(pt, _)| pt < cutoff_t);
        if idx == 0 {
            return None;
        }
        Some(Trace { user_id: self.user_id.clone(), points: self.points[..idx].to_vec() })
    }
}

/// Parse a trace from the CSV wire format.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let file = std::fs::File::open(path)?;
    read_trace_csv(file)
}

pub fn read_trace_csv(reader: impl Read) -> Result<Trace, TraceError> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut user_id: Option<String> = None;
    let mut points: Vec<(u64, GeoPoint)> = Vec::new();
    for row in csv_reader.records() {
        let record = row.map_err(|e| TraceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(TraceError::Invalid {
                line,
                msg: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let uid = record[0].to_string();
        match &user_id {
            None => user_id = Some(uid.clone()),
            Some(first) if *first != uid => {
                return Err(TraceError::MixedUsers { first: first.clone(), second: uid })
            }
            _ => {}
        }
        let t: u64 = record[1].trim().parse().map_err(|e| TraceError::Invalid {
            line,
            msg: format!("bad timestamp: {e}"),
        })?;
        let lat: f64 = record[2].trim().parse().map_err(|e| TraceError::Invalid {
            line,
            msg: format!("bad latitude: {e}"),
        })?;
        let lon: f64 = record[3].trim().parse().map_err(|e| TraceError::Invalid {
            line,
            msg: format!("bad longitude: {e}"),
        })?;
        let p = GeoPoint::new(lat, lon)
            .map_err(|e| TraceError::Invalid { line, msg: e.to_string() })?;
        if let Some(&(last, _)) = points.last() {
            if t <= last {
                return Err(TraceError::NonMonotonic { line });
            }
        }
        points.push((t, p));
    }
    Trace::new(user_id.ok_or(TraceError::Empty)?, points)
}

pub fn write_trace_csv(writer: impl Write, trace: &Trace) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "timestamp_unix_s", "lat_deg", "lon_deg"])
        .map_err(|e| TraceError::Parse { line: 0, msg: e.to_string() })?;
    for &(t, p) in trace.points() {
        w.write_record(&[
            trace.user_id().to_string(),
            t.to_string(),
            p.lat().to_string(),
            p.lon().to_string(),
        ])
        .map_err(|e| TraceError::Parse { line: 0, msg: e.to_string() })?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(path: impl AsRef<Path>, trace: &Trace) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    write_trace_csv(file, trace)
}

/// How long a synthetic victim lingers at an anchor once arrived, in
/// trace-cadence steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DwellModel {
    Fixed { steps: u32 },
    /// Geometric number of steps with the given mean (>= 1).
    Geometric { mean_steps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub point: GeoPoint,
    pub weight: f64,
    pub dwell: DwellModel,
    /// Uniform-disc jitter applied to every emitted fix, meters.
    #[serde(default)]
    pub jitter_m: f64,
}

/// Deterministic synthetic trace: one fix every [`TRACE_CADENCE_S`], visits
/// drawn anchor-by-anchor with probability proportional to weight, each
/// visit lasting per the anchor's dwell model. Long-run time share per
/// anchor is proportional to weight x mean dwell.
pub fn synthesize_trace(
    user_id: impl Into<String>,
    seed: u64,
    days: u32,
    anchors: &[AnchorSpec],
) -> Result<Trace, TraceError> {
    if anchors.len() < 2 {
        return Err(TraceError::InvalidSpec("need at least 2 anchors".into()));
    }
    for (i, a) in anchors.iter().enumerate() {
        if !(a.weight > 0.0) || !a.weight.is_finite() {
            return Err(TraceError::InvalidSpec(format!("anchor {i}: weight must be > 0")));
        }
        if a.jitter_m < 0.0 {
            return Err(TraceError::InvalidSpec(format!("anchor {i}: jitter must be >= 0")));
        }
        match a.dwell {
            DwellModel::Fixed { steps: 0 } => {
                return Err(TraceError::InvalidSpec(format!("anchor {i}: dwell steps must be >= 1")))
            }
            DwellModel::Geometric { mean_steps } if !(mean_steps >= 1.0) => {
                return Err(TraceError::InvalidSpec(format!(
                    "anchor {i}: geometric mean must be >= 1"
                )))
            }
            _ => {}
        }
    }
    if days == 0 {
        return Err(TraceError::InvalidSpec("days must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_weight: f64 = anchors.iter().map(|a| a.weight).sum();
    let steps_per_day = 86_400 / TRACE_CADENCE_S;
    let total_steps = steps_per_day * days as u64;

    let mut points = Vec::with_capacity(total_steps as usize);
    let mut current: usize = 0;
    let mut remaining: u64 = 0;
    for k in 0..total_steps {
        if remaining == 0 {
            let mut pick = rng.gen_range(0.0..total_weight);
            current = anchors.len() - 1;
            for (i, a) in anchors.iter().enumerate() {
                if pick < a.weight {
                    current = i;
                    break;
                }
                pick -= a.weight;
            }
            remaining = match anchors[current].dwell {
                DwellModel::Fixed { steps } => steps as u64,
                DwellModel::Geometric { mean_steps } => {
                    // geometric on {1, 2, ...} with the requested mean
                    let p = 1.0 / mean_steps;
                    let u: f64 = rng.gen_range(0.0f64..1.0).max(f64::MIN_POSITIVE);
                    let steps =
                        (u.ln() / (1.0 - p).ln().min(-f64::MIN_POSITIVE)).floor().max(0.0);
                    1 + steps.min(1e6) as u64
                }
            };
        }
        let a = &anchors[current];
        let pos = if a.jitter_m > 0.0 {
            let r = a.jitter_m * rng.gen_range(0.0f64..1.0).sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            crate::geo::offset_m(a.point, r * theta.cos(), r * theta.sin())?
        } else {
            a.point
        };
        points.push((k * TRACE_CADENCE_S, pos));
        remaining -= 1;
    }
    Trace::new(user_id, points)
}

/// When and how often a victim actually opens the app.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsagePattern {
    /// Seconds between scheduled check-ins.
    pub report_interval_s: u64,
    /// Probability a scheduled check-in happens.
    pub report_prob: f64,
    /// Daily window [start_hour, end_hour); (0, 24) means always active.
    pub active_hours: (u8, u8),
}

impl Default for UsagePattern {
    fn default() -> Self {
        UsagePattern { report_interval_s: 2400, report_prob: 0.8, active_hours: (0, 24) }
    }
}

impl UsagePattern {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.report_interval_s == 0 {
            return Err(TraceError::InvalidSpec("report_interval_s must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.report_prob) {
            return Err(TraceError::InvalidSpec("report_prob must be in [0, 1]".into()));
        }
        let (s, e) = self.active_hours;
        if s > 24 || e > 24 {
            return Err(TraceError::InvalidSpec("active hours must be within 0..=24".into()));
        }
        Ok(())
    }

    fn active_at(&self, t: u64) -> bool {
        let (s, e) = self.active_hours;
        if s == e {
            return true; // degenerate window reads as always active
        }
        let hour = ((t % 86_400) / 3600) as u8;
        if s < e {
            (s..e).contains(&hour)
        } else {
            // window wraps midnight
            hour >= s || hour < e
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportEvent {
    pub t: u64,
    pub point: GeoPoint,
}

/// All location reports one victim would make over [trace start, horizon],
/// in time order. Deterministic per seed.
pub fn report_schedule(
    trace: &Trace,
    pattern: &UsagePattern,
    horizon_s: u64,
    seed: u64,
) -> Result<Vec<ReportEvent>, TraceError> {
    pattern.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash64(trace.user_id().as_bytes()));
    let mut events = Vec::new();
    let mut t = trace.start_t();
    while t <= horizon_s {
        let scheduled = pattern.active_at(t);
        // draw regardless of the window so the stream stays aligned
        let happens = rng.gen_range(0.0f64..1.0) < pattern.report_prob;
        if scheduled && happens {
            if let Some(p) = trace.position_at(t) {
                events.push(ReportEvent { t, point: p });
            }
        }
        t += pattern.report_interval_s;
    }
    Ok(events)
}

/// Feed every victim's schedule into the oracle and return the merged log,
/// ordered by (time, user id).
pub fn run_victims(
    oracle: &mut Oracle,
    victims: &[(Trace, UsagePattern)],
    horizon_s: u64,
    seed: u64,
) -> Result<Vec<(String, ReportEvent)>, VictimRunError> {
    let mut log: Vec<(String, ReportEvent)> = Vec::new();
    for (trace, pattern) in victims {
        for ev in report_schedule(trace, pattern, horizon_s, seed)? {
            log.push((trace.user_id().to_string(), ev));
        }
    }
    log.sort_by(|a, b| a.1.t.cmp(&b.1.t).then_with(|| a.0.cmp(&b.0)));
    for (user, ev) in &log {
        oracle.report_location(user, ev.point, ev.t)?;
    }
    Ok(log)
}

#[derive(Debug, thiserror::Error)]
pub enum VictimRunError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Expected user count per (scan cell, hour of day). Missing entries are 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopularityMap {
    counts: HashMap<(i64, i64, u8), f64>,
}

impl PopularityMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, ix: i64, iy: i64, hour: u8, count: f64) {
        self.counts.insert((ix, iy, hour % 24), count);
    }

    pub fn expected_at(&self, ix: i64, iy: i64, hour: u8) -> f64 {
        self.counts.get(&(ix, iy, hour % 24)).copied().unwrap_or(0.0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn read_csv(reader: impl Read) -> Result<Self, TraceError> {
        let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut map = PopularityMap::new();
        for row in csv_reader.records() {
            let record = row.map_err(|e| TraceError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |field: &str, name: &str| -> Result<f64, TraceError> {
                field.trim().parse().map_err(|e| TraceError::Invalid {
                    line,
                    msg: format!("bad {name}: {e}"),
                })
            };
            let ix = parse(&record[0], "cell_ix")? as i64;
            let iy = parse(&record[1], "cell_iy")? as i64;
            let hour = parse(&record[2], "hour")? as u8;
            let count = parse(&record[3], "count")?;
            if count < 0.0 {
                return Err(TraceError::Invalid { line, msg: "count must be >= 0".into() });
            }
            map.set(ix, iy, hour, count);
        }
        Ok(map)
    }
}

/// Stable 64-bit FNV-1a, used to derive per-user RNG streams and
/// per-launch seeds; never varies across runs or platforms.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
