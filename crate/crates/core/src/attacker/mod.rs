//! The localization engine: least-squares trilateration, the iterative
//! refinement loop, the alternating-axis space partition, coverage scanning
//! with popularity prioritization, and the combined per-policy attack flow.
//!
//! One attack session is strictly sequential; every query teleports a fake
//! anchor, reads the displayed distance, and charges simulated latency to a
//! session wall clock. Rate-limit bans suspend the session until expiry.

mod lsp;
mod partition;
mod scan;
mod trilateration;

pub use lsp::{lsp, LspSolution};
pub use partition::{bisect_box, space_partition, BisectOutcome, MembershipRule};
pub use scan::scan;
pub use trilateration::iterative_trilateration;

use crate::geo::{GeoError, GeoPoint};
use crate::mobility::PopularityMap;
use crate::oracle::{
    effective_coverage, DisplayedDistance, DistanceReply, NearbyReply, ObfuscationPolicy, Oracle,
};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};

/// One fake-anchor observation: where the attacker claimed to stand and
/// what the app displayed for the target from there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorReading {
    pub anchor: GeoPoint,
    pub displayed: DisplayedDistance,
    pub t: u64,
}

/// Which stage of the attack flow a query was spent in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Trilateration,
    Scan,
    Partition,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Trilateration => "trilateration",
            Phase::Scan => "scan",
            Phase::Partition => "partition",
        };
        f.write_str(s)
    }
}

/// The attacker's inferred position plus query-cost accounting.
/// `queries_used` always equals the sum over `phase_log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: GeoPoint,
    /// Claimed error bound in meters.
    pub bound_m: f64,
    pub queries_used: u64,
    /// Algorithm iterations across phases (trilateration rounds, scan
    /// probes, partition probes).
    pub wall_rounds: u32,
    pub phase_log: Vec<(Phase, u64)>,
    /// Cleared when a probe contradicted the phase's preconditions.
    pub reliable: bool,
}

impl Estimate {
    pub(crate) fn chain(self, mut later: Estimate) -> Estimate {
        let mut phase_log = self.phase_log;
        phase_log.append(&mut later.phase_log);
        Estimate {
            point: later.point,
            bound_m: later.bound_m,
            queries_used: self.queries_used + later.queries_used,
            wall_rounds: self.wall_rounds + later.wall_rounds,
            phase_log,
            reliable: self.reliable && later.reliable,
        }
    }
}

/// Axis-aligned lat/lon rectangle given by its corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub south_west: GeoPoint,
    pub north_east: GeoPoint,
}

impl Rect {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.south_west.lat() > self.north_east.lat()
            || self.south_west.lon() > self.north_east.lon()
        {
            return Err(AttackError::InvalidConfig("rectangle corners are swapped".into()));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> GeoPoint {
        let lat = if self.south_west.lat() < self.north_east.lat() {
            rng.gen_range(self.south_west.lat()..self.north_east.lat())
        } else {
            self.south_west.lat()
        };
        let lon = if self.south_west.lon() < self.north_east.lon() {
            rng.gen_range(self.south_west.lon()..self.north_east.lon())
        } else {
            self.south_west.lon()
        };
        GeoPoint::new(lat, lon).expect("corners are valid points")
    }
}

/// Attack knobs. Thresholds are meters; the seed drives every random
/// choice the attacker makes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub trilateration_threshold_m: f64,
    pub partition_threshold_m: f64,
    /// Region to sweep when the policy hides far-away targets.
    pub scan_region: Option<Rect>,
    pub scan_spacing_m: f64,
    /// Where the first three fake anchors are drawn from.
    pub initial_anchor_box: Rect,
    pub seed: u64,
    /// Simulated seconds charged per query (server round-trip).
    pub per_query_latency_s: u64,
}

impl AttackConfig {
    /// Defaults tuned per policy: latency from observed per-query waits,
    /// thresholds matched to each policy's display floor.
    pub fn for_policy(policy: &ObfuscationPolicy, seed: u64) -> Self {
        let (trilateration_threshold_m, partition_threshold_m, per_query_latency_s) =
            match policy.name.as_str() {
                "momo" => (10.0, 1.0, 55),
                "skout" => (10.0, 25.0, 20),
                name if name.starts_with("wechat") => (100.0, 25.0, 40),
                _ => (10.0, 1.0, 0),
            };
        AttackConfig {
            trilateration_threshold_m,
            partition_threshold_m,
            scan_region: None,
            scan_spacing_m: 1000.0,
            initial_anchor_box: Rect {
                south_west: GeoPoint::new(20.0, 75.0).unwrap(),
                north_east: GeoPoint::new(50.0, 135.0).unwrap(),
            },
            seed,
            per_query_latency_s,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.trilateration_threshold_m > 0.0) || !(self.partition_threshold_m > 0.0) {
            return Err(AttackError::InvalidConfig("thresholds must be > 0".into()));
        }
        self.initial_anchor_box.validate()?;
        if let Some(region) = &self.scan_region {
            region.validate()?;
        }
        if !(self.scan_spacing_m > 0.0) {
            return Err(AttackError::InvalidConfig("scan_spacing_m must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("anchors are collinear within 1e-6 rad; trilateration is degenerate")]
    DegenerateGeometry,
    #[error("target not visible from any anchor; a coverage scan is needed")]
    NeedsScan { queries_used: u64 },
    #[error("scan exhausted the region without finding the target")]
    NotFound { phase_log: Vec<(Phase, u64)>, queries_used: u64 },
    #[error("target disappeared mid-attack")]
    TargetLost { phase_log: Vec<(Phase, u64)>, queries_used: u64 },
    #[error("scan spacing {spacing_m} m exceeds sqrt(2) x coverage ({coverage_m} m)")]
    SpacingTooWide { spacing_m: f64, coverage_m: f64 },
    #[error("coverage-limited policy needs cfg.scan_region")]
    MissingScanRegion,
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl AttackError {
    /// Query/phase accounting captured before the attack gave up.
    pub fn partial_log(&self) -> (Vec<(Phase, u64)>, u64) {
        match self {
            AttackError::NeedsScan { queries_used } => {
                (vec![(Phase::Trilateration, *queries_used)], *queries_used)
            }
            AttackError::NotFound { phase_log, queries_used }
            | AttackError::TargetLost { phase_log, queries_used } => {
                (phase_log.clone(), *queries_used)
            }
            _ => (Vec::new(), 0),
        }
    }
}

/// The attacker's only view of the service. Implemented by the in-process
/// oracle, its mutex wrapper, and the HTTP client, so an attack runs
/// identically in-process and over the wire.
pub trait DistanceOracle {
    fn query_distance(
        &mut self,
        account_id: &str,
        attacker_pos: GeoPoint,
        target_id: &str,
        t: u64,
    ) -> DistanceReply;

    fn query_nearby(&mut self, account_id: &str, attacker_pos: GeoPoint, t: u64) -> NearbyReply;
}

impl DistanceOracle for Oracle {
    fn query_distance(
        &mut self,
        account_id: &str,
        attacker_pos: GeoPoint,
        target_id: &str,
        t: u64,
    ) -> DistanceReply {
        Oracle::query_distance(self, account_id, attacker_pos, target_id, t)
    }

    fn query_nearby(&mut self, account_id: &str, attacker_pos: GeoPoint, t: u64) -> NearbyReply {
        Oracle::query_nearby(self, account_id, attacker_pos, t)
    }
}

impl DistanceOracle for Arc<Mutex<Oracle>> {
    fn query_distance(
        &mut self,
        account_id: &str,
        attacker_pos: GeoPoint,
        target_id: &str,
        t: u64,
    ) -> DistanceReply {
        self.lock().unwrap().query_distance(account_id, attacker_pos, target_id, t)
    }

    fn query_nearby(&mut self, account_id: &str, attacker_pos: GeoPoint, t: u64) -> NearbyReply {
        self.lock().unwrap().query_nearby(account_id, attacker_pos, t)
    }
}

impl<O: DistanceOracle> DistanceOracle for &mut O {
    fn query_distance(
        &mut self,
        account_id: &str,
        attacker_pos: GeoPoint,
        target_id: &str,
        t: u64,
    ) -> DistanceReply {
        (**self).query_distance(account_id, attacker_pos, target_id, t)
    }

    fn query_nearby(&mut self, account_id: &str, attacker_pos: GeoPoint, t: u64) -> NearbyReply {
        (**self).query_nearby(account_id, attacker_pos, t)
    }
}

/// One sequential attack session: an account, a simulated wall clock, and
/// query accounting. Bans suspend the clock until expiry and retry.
pub struct Session<O: DistanceOracle> {
    oracle: O,
    account_id: String,
    now_s: u64,
    started_s: u64,
    per_query_latency_s: u64,
    queries: u64,
    suspensions: u32,
}

impl<O: DistanceOracle> Session<O> {
    pub fn new(oracle: O, account_id: impl Into<String>, start_s: u64, per_query_latency_s: u64) -> Self {
        Session {
            oracle,
            account_id: account_id.into(),
            now_s: start_s,
            started_s: start_s,
            per_query_latency_s,
            queries: 0,
            suspensions: 0,
        }
    }

    pub fn now_s(&self) -> u64 {
        self.now_s
    }

    /// Simulated seconds elapsed since the session started.
    pub fn elapsed_s(&self) -> u64 {
        self.now_s - self.started_s
    }

    /// Ledgered queries issued by this session.
    pub fn queries_used(&self) -> u64 {
        self.queries
    }

    /// Times the session slept through a ban.
    pub fn suspensions(&self) -> u32 {
        self.suspensions
    }

    pub fn account_id(&self) -> &str {
        &self.account_id
    }

    pub fn oracle_mut(&mut self) -> &mut O {
        &mut self.oracle
    }

    /// Displayed distance from `pos` to the target; `None` when the target
    /// is not visible. Retries through rate-limit bans.
    pub fn query_displayed(&mut self, pos: GeoPoint, target_id: &str) -> Option<DisplayedDistance> {
        loop {
            let reply = self.oracle.query_distance(&self.account_id, pos, target_id, self.now_s);
            match reply {
                DistanceReply::Distance(d) => {
                    self.queries += 1;
                    self.now_s += self.per_query_latency_s;
                    return Some(d);
                }
                DistanceReply::NotVisible => {
                    self.queries += 1;
                    self.now_s += self.per_query_latency_s;
                    return None;
                }
                DistanceReply::RateLimited { until_s, counted } => {
                    if counted {
                        self.queries += 1;
                    }
                    self.suspensions += 1;
                    self.now_s = self.now_s.max(until_s);
                }
            }
        }
    }

    /// Nearby list at `pos`, retrying through bans.
    pub fn query_nearby_list(&mut self, pos: GeoPoint) -> Vec<(String, DisplayedDistance)> {
        loop {
            let reply = self.oracle.query_nearby(&self.account_id, pos, self.now_s);
            match reply {
                NearbyReply::Nearby(list) => {
                    self.queries += 1;
                    self.now_s += self.per_query_latency_s;
                    return list;
                }
                NearbyReply::RateLimited { until_s, counted } => {
                    if counted {
                        self.queries += 1;
                    }
                    self.suspensions += 1;
                    self.now_s = self.now_s.max(until_s);
                }
            }
        }
    }
}

/// The combined attack flow: unlimited-coverage policies run iterative
/// trilateration down to the display floor and hand the floor radius to the
/// space partition; coverage-limited policies scan for the target first and
/// partition inside the discovered display bucket.
pub fn full_attack<O: DistanceOracle>(
    session: &mut Session<O>,
    target_id: &str,
    policy: &ObfuscationPolicy,
    local_density_per_km2: f64,
    popularity: Option<&PopularityMap>,
    cfg: &AttackConfig,
) -> Result<Estimate, AttackError> {
    cfg.validate()?;
    let coverage = effective_coverage(policy, local_density_per_km2);

    if coverage.is_infinite() {
        let (tri, reading) =
            trilateration::iterative_trilateration_with_reading(session, target_id, cfg)?;
        // the reading's preimage upper edge bounds the distance from the
        // winning anchor to the target; at the floor this is exactly the
        // quantizer's floor radius
        let (_, radius) = policy.quantizer.preimage(reading.value_m);
        if radius <= 0.0 || cfg.partition_threshold_m >= radius {
            // nothing below the display resolution to bisect
            return Ok(tri);
        }
        let part = space_partition(
            session,
            target_id,
            tri.point,
            radius,
            MembershipRule::BucketAtMost { value_m: reading.value_m },
            Some(&policy.quantizer),
            cfg,
        )?;
        Ok(tri.chain(part))
    } else {
        let region = cfg.scan_region.as_ref().ok_or(AttackError::MissingScanRegion)?;
        let max_spacing = std::f64::consts::SQRT_2 * coverage;
        if cfg.scan_spacing_m > max_spacing {
            return Err(AttackError::SpacingTooWide {
                spacing_m: cfg.scan_spacing_m,
                coverage_m: coverage,
            });
        }
        let before = session.queries_used();
        let probe = scan(session, target_id, region, cfg.scan_spacing_m, popularity)?;
        let scan_queries = session.queries_used() - before;
        let scan_est = Estimate {
            point: probe,
            bound_m: coverage,
            queries_used: scan_queries,
            wall_rounds: scan_queries as u32,
            phase_log: vec![(Phase::Scan, scan_queries)],
            reliable: true,
        };

        // resolve the display bucket around the discovered probe point
        let resolve_start = session.queries_used();
        let bucket = match session.query_displayed(probe, target_id) {
            Some(d) => d.value_m,
            None => {
                let mut log = scan_est.phase_log.clone();
                log.push((Phase::Partition, session.queries_used() - resolve_start));
                return Err(AttackError::TargetLost {
                    phase_log: log,
                    queries_used: session.queries_used() - before,
                });
            }
        };
        let (_, radius) = policy.quantizer.preimage(bucket);
        let part = space_partition(
            session,
            target_id,
            probe,
            radius,
            MembershipRule::BucketAtMost { value_m: bucket },
            Some(&policy.quantizer),
            cfg,
        )?;
        // the bucket-resolving query belongs to the partition phase
        let part = Estimate {
            queries_used: part.queries_used + 1,
            phase_log: vec![(Phase::Partition, part.phase_log[0].1 + 1)],
            ..part
        };
        Ok(scan_est.chain(part))
    }
}
