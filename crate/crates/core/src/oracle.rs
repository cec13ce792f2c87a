//! The simulated LBSN server: stores reported user locations with a cache
//! TTL, answers distance and nearby-list queries through a pluggable
//! obfuscation policy, and enforces per-account query rate limits and bans.
//!
//! Time is simulated seconds carried in every call; nothing reads the wall
//! clock. Reports per user must arrive in time order, and a query at time
//! `t` sees exactly the latest report at or before `t` that is still within
//! the cache TTL.

use crate::geo::{self, GeoPoint};
use crate::mitigation::GrsMode;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("report for {user} at t={got} is earlier than the previous report at t={last}")]
    NonMonotonicReport { user: String, last: u64, got: u64 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// How a raw distance in meters becomes a displayed reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantizer {
    /// Displayed value equals the true distance (noiseless test oracle).
    Identity,
    /// Nearest multiple of `step_m`, half rounds up.
    RoundNearest { step_m: f64 },
    /// Largest multiple of `step_m` not exceeding the distance; a reading of
    /// `v` means the true distance lies in [v, v + step).
    FloorBucket { step_m: f64 },
    /// Everything up to `min_m` reads `min_m`; beyond that the reading grows
    /// in `step_m` increments.
    MinThenStep { min_m: f64, step_m: f64 },
}

impl Quantizer {
    pub fn quantize(&self, d: f64) -> f64 {
        match *self {
            Quantizer::Identity => d,
            Quantizer::RoundNearest { step_m } => (d / step_m).round() * step_m,
            Quantizer::FloorBucket { step_m } => (d / step_m).floor() * step_m,
            Quantizer::MinThenStep { min_m, step_m } => {
                if d <= min_m {
                    min_m
                } else {
                    min_m + ((d - min_m) / step_m).ceil() * step_m
                }
            }
        }
    }

    /// The smallest displayable value.
    pub fn floor_display(&self) -> f64 {
        match *self {
            Quantizer::MinThenStep { min_m, .. } => min_m,
            _ => 0.0,
        }
    }

    /// Radius of the floor bucket's preimage: a reading at the floor
    /// certifies the true distance is within this many meters.
    pub fn floor_radius_m(&self) -> f64 {
        match *self {
            Quantizer::Identity => 0.0,
            Quantizer::RoundNearest { step_m } => step_m / 2.0,
            Quantizer::FloorBucket { step_m } => step_m,
            Quantizer::MinThenStep { min_m, .. } => min_m,
        }
    }

    /// Interval of true distances mapping to the displayed value `v`,
    /// as (lower, upper) bounds. Endpoints follow each variant's rounding
    /// convention; callers comparing against them should allow float slack.
    pub fn preimage(&self, v: f64) -> (f64, f64) {
        match *self {
            Quantizer::Identity => (v, v),
            Quantizer::RoundNearest { step_m } => {
                if v <= 0.0 {
                    (0.0, step_m / 2.0)
                } else {
                    (v - step_m / 2.0, v + step_m / 2.0)
                }
            }
            Quantizer::FloorBucket { step_m } => (v, v + step_m),
            Quantizer::MinThenStep { min_m, step_m } => {
                if v <= min_m {
                    (0.0, min_m)
                } else {
                    (v - step_m, v)
                }
            }
        }
    }

    fn step_m(&self) -> f64 {
        match *self {
            Quantizer::Identity => 0.0,
            Quantizer::RoundNearest { step_m }
            | Quantizer::FloorBucket { step_m }
            | Quantizer::MinThenStep { step_m, .. } => step_m,
        }
    }
}

/// Maximum radius within which the service lists or measures other users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coverage {
    Unlimited,
    Fixed { radius_m: f64 },
    /// Coverage shrinks in dense regions.
    DensityDependent {
        dense_m: f64,
        sparse_m: f64,
        density_threshold_per_km2: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    pub max_queries: u32,
    pub window_s: u64,
    pub ban_s: u64,
}

impl RateLimit {
    /// Default limit: the mechanism is real, the numbers are simulation knobs.
    pub fn default_knobs() -> Self {
        RateLimit { max_queries: 80, window_s: 3600, ban_s: 86_400 }
    }
}

/// One LBSN's hiding rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationPolicy {
    pub name: String,
    pub quantizer: Quantizer,
    /// Readings never imply accuracy better than this.
    pub min_display_m: f64,
    pub coverage: Coverage,
    /// Cap on the nearby-list length, if any.
    pub max_nearby: Option<usize>,
    /// How long a reported location stays served.
    pub cache_ttl_s: u64,
    pub rate_limit: Option<RateLimit>,
}

impl ObfuscationPolicy {
    pub fn validate(&self) -> Result<(), OracleError> {
        let step = self.quantizer.step_m();
        if !matches!(self.quantizer, Quantizer::Identity) && step <= 0.0 {
            return Err(OracleError::InvalidPolicy(format!("step_m {step} must be > 0")));
        }
        if self.min_display_m < 0.0 {
            return Err(OracleError::InvalidPolicy("min_display_m < 0".into()));
        }
        let cov = match self.coverage {
            Coverage::Fixed { radius_m } => Some(radius_m),
            Coverage::DensityDependent { dense_m, sparse_m, .. } => Some(dense_m.min(sparse_m)),
            Coverage::Unlimited => None,
        };
        if let Some(c) = cov {
            if self.min_display_m > 0.0 && c <= self.min_display_m {
                return Err(OracleError::InvalidPolicy(format!(
                    "coverage {c} must exceed min_display_m {}",
                    self.min_display_m
                )));
            }
        }
        Ok(())
    }

    /// Momo: distances rounded to 10 m, half-up at 5 m, no coverage bound.
    pub fn momo() -> Self {
        ObfuscationPolicy {
            name: "momo".into(),
            quantizer: Quantizer::RoundNearest { step_m: 10.0 },
            min_display_m: 10.0,
            coverage: Coverage::Unlimited,
            max_nearby: None,
            cache_ttl_s: 86_400,
            rate_limit: None,
        }
    }

    /// Skout: half-mile floor, one-mile increments, no coverage bound.
    pub fn skout() -> Self {
        ObfuscationPolicy {
            name: "skout".into(),
            quantizer: Quantizer::MinThenStep { min_m: 804.5, step_m: 1609.0 },
            min_display_m: 804.5,
            coverage: Coverage::Unlimited,
            max_nearby: None,
            cache_ttl_s: 86_400,
            rate_limit: None,
        }
    }

    fn wechat(name: &str, cache_ttl_s: u64) -> Self {
        ObfuscationPolicy {
            name: name.into(),
            quantizer: Quantizer::FloorBucket { step_m: 100.0 },
            min_display_m: 100.0,
            coverage: Coverage::DensityDependent {
                dense_m: 1000.0,
                sparse_m: 10_000.0,
                density_threshold_per_km2: 1000.0,
            },
            max_nearby: None,
            cache_ttl_s,
            rate_limit: Some(RateLimit::default_knobs()),
        }
    }

    /// Wechat in a high-density region: 1 km coverage, short cache.
    pub fn wechat_dense() -> Self {
        Self::wechat("wechat-dense", 1800)
    }

    /// Wechat in a low-density region: 10 km coverage, longer cache.
    pub fn wechat_sparse() -> Self {
        Self::wechat("wechat-sparse", 7200)
    }

    /// Noiseless oracle for convergence tests: exact distances, no limits.
    pub fn exact() -> Self {
        ObfuscationPolicy {
            name: "exact".into(),
            quantizer: Quantizer::Identity,
            min_display_m: 0.0,
            coverage: Coverage::Unlimited,
            max_nearby: None,
            cache_ttl_s: u64::MAX,
            rate_limit: None,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "momo" => Some(Self::momo()),
            "skout" => Some(Self::skout()),
            "wechat-dense" => Some(Self::wechat_dense()),
            "wechat-sparse" => Some(Self::wechat_sparse()),
            "exact" => Some(Self::exact()),
            _ => None,
        }
    }
}

/// Coverage radius in meters for a region of the given user density;
/// infinite when the policy sets no bound.
pub fn effective_coverage(policy: &ObfuscationPolicy, local_density_per_km2: f64) -> f64 {
    match policy.coverage {
        Coverage::Unlimited => f64::INFINITY,
        Coverage::Fixed { radius_m } => radius_m,
        Coverage::DensityDependent { dense_m, sparse_m, density_threshold_per_km2 } => {
            if local_density_per_km2 >= density_threshold_per_km2 {
                dense_m
            } else {
                sparse_m
            }
        }
    }
}

/// A reading as the app would show it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayedDistance {
    pub value_m: f64,
    /// True when the reading is the policy's minimum bucket, i.e. it
    /// certifies the target is within `floor_radius_m` of the query point.
    pub at_floor: bool,
}

/// Quantize a true distance through a policy.
pub fn quantize(d: f64, policy: &ObfuscationPolicy) -> DisplayedDistance {
    let value_m = policy.quantizer.quantize(d);
    DisplayedDistance { value_m, at_floor: value_m == policy.quantizer.floor_display() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistanceReply {
    Distance(DisplayedDistance),
    NotVisible,
    RateLimited {
        until_s: u64,
        /// Whether this attempt consumed ledger budget (true exactly for the
        /// query that triggered a fresh ban).
        counted: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NearbyReply {
    Nearby(Vec<(String, DisplayedDistance)>),
    RateLimited { until_s: u64, counted: bool },
}

#[derive(Debug, Default, Clone)]
struct Ledger {
    window: VecDeque<u64>,
    banned_until: Option<u64>,
    counted: u64,
    bans: u64,
}

/// Per-account ledger state exposed for reports and differential tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub counted: u64,
    pub in_window: usize,
    pub banned_until: Option<u64>,
    pub bans: u64,
}

/// The server-side world. One logical authority: callers serialize access
/// (the HTTP layer wraps it in a mutex).
#[derive(Debug, Clone)]
pub struct Oracle {
    policy: ObfuscationPolicy,
    local_density_per_km2: f64,
    grs: Option<GrsMode>,
    users: HashMap<String, Vec<(u64, GeoPoint)>>,
    ledgers: HashMap<String, Ledger>,
    clock: u64,
}

impl Oracle {
    pub fn new(policy: ObfuscationPolicy) -> Result<Self, OracleError> {
        policy.validate()?;
        Ok(Oracle {
            policy,
            local_density_per_km2: 0.0,
            grs: None,
            users: HashMap::new(),
            ledgers: HashMap::new(),
            clock: 0,
        })
    }

    pub fn with_density(mut self, users_per_km2: f64) -> Self {
        self.local_density_per_km2 = users_per_km2;
        self
    }

    /// Snap every position through a grid reference system before any
    /// distance is computed (the mitigation under test).
    pub fn with_grs(mut self, mode: GrsMode) -> Self {
        self.grs = Some(mode);
        self
    }

    pub fn policy(&self) -> &ObfuscationPolicy {
        &self.policy
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn effective_coverage_m(&self) -> f64 {
        effective_coverage(&self.policy, self.local_density_per_km2)
    }

    /// A victim-side location update. Reports for one user must be in time
    /// order; queries at time `t` see the latest report at or before `t`.
    pub fn report_location(
        &mut self,
        user_id: &str,
        p: GeoPoint,
        t: u64,
    ) -> Result<(), OracleError> {
        let timeline = self.users.entry(user_id.to_string()).or_default();
        if let Some(&(last, _)) = timeline.last() {
            if t < last {
                return Err(OracleError::NonMonotonicReport {
                    user: user_id.to_string(),
                    last,
                    got: t,
                });
            }
        }
        timeline.push((t, p));
        self.clock = self.clock.max(t);
        Ok(())
    }

    /// Latest cached position of `user_id` visible at time `t`, if any.
    fn cached_position(&self, user_id: &str, t: u64) -> Option<GeoPoint> {
        let timeline = self.users.get(user_id)?;
        let idx = timeline.partition_point(|&(rt, _)| rt <= t);
        if idx == 0 {
            return None;
        }
        let (reported_at, p) = timeline[idx - 1];
        let age = t - reported_at;
        if self.policy.cache_ttl_s != u64::MAX && age > self.policy.cache_ttl_s {
            return None;
        }
        Some(p)
    }

    fn displayed_position(&self, p: GeoPoint) -> GeoPoint {
        match &self.grs {
            Some(mode) => mode.obfuscate(p).unwrap_or(p),
            None => p,
        }
    }

    /// Charge one query to the account's ledger. `Err` carries the ban
    /// expiry and whether this attempt was counted.
    fn charge(&mut self, account_id: &str, t: u64) -> Result<(), (u64, bool)> {
        let rate_limit = self.policy.rate_limit;
        let ledger = self.ledgers.entry(account_id.to_string()).or_default();
        if let Some(until) = ledger.banned_until {
            if t < until {
                return Err((until, false));
            }
            ledger.banned_until = None;
        }
        ledger.counted += 1;
        if let Some(rl) = rate_limit {
            while let Some(&old) = ledger.window.front() {
                if old + rl.window_s <= t {
                    ledger.window.pop_front();
                } else {
                    break;
                }
            }
            ledger.window.push_back(t);
            if ledger.window.len() as u64 > rl.max_queries as u64 {
                let until = t + rl.ban_s;
                ledger.banned_until = Some(until);
                ledger.bans += 1;
                return Err((until, true));
            }
        }
        Ok(())
    }

    /// Displayed distance from `attacker_pos` to the target's cached
    /// position, through coverage, quantization, and the rate limiter.
    pub fn query_distance(
        &mut self,
        account_id: &str,
        attacker_pos: GeoPoint,
        target_id: &str,
        t: u64,
    ) -> DistanceReply {
        if let Err((until_s, counted)) = self.charge(account_id, t) {
            return DistanceReply::RateLimited { until_s, counted };
        }
        self.clock = self.clock.max(t);
        let target = match self.cached_position(target_id, t) {
            Some(p) => p,
            None => return DistanceReply::NotVisible,
        };
        let d = geo::distance_m(
            self.displayed_position(attacker_pos),
            self.displayed_position(target),
        );
        if d > self.effective_coverage_m() {
            return DistanceReply::NotVisible;
        }
        DistanceReply::Distance(quantize(d, &self.policy))
    }

    /// Everyone visible from `attacker_pos`, nearest first.
    pub fn query_nearby(&mut self, account_id: &str, attacker_pos: GeoPoint, t: u64) -> NearbyReply {
        if let Err((until_s, counted)) = self.charge(account_id, t) {
            return NearbyReply::RateLimited { until_s, counted };
        }
        self.clock = self.clock.max(t);
        let coverage = self.effective_coverage_m();
        let from = self.displayed_position(attacker_pos);
        let mut hits: Vec<(String, f64)> = Vec::new();
        for id in self.users.keys() {
            if let Some(p) = self.cached_position(id, t) {
                let d = geo::distance_m(from, self.displayed_position(p));
                if d <= coverage {
                    hits.push((id.clone(), d));
                }
            }
        }
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(cap) = self.policy.max_nearby {
            hits.truncate(cap);
        }
        NearbyReply::Nearby(
            hits.into_iter().map(|(id, d)| (id, quantize(d, &self.policy))).collect(),
        )
    }

    /// Total queries ever charged to the account (the ledger's monotone
    /// counter, unaffected by window pruning).
    pub fn counted_queries(&self, account_id: &str) -> u64 {
        self.ledgers.get(account_id).map_or(0, |l| l.counted)
    }

    pub fn ban_expiry(&self, account_id: &str) -> Option<u64> {
        self.ledgers.get(account_id).and_then(|l| l.banned_until)
    }

    pub fn bans_recorded(&self, account_id: &str) -> u64 {
        self.ledgers.get(account_id).map_or(0, |l| l.bans)
    }

    pub fn ledger_snapshot(&self) -> BTreeMap<String, LedgerSnapshot> {
        self.ledgers
            .iter()
            .map(|(id, l)| {
                (
                    id.clone(),
                    LedgerSnapshot {
                        counted: l.counted,
                        in_window: l.window.len(),
                        banned_until: l.banned_until,
                        bans: l.bans,
                    },
                )
            })
            .collect()
    }
}
