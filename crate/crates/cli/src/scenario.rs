//! Scenario files bind one experiment together: the policy profile, the
//! victims and their usage patterns, the region, the attack knobs, and the
//! mandatory seed. JSON, documented in the repository README.

use lbsn_core::{
    AnchorSpec, AttackConfig, DwellModel, GeoPoint, ObfuscationPolicy, PopularityMap, Rect,
    Trace, UsagePattern,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("trace error: {0}")]
    Trace(#[from] lbsn_core::TraceError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    /// Every random choice in the run flows from this seed.
    pub seed: u64,
    /// Preset name (momo, skout, wechat-dense, wechat-sparse, exact) or
    /// an inline policy via `policy`.
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub policy: Option<ObfuscationPolicy>,
    pub region: RegionSpec,
    #[serde(default)]
    pub victims: Vec<VictimSpec>,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub popularity_file: Option<PathBuf>,
    #[serde(default)]
    pub mitigation: MitigationSpec,
    /// Campaign horizon in simulated seconds (tracking runs).
    #[serde(default = "default_duration")]
    pub duration_s: u64,
    /// Output directory; the --out flag overrides it.
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
}

fn default_duration() -> u64 {
    21 * 86_400
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    /// Anchor for grids, scan regions, and metric discretization.
    pub origin: GeoPoint,
    /// Users per square kilometer, drives density-dependent coverage.
    #[serde(default)]
    pub density_per_km2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VictimSpec {
    pub user_id: String,
    pub trace: TraceSource,
    #[serde(default)]
    pub pattern: UsagePattern,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    File { path: PathBuf },
    Synthetic { days: u32, anchors: Vec<SyntheticAnchor> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticAnchor {
    pub lat: f64,
    pub lon: f64,
    pub weight: f64,
    #[serde(default = "default_dwell_steps")]
    pub dwell_steps: u32,
    #[serde(default)]
    pub jitter_m: f64,
}

fn default_dwell_steps() -> u32 {
    3
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(default)]
    pub account_id: Option<String>,
    #[serde(default)]
    pub trilateration_threshold_m: Option<f64>,
    #[serde(default)]
    pub partition_threshold_m: Option<f64>,
    #[serde(default)]
    pub scan_region: Option<Rect>,
    #[serde(default)]
    pub scan_spacing_m: Option<f64>,
    #[serde(default)]
    pub initial_anchor_box: Option<Rect>,
    #[serde(default)]
    pub per_query_latency_s: Option<u64>,
    /// Seconds between tracking launches.
    #[serde(default)]
    pub attack_interval_s: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigationSpec {
    #[serde(default = "default_base_cell")]
    pub base_cell_m: f64,
    #[serde(default = "default_sweep")]
    pub sweep_sizes_m: Vec<f64>,
    #[serde(default = "default_top_size")]
    pub top_size_m: f64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_dist_max")]
    pub dist_max_m: f64,
    #[serde(default = "default_anchors_per_point")]
    pub anchors_per_point: usize,
    #[serde(default = "default_anchor_min")]
    pub anchor_min_m: f64,
    #[serde(default = "default_anchor_max")]
    pub anchor_max_m: f64,
    /// Cell size for the attack-degradation rerun.
    #[serde(default = "default_degradation_cell")]
    pub degradation_cell_m: f64,
    #[serde(default = "default_degradation_runs")]
    pub degradation_runs: usize,
}

impl Default for MitigationSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_base_cell() -> f64 {
    100.0
}
fn default_sweep() -> Vec<f64> {
    vec![200.0, 400.0, 600.0, 800.0, 1000.0]
}
fn default_top_size() -> f64 {
    1000.0
}
fn default_top_n() -> usize {
    2
}
fn default_dist_max() -> f64 {
    1000.0
}
fn default_anchors_per_point() -> usize {
    32
}
fn default_anchor_min() -> f64 {
    500.0
}
fn default_anchor_max() -> f64 {
    5000.0
}
fn default_degradation_cell() -> f64 {
    400.0
}
fn default_degradation_runs() -> usize {
    21
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut scenario: Scenario = serde_json::from_str(&text)?;
        // trace paths are relative to the scenario file
        let dir = path.parent().unwrap_or(Path::new("."));
        for victim in &mut scenario.victims {
            if let TraceSource::File { path } = &mut victim.trace {
                if path.is_relative() {
                    *path = dir.join(&path);
                }
            }
        }
        if let Some(p) = &mut scenario.popularity_file {
            if p.is_relative() {
                *p = dir.join(&p);
            }
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.policy_resolved()?;
        for victim in &self.victims {
            victim.pattern.validate()?;
            match &victim.trace {
                TraceSource::File { path } => {
                    if !path.exists() {
                        return Err(ScenarioError::Invalid(format!(
                            "trace file {} does not exist",
                            path.display()
                        )));
                    }
                }
                TraceSource::Synthetic { days, anchors } => {
                    if *days == 0 {
                        return Err(ScenarioError::Invalid("synthetic days must be >= 1".into()));
                    }
                    if anchors.len() < 2 {
                        return Err(ScenarioError::Invalid(
                            "synthetic traces need at least 2 anchors".into(),
                        ));
                    }
                    for a in anchors {
                        if !(a.weight > 0.0) {
                            return Err(ScenarioError::Invalid(
                                "anchor weights must be > 0".into(),
                            ));
                        }
                    }
                }
            }
        }
        if let Some(p) = &self.popularity_file {
            if !p.exists() {
                return Err(ScenarioError::Invalid(format!(
                    "popularity file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn policy_resolved(&self) -> Result<ObfuscationPolicy, ScenarioError> {
        let policy = match (&self.policy, &self.profile) {
            (Some(p), _) => p.clone(),
            (None, Some(name)) => ObfuscationPolicy::preset(name).ok_or_else(|| {
                ScenarioError::Invalid(format!(
                    "unknown profile {name:?} (expected momo, skout, wechat-dense, \
                     wechat-sparse, or exact)"
                ))
            })?,
            (None, None) => {
                return Err(ScenarioError::Invalid(
                    "scenario needs either a profile name or an inline policy".into(),
                ))
            }
        };
        policy
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(policy)
    }

    /// Attack knobs: per-policy defaults overlaid with scenario overrides.
    pub fn attack_config(&self, seed: u64) -> Result<AttackConfig, ScenarioError> {
        let policy = self.policy_resolved()?;
        let mut cfg = AttackConfig::for_policy(&policy, seed);
        let spec = &self.attack;
        if let Some(v) = spec.trilateration_threshold_m {
            cfg.trilateration_threshold_m = v;
        }
        if let Some(v) = spec.partition_threshold_m {
            cfg.partition_threshold_m = v;
        }
        if let Some(v) = spec.scan_region {
            cfg.scan_region = Some(v);
        }
        if let Some(v) = spec.scan_spacing_m {
            cfg.scan_spacing_m = v;
        }
        if let Some(v) = spec.initial_anchor_box {
            cfg.initial_anchor_box = v;
        }
        if let Some(v) = spec.per_query_latency_s {
            cfg.per_query_latency_s = v;
        }
        cfg.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn attack_interval_s(&self) -> u64 {
        self.attack.attack_interval_s.unwrap_or(2400)
    }

    pub fn attacker_account(&self) -> String {
        self.attack.account_id.clone().unwrap_or_else(|| "attacker".into())
    }

    /// Load or synthesize every victim's trace, in scenario order.
    pub fn resolve_traces(&self) -> Result<Vec<(Trace, UsagePattern)>, ScenarioError> {
        let mut out = Vec::with_capacity(self.victims.len());
        for victim in &self.victims {
            let trace = match &victim.trace {
                TraceSource::File { path } => {
                    let trace = lbsn_core::load_trace(path)?;
                    if trace.user_id() != victim.user_id {
                        return Err(ScenarioError::Invalid(format!(
                            "trace file {} carries user {:?}, expected {:?}",
                            path.display(),
                            trace.user_id(),
                            victim.user_id
                        )));
                    }
                    trace
                }
                TraceSource::Synthetic { days, anchors } => synthesize(
                    &victim.user_id,
                    self.seed,
                    *days,
                    anchors,
                )?,
            };
            out.push((trace, victim.pattern));
        }
        Ok(out)
    }

    pub fn popularity(&self) -> Result<Option<PopularityMap>, ScenarioError> {
        match &self.popularity_file {
            Some(path) => Ok(Some(PopularityMap::load(path)?)),
            None => Ok(None),
        }
    }
}

pub fn synthesize(
    user_id: &str,
    seed: u64,
    days: u32,
    anchors: &[SyntheticAnchor],
) -> Result<Trace, ScenarioError> {
    let specs: Vec<AnchorSpec> = anchors
        .iter()
        .map(|a| {
            Ok(AnchorSpec {
                point: GeoPoint::new(a.lat, a.lon)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
                weight: a.weight,
                dwell: DwellModel::Fixed { steps: a.dwell_steps.max(1) },
                jitter_m: a.jitter_m,
            })
        })
        .collect::<Result<_, ScenarioError>>()?;
    let per_user_seed = seed ^ lbsn_core::mobility::stable_hash64(user_id.as_bytes());
    Ok(lbsn_core::synthesize_trace(user_id, per_user_seed, days, &specs)?)
}
