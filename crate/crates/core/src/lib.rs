//! Desk-scale simulator of location-based social-discovery distance
//! oracles: the obfuscation policies real apps use, the localization
//! attacks that break them (iterative trilateration, space partition,
//! coverage scanning), the evaluation metrics, and the grid-reference
//! mitigation.
//!
//! Everything is deterministic: simulated clocks travel in every call and
//! all randomness flows from explicit seeds.

pub mod attacker;
pub mod geo;
pub mod metrics;
pub mod mitigation;
pub mod mobility;
pub mod oracle;

pub use attacker::{
    full_attack, iterative_trilateration, lsp, scan, space_partition, AnchorReading,
    AttackConfig, AttackError, DistanceOracle, Estimate, MembershipRule, Phase, Rect, Session,
};
pub use geo::{cell_center, cell_of, distance_m, offset_m, CellIndex, GeoError, GeoPoint, GridSpec};
pub use metrics::{
    location_entropy, summarize_errors, tnr, top_n, tracking_error_series, usage_ratio,
    ErrorSummary, InferredTrace, TopNResult,
};
pub use mitigation::{
    grs_distance, privacy_gain, tradeoff_curve, utility, AnchorSampler, CurvePoint, GrsMode,
    MitigationError, PrivacyProfile, SweepMode, Utility,
};
pub use mobility::{
    load_trace, report_schedule, run_victims, save_trace, synthesize_trace, AnchorSpec,
    DwellModel, PopularityMap, ReportEvent, Trace, TraceError, UsagePattern,
};
pub use oracle::{
    effective_coverage, quantize, Coverage, DisplayedDistance, DistanceReply, LedgerSnapshot,
    NearbyReply, ObfuscationPolicy, Oracle, OracleError, Quantizer, RateLimit,
};
