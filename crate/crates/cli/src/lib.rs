//! Experiment runner for the LBSN distance-oracle simulator: seeded single
//! attacks, multi-week tracking campaigns, mitigation sweeps, synthetic
//! trace generation, and the HTTP oracle server.

pub mod commands;
pub mod scenario;

pub use commands::{
    cmd_attack, cmd_gen, cmd_mitigate, cmd_serve, cmd_track, utility_at_privacy, AttackReport,
    CliError, DegradationReport, GenReport, MitigateReport, TrackReport, VictimTrackReport,
};
pub use scenario::{
    AttackSpec, MitigationSpec, RegionSpec, Scenario, ScenarioError, SyntheticAnchor,
    TraceSource, VictimSpec,
};
