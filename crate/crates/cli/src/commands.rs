//! The experiment runners behind each subcommand. All of them are ordinary
//! functions returning structured reports so tests can drive them directly;
//! `main` only parses flags and maps errors to exit codes.

use crate::scenario::{Scenario, ScenarioError, TraceSource};
use lbsn_core::metrics::{self, ErrorSummary, InferredTrace};
use lbsn_core::mobility::stable_hash64;
use lbsn_core::{
    full_attack, run_victims, save_trace, tradeoff_curve, AnchorSampler, AttackError, CurvePoint,
    GeoPoint, GridSpec, GrsMode, ObfuscationPolicy, Oracle, Phase, Session, SweepMode, Trace,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("attack failed: {0}")]
    AttackFailed(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::AttackFailed(_) => 2,
            _ => 1,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports always serialize");
    text.push('\n');
    text
}

fn build_oracle(scenario: &Scenario) -> Result<Oracle, CliError> {
    let policy = scenario.policy_resolved()?;
    Ok(Oracle::new(policy)
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_density(scenario.region.density_per_km2))
}

/// Seed for one attack launch: scenario seed, victim, and launch index
/// folded together so every launch explores differently but reproducibly.
fn launch_seed(base_seed: u64, victim: &str, launch_idx: u64) -> u64 {
    base_seed
        ^ stable_hash64(victim.as_bytes())
        ^ launch_idx.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseQueries {
    pub phase: String,
    pub queries: u64,
}

fn phase_breakdown(log: &[(Phase, u64)]) -> Vec<PhaseQueries> {
    log.iter()
        .map(|(p, q)| PhaseQueries { phase: p.to_string(), queries: *q })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub seed: u64,
    pub policy: String,
    pub victim: String,
    pub outcome: String,
    pub estimate: Option<GeoPoint>,
    pub error_m: Option<f64>,
    pub bound_m: Option<f64>,
    pub reliable: Option<bool>,
    pub queries_total: u64,
    pub queries_by_phase: Vec<PhaseQueries>,
    pub wall_rounds: u32,
    pub simulated_wall_s: u64,
    pub suspensions: u32,
}

/// Single synchronous attack: the victim reports once, the attack fires
/// immediately, and the report compares the estimate with ground truth.
pub fn cmd_attack(scenario: &Scenario, out_dir: &Path) -> Result<AttackReport, CliError> {
    let policy = scenario.policy_resolved()?;
    let traces = scenario.resolve_traces()?;
    let (trace, _) = traces
        .first()
        .ok_or_else(|| CliError::Config("attack scenario needs one victim".into()))?;
    let popularity = scenario.popularity()?;

    let mut oracle = build_oracle(scenario)?;
    let (t0, p0) = trace.points()[0];
    oracle
        .report_location(trace.user_id(), p0, t0)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let cfg = scenario.attack_config(scenario.seed)?;
    let mut session = Session::new(
        &mut oracle,
        scenario.attacker_account(),
        t0,
        cfg.per_query_latency_s,
    );
    let result = full_attack(
        &mut session,
        trace.user_id(),
        &policy,
        scenario.region.density_per_km2,
        popularity.as_ref(),
        &cfg,
    );
    let simulated_wall_s = session.elapsed_s();
    let suspensions = session.suspensions();

    let report = match &result {
        Ok(est) => AttackReport {
            seed: scenario.seed,
            policy: policy.name.clone(),
            victim: trace.user_id().to_string(),
            outcome: "success".into(),
            estimate: Some(est.point),
            error_m: Some(lbsn_core::distance_m(est.point, p0)),
            bound_m: Some(est.bound_m),
            reliable: Some(est.reliable),
            queries_total: est.queries_used,
            queries_by_phase: phase_breakdown(&est.phase_log),
            wall_rounds: est.wall_rounds,
            simulated_wall_s,
            suspensions,
        },
        Err(e) => {
            let (log, queries) = e.partial_log();
            AttackReport {
                seed: scenario.seed,
                policy: policy.name.clone(),
                victim: trace.user_id().to_string(),
                outcome: format!("failure: {e}"),
                estimate: None,
                error_m: None,
                bound_m: None,
                reliable: None,
                queries_total: queries,
                queries_by_phase: phase_breakdown(&log),
                wall_rounds: 0,
                simulated_wall_s,
                suspensions,
            }
        }
    };
    write_file(&out_dir.join("attack_report.json"), &to_pretty_json(&report))?;
    match result {
        Ok(_) => Ok(report),
        Err(e) => Err(CliError::AttackFailed(e.to_string())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VictimTrackReport {
    pub user_id: String,
    pub launches: u64,
    pub failures: u64,
    pub errors: Option<ErrorSummary>,
    /// tnr_table[n - 1] holds row N with one column per week cut.
    pub tnr_table: Vec<Vec<f64>>,
    pub week_cuts: Vec<u64>,
    pub entropy_truth: f64,
    pub entropy_inferred: Option<f64>,
    pub usage_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackReport {
    pub seed: u64,
    pub policy: String,
    pub attack_interval_s: u64,
    pub duration_s: u64,
    pub victims: Vec<VictimTrackReport>,
    pub total_queries: u64,
}

/// Asynchronous tracking campaign: victims report on their own schedules,
/// attacks launch every interval, and the report carries the error series,
/// TNR table at week cuts, and entropy pairs.
pub fn cmd_track(scenario: &Scenario, out_dir: &Path) -> Result<TrackReport, CliError> {
    let policy = scenario.policy_resolved()?;
    let victims = scenario.resolve_traces()?;
    if victims.is_empty() {
        return Err(CliError::Config("track scenario needs at least one victim".into()));
    }
    let popularity = scenario.popularity()?;
    let interval = scenario.attack_interval_s();
    let grid = GridSpec::uniform(scenario.region.origin, metrics::DEFAULT_LOCATION_CELL_M)
        .map_err(|e| CliError::Config(e.to_string()))?;

    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let mut oracle = build_oracle(scenario)?;
    // preload the full report timeline; queries only ever see the past
    run_victims(&mut oracle, &victims, scenario.duration_s, scenario.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut report = TrackReport {
        seed: scenario.seed,
        policy: policy.name.clone(),
        attack_interval_s: interval,
        duration_s: scenario.duration_s,
        victims: Vec::new(),
        total_queries: 0,
    };
    let mut error_rows: Vec<String> =
        vec!["user_id,timestamp_unix_s,error_m".to_string()];

    for (trace, _) in &victims {
        let user = trace.user_id().to_string();
        let account = format!("{}-{user}", scenario.attacker_account());
        let mut inferred = InferredTrace { user_id: user.clone(), points: Vec::new() };
        let mut launches = 0u64;
        let mut failures = 0u64;

        let start = trace.start_t();
        let mut launch_t = start;
        let mut launch_idx = 0u64;
        while launch_t <= start + scenario.duration_s {
            launches += 1;
            let cfg = scenario.attack_config(launch_seed(scenario.seed, &user, launch_idx))?;
            let mut session =
                Session::new(&mut oracle, account.clone(), launch_t, cfg.per_query_latency_s);
            match full_attack(
                &mut session,
                &user,
                &policy,
                scenario.region.density_per_km2,
                popularity.as_ref(),
                &cfg,
            ) {
                Ok(est) => {
                    report.total_queries += est.queries_used;
                    inferred.points.push((launch_t, est));
                }
                Err(e) => {
                    let (_, queries) = e.partial_log();
                    report.total_queries += queries;
                    failures += 1;
                }
            }
            launch_idx += 1;
            launch_t += interval;
        }

        let series = metrics::tracking_error_series(&inferred, trace);
        for (&(t, _), err) in inferred.points.iter().zip(&series) {
            error_rows.push(format!("{user},{t},{err}"));
        }

        let week = 7 * 86_400;
        let week_cuts: Vec<u64> = (1..=3)
            .map(|k| k * week)
            .filter(|&cut| cut <= scenario.duration_s + week)
            .collect();
        let mut tnr_table = Vec::new();
        for n in 1..=5usize {
            let mut row = Vec::new();
            for &cut in &week_cuts {
                let truth_cut = trace
                    .truncated(start + cut)
                    .ok_or_else(|| CliError::Config("empty truth cut".into()))?;
                let inferred_cut = inferred.truncated(start + cut);
                let value = metrics::tnr(&truth_cut, &inferred_cut, n, &grid)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                row.push(value);
            }
            tnr_table.push(row);
        }

        let entropy_truth = metrics::location_entropy(trace, &grid)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let entropy_inferred = if inferred.points.is_empty() {
            None
        } else {
            let as_trace = Trace::new(user.clone(), inferred.positions())
                .map_err(|e| CliError::Config(e.to_string()))?;
            Some(
                metrics::location_entropy(&as_trace, &grid)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            )
        };
        let usage_ratio = metrics::usage_ratio(trace, &inferred, &grid)
            .map_err(|e| CliError::Config(e.to_string()))?;

        // inferred trace in the standard CSV format
        if !inferred.points.is_empty() {
            let as_trace = Trace::new(user.clone(), inferred.positions())
                .map_err(|e| CliError::Config(e.to_string()))?;
            save_trace(out_dir.join(format!("inferred_{user}.csv")), &as_trace)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }

        report.victims.push(VictimTrackReport {
            user_id: user,
            launches,
            failures,
            errors: metrics::summarize_errors(&series),
            tnr_table,
            week_cuts,
            entropy_truth,
            entropy_inferred,
            usage_ratio,
        });
    }

    write_file(&out_dir.join("tracking_errors.csv"), &(error_rows.join("\n") + "\n"))?;
    write_file(&out_dir.join("track_report.json"), &to_pretty_json(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegradationReport {
    pub cell_size_m: f64,
    /// Policy driving the probe attack; the strongest flow (no coverage
    /// bound, 10 m display) gives the most conservative degradation figure.
    pub probe_policy: String,
    pub runs: usize,
    /// Attacks that never produced an estimate (fully blunted).
    pub failures: usize,
    /// Median over all runs, failures counting as unbounded error; `None`
    /// when failures hold the median.
    pub median_error_m: Option<f64>,
    pub errors_m: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigateReport {
    pub seed: u64,
    pub uniform: Vec<CurvePoint>,
    pub classified: Vec<CurvePoint>,
    pub degradation: DegradationReport,
}

/// Mitigation sweep: privacy/utility curves for the uniform and classified
/// grid reference systems, plus the attack rerun against a GRS-wrapped
/// oracle to measure how far the defense blunts it.
pub fn cmd_mitigate(scenario: &Scenario, out_dir: &Path) -> Result<MitigateReport, CliError> {
    let policy = scenario.policy_resolved()?;
    let victims = scenario.resolve_traces()?;
    if victims.is_empty() {
        return Err(CliError::Config("mitigate scenario needs victims".into()));
    }
    let traces: Vec<Trace> = victims.iter().map(|(t, _)| t.clone()).collect();
    let spec = &scenario.mitigation;
    let sampler = AnchorSampler {
        anchors_per_point: spec.anchors_per_point,
        min_radius_m: spec.anchor_min_m,
        max_radius_m: spec.anchor_max_m,
        seed: scenario.seed,
    };

    let uniform = tradeoff_curve(
        &traces,
        scenario.region.origin,
        spec.base_cell_m,
        &sampler,
        SweepMode::Uniform,
        &spec.sweep_sizes_m,
        &policy.quantizer,
        spec.dist_max_m,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let classified = tradeoff_curve(
        &traces,
        scenario.region.origin,
        spec.base_cell_m,
        &sampler,
        SweepMode::Classified { top_size_m: spec.top_size_m, top_n: spec.top_n },
        &spec.sweep_sizes_m,
        &policy.quantizer,
        spec.dist_max_m,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    let mut csv = String::from("mode,cell_size_m,mean_privacy_m,mean_utility\n");
    for point in uniform.iter().chain(classified.iter()) {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            point.mode, point.cell_size_m, point.mean_privacy_m, point.mean_utility
        ));
    }
    write_file(&out_dir.join("tradeoff_curves.csv"), &csv)?;

    // attack degradation against the GRS-protected oracle
    let degradation =
        attack_degradation(scenario, &traces[0], spec.degradation_cell_m, spec.degradation_runs)?;
    let report = MitigateReport { seed: scenario.seed, uniform, classified, degradation };
    write_file(&out_dir.join("mitigate_report.json"), &to_pretty_json(&report))?;
    Ok(report)
}

/// Rerun the localization attack against a GRS-wrapped oracle. The probe
/// uses the strongest attack flow (unlimited coverage, 10 m display) so the
/// residual error isolates what the grid itself withholds.
fn attack_degradation(
    scenario: &Scenario,
    trace: &Trace,
    cell_size_m: f64,
    runs: usize,
) -> Result<DegradationReport, CliError> {
    let grs = GrsMode::uniform(scenario.region.origin, cell_size_m)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let probe_policy = ObfuscationPolicy::momo();
    let mut errors = Vec::with_capacity(runs);
    let mut failures = 0usize;
    for run in 0..runs {
        let mut oracle = Oracle::new(probe_policy.clone())
            .map_err(|e| CliError::Config(e.to_string()))?
            .with_density(scenario.region.density_per_km2)
            .with_grs(grs.clone());
        let (t0, p0) = trace.points()[run % trace.points().len()];
        oracle
            .report_location(trace.user_id(), p0, t0)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut cfg =
            scenario.attack_config(launch_seed(scenario.seed, "degradation", run as u64))?;
        cfg.per_query_latency_s = 55;
        let mut session = Session::new(&mut oracle, format!("grs-{run}"), t0, 55);
        match full_attack(
            &mut session,
            trace.user_id(),
            &probe_policy,
            scenario.region.density_per_km2,
            None,
            &cfg,
        ) {
            Ok(est) => errors.push(lbsn_core::distance_m(est.point, p0)),
            // a failed attack pins nothing down at all
            Err(AttackError::NotFound { .. } | AttackError::NeedsScan { .. }) => failures += 1,
            Err(e) => return Err(CliError::Config(e.to_string())),
        }
    }
    errors.sort_by(f64::total_cmp);
    // failures rank above every finite error when taking the median
    let median_error_m = if failures > runs / 2 { None } else { errors.get(runs / 2).copied() };
    Ok(DegradationReport {
        cell_size_m,
        probe_policy: probe_policy.name,
        runs,
        failures,
        median_error_m,
        errors_m: errors,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenReport {
    pub files: Vec<String>,
    pub rows: Vec<usize>,
}

/// Materialize every synthetic victim's trace as CSV.
pub fn cmd_gen(scenario: &Scenario, out_dir: &Path) -> Result<GenReport, CliError> {
    let mut report = GenReport { files: Vec::new(), rows: Vec::new() };
    for victim in &scenario.victims {
        if let TraceSource::Synthetic { days, anchors } = &victim.trace {
            let trace = crate::scenario::synthesize(&victim.user_id, scenario.seed, *days, anchors)?;
            let path = out_dir.join(format!("{}.csv", victim.user_id));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
            save_trace(&path, &trace).map_err(|e| CliError::Config(e.to_string()))?;
            report.files.push(path.display().to_string());
            report.rows.push(trace.points().len());
        }
    }
    if report.files.is_empty() {
        return Err(CliError::Config("gen scenario has no synthetic victims".into()));
    }
    Ok(report)
}

/// Serve the scenario's oracle over HTTP until interrupted. Victim reports
/// are preloaded so remote attackers see the same world as local runs.
pub fn cmd_serve(scenario: &Scenario, bind: &str) -> Result<(), CliError> {
    let mut oracle = build_oracle(scenario)?;
    let victims = scenario.resolve_traces()?;
    if !victims.is_empty() {
        run_victims(&mut oracle, &victims, scenario.duration_s, scenario.seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let addr: std::net::SocketAddr = bind
        .parse()
        .map_err(|e| CliError::Config(format!("invalid bind address {bind:?}: {e}")))?;

    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: "tokio runtime".into(),
        source,
    })?;
    runtime.block_on(async move {
        let shared = std::sync::Arc::new(std::sync::Mutex::new(oracle));
        let handle = lbsn_service::serve(shared, addr)
            .await
            .map_err(|source| CliError::Io { path: bind.to_string(), source })?;
        eprintln!("serving oracle on {}", handle.local_addr);
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await;
        Ok(())
    })
}

/// Interpolate the utility of a curve at a given privacy level; the curve
/// need not be sorted. `None` outside the curve's privacy span.
pub fn utility_at_privacy(curve: &[CurvePoint], privacy_m: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> =
        curve.iter().map(|c| (c.mean_privacy_m, c.mean_utility)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.is_empty() || privacy_m < pts[0].0 - 1e-9 || privacy_m > pts[pts.len() - 1].0 + 1e-9 {
        return None;
    }
    for w in pts.windows(2) {
        let (p0, u0) = w[0];
        let (p1, u1) = w[1];
        if privacy_m <= p1 + 1e-9 {
            if (p1 - p0).abs() < 1e-12 {
                return Some(u0.max(u1));
            }
            let alpha = ((privacy_m - p0) / (p1 - p0)).clamp(0.0, 1.0);
            return Some(u0 + alpha * (u1 - u0));
        }
    }
    pts.last().map(|&(_, u)| u)
}

pub fn default_out_dir(scenario: &Scenario, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| scenario.outputs.clone())
}
