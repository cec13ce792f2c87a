//! Command-level tests: report shapes, determinism, exit codes, and the
//! scenario wire formats.

use lbsn_cli::{commands, Scenario};
use std::path::Path;
use std::process::Command;

fn scenario_from_json(json: &str, dir: &Path) -> Scenario {
    let path = dir.join("scenario.json");
    std::fs::write(&path, json).unwrap();
    Scenario::load(&path).unwrap()
}

fn momo_attack_json() -> String {
    r#"{
        "seed": 42,
        "profile": "momo",
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}, "density_per_km2": 5000.0},
        "victims": [{
            "user_id": "victim-1",
            "trace": {"kind": "synthetic", "days": 1, "anchors": [
                {"lat": 31.2415, "lon": 121.4985, "weight": 3.0},
                {"lat": 31.2183, "lon": 121.4512, "weight": 1.0}
            ]}
        }],
        "attack": {"initial_anchor_box": {
            "south_west": {"lat": 31.10, "lon": 121.32},
            "north_east": {"lat": 31.36, "lon": 121.63}
        }}
    }"#
    .to_string()
}

#[test]
fn attack_report_is_deterministic_and_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_from_json(&momo_attack_json(), dir.path());

    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let report = commands::cmd_attack(&scenario, &out1).unwrap();
    commands::cmd_attack(&scenario, &out2).unwrap();

    assert!(report.error_m.unwrap() <= 10.0);
    let bytes1 = std::fs::read(out1.join("attack_report.json")).unwrap();
    let bytes2 = std::fs::read(out2.join("attack_report.json")).unwrap();
    assert_eq!(bytes1, bytes2, "same scenario + seed must be byte-identical");
}

#[test]
fn different_seed_changes_the_run_but_stays_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = scenario_from_json(&momo_attack_json(), dir.path());
    let baseline = commands::cmd_attack(&scenario, &dir.path().join("s42")).unwrap();
    scenario.seed = 43;
    let other = commands::cmd_attack(&scenario, &dir.path().join("s43")).unwrap();
    assert!(other.error_m.unwrap() <= 10.0);
    assert!(
        baseline.estimate != other.estimate || baseline.queries_total != other.queries_total,
        "different seeds should explore differently"
    );
}

#[test]
fn victim_outside_scan_region_fails_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "seed": 3,
        "profile": "wechat-dense",
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}, "density_per_km2": 5000.0},
        "victims": [{
            "user_id": "victim-1",
            "trace": {"kind": "synthetic", "days": 1, "anchors": [
                {"lat": 31.40, "lon": 121.80, "weight": 1.0},
                {"lat": 31.41, "lon": 121.81, "weight": 1.0}
            ]}
        }],
        "attack": {"scan_region": {
            "south_west": {"lat": 31.2304, "lon": 121.4737},
            "north_east": {"lat": 31.2574, "lon": 121.5263}
        }}
    }"#;
    let scenario = scenario_from_json(json, dir.path());
    let out = dir.path().join("out");
    let err = commands::cmd_attack(&scenario, &out).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    // the failure report still landed, with the scan phase logged
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("attack_report.json")).unwrap())
            .unwrap();
    assert!(report["outcome"].as_str().unwrap().starts_with("failure"));
    assert_eq!(report["queries_by_phase"][0]["phase"], "scan");
}

#[test]
fn track_report_shape_and_inferred_trace_format() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "seed": 7,
        "profile": "momo",
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}, "density_per_km2": 5000.0},
        "victims": [{
            "user_id": "victim-1",
            "trace": {"kind": "synthetic", "days": 3, "anchors": [
                {"lat": 31.2415, "lon": 121.4985, "weight": 3.0},
                {"lat": 31.2183, "lon": 121.4512, "weight": 1.0}
            ]}
        }],
        "attack": {"attack_interval_s": 2400, "initial_anchor_box": {
            "south_west": {"lat": 31.10, "lon": 121.32},
            "north_east": {"lat": 31.36, "lon": 121.63}
        }},
        "duration_s": 259200
    }"#;
    let scenario = scenario_from_json(json, dir.path());
    let out = dir.path().join("out");
    let report = commands::cmd_track(&scenario, &out).unwrap();
    let victim = &report.victims[0];
    assert_eq!(victim.tnr_table.len(), 5);
    assert_eq!(victim.week_cuts, vec![7 * 86_400]);
    assert!(victim.launches > 100);

    // the inferred trace re-parses through the standard CSV reader
    let inferred = lbsn_core::load_trace(out.join("inferred_victim-1.csv")).unwrap();
    assert_eq!(inferred.user_id(), "victim-1");
    assert!(inferred.points().len() as u64 + victim.failures >= victim.launches);

    let errors_csv = std::fs::read_to_string(out.join("tracking_errors.csv")).unwrap();
    assert!(errors_csv.starts_with("user_id,timestamp_unix_s,error_m\n"));
}

#[test]
fn track_outputs_are_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "seed": 21,
        "profile": "momo",
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}, "density_per_km2": 5000.0},
        "victims": [{
            "user_id": "victim-1",
            "trace": {"kind": "synthetic", "days": 2, "anchors": [
                {"lat": 31.2415, "lon": 121.4985, "weight": 3.0},
                {"lat": 31.2183, "lon": 121.4512, "weight": 1.0}
            ]}
        }],
        "attack": {"initial_anchor_box": {
            "south_west": {"lat": 31.10, "lon": 121.32},
            "north_east": {"lat": 31.36, "lon": 121.63}
        }},
        "duration_s": 172800
    }"#;
    let scenario = scenario_from_json(json, dir.path());
    let out1 = dir.path().join("r1");
    let out2 = dir.path().join("r2");
    commands::cmd_track(&scenario, &out1).unwrap();
    commands::cmd_track(&scenario, &out2).unwrap();
    for name in ["track_report.json", "tracking_errors.csv", "inferred_victim-1.csv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn gen_writes_the_documented_row_count_and_rejects_bad_weights() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "seed": 9,
        "profile": "momo",
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}},
        "victims": [{
            "user_id": "v",
            "trace": {"kind": "synthetic", "days": 21, "anchors": [
                {"lat": 31.2415, "lon": 121.4985, "weight": 3.0},
                {"lat": 31.2183, "lon": 121.4512, "weight": 1.0}
            ]}
        }]
    }"#;
    let scenario = scenario_from_json(json, dir.path());
    let out = dir.path().join("out");
    let report = commands::cmd_gen(&scenario, &out).unwrap();
    assert_eq!(report.rows, vec![21 * 48]);
    let text = std::fs::read_to_string(out.join("v.csv")).unwrap();
    assert_eq!(text.lines().count(), 21 * 48 + 1); // header included

    // zero weight is a config error
    let bad = json.replace("\"weight\": 1.0", "\"weight\": 0.0");
    std::fs::write(dir.path().join("bad.json"), bad).unwrap();
    assert!(Scenario::load(&dir.path().join("bad.json")).is_err());
}

#[test]
fn track_with_victim_outside_region_logs_failures_and_zero_tnr() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "seed": 13,
        "profile": "wechat-dense",
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}, "density_per_km2": 5000.0},
        "victims": [{
            "user_id": "victim-1",
            "trace": {"kind": "synthetic", "days": 1, "anchors": [
                {"lat": 31.40, "lon": 121.80, "weight": 1.0},
                {"lat": 31.41, "lon": 121.81, "weight": 1.0}
            ]}
        }],
        "attack": {"scan_region": {
            "south_west": {"lat": 31.2304, "lon": 121.4737},
            "north_east": {"lat": 31.2574, "lon": 121.5263}
        }},
        "duration_s": 86400
    }"#;
    let scenario = scenario_from_json(json, dir.path());
    let report = commands::cmd_track(&scenario, &dir.path().join("out")).unwrap();
    let victim = &report.victims[0];
    assert_eq!(victim.failures, victim.launches, "every launch should miss");
    assert!(victim.errors.is_none());
    for row in &victim.tnr_table {
        assert!(row.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn inline_policy_replaces_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    // a custom service: 50 m floor buckets, fixed 2 km coverage, tight limit
    let json = r#"{
        "seed": 4,
        "policy": {
            "name": "custom-app",
            "quantizer": {"kind": "floor_bucket", "step_m": 50.0},
            "min_display_m": 50.0,
            "coverage": {"kind": "fixed", "radius_m": 2000.0},
            "max_nearby": 10,
            "cache_ttl_s": 3600,
            "rate_limit": {"max_queries": 200, "window_s": 3600, "ban_s": 7200}
        },
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}, "density_per_km2": 100.0},
        "victims": [{
            "user_id": "victim-1",
            "trace": {"kind": "synthetic", "days": 1, "anchors": [
                {"lat": 31.2350, "lon": 121.4790, "weight": 2.0},
                {"lat": 31.2330, "lon": 121.4760, "weight": 1.0}
            ]}
        }],
        "attack": {
            "scan_region": {
                "south_west": {"lat": 31.2304, "lon": 121.4737},
                "north_east": {"lat": 31.2404, "lon": 121.4857}
            },
            "scan_spacing_m": 1500.0,
            "partition_threshold_m": 10.0
        }
    }"#;
    let scenario = scenario_from_json(json, dir.path());
    assert_eq!(scenario.policy_resolved().unwrap().name, "custom-app");
    let report = commands::cmd_attack(&scenario, &dir.path().join("out")).unwrap();
    assert_eq!(report.policy, "custom-app");
    // coverage-limited custom policy takes the scan-then-partition path
    assert_eq!(report.queries_by_phase[0].phase, "scan");
    assert!(report.error_m.unwrap() <= 60.0, "error {:?}", report.error_m);
}

#[test]
fn scenario_with_missing_trace_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "seed": 1,
        "profile": "momo",
        "region": {"origin": {"lat": 31.0, "lon": 121.0}},
        "victims": [{
            "user_id": "v",
            "trace": {"kind": "file", "path": "does-not-exist.csv"}
        }]
    }"#;
    std::fs::write(dir.path().join("scenario.json"), json).unwrap();
    assert!(Scenario::load(&dir.path().join("scenario.json")).is_err());
}

#[test]
fn file_traces_round_trip_through_gen_and_attack() {
    let dir = tempfile::tempdir().unwrap();
    let gen_scenario = scenario_from_json(&momo_attack_json(), dir.path());
    let traces_dir = dir.path().join("traces");
    commands::cmd_gen(&gen_scenario, &traces_dir).unwrap();

    let json = format!(
        r#"{{
        "seed": 42,
        "profile": "momo",
        "region": {{"origin": {{"lat": 31.2304, "lon": 121.4737}}, "density_per_km2": 5000.0}},
        "victims": [{{
            "user_id": "victim-1",
            "trace": {{"kind": "file", "path": {:?}}}
        }}],
        "attack": {{"initial_anchor_box": {{
            "south_west": {{"lat": 31.10, "lon": 121.32}},
            "north_east": {{"lat": 31.36, "lon": 121.63}}
        }}}}
    }}"#,
        traces_dir.join("victim-1.csv")
    );
    let scenario = scenario_from_json(&json, dir.path());
    let report = commands::cmd_attack(&scenario, &dir.path().join("out")).unwrap();
    assert!(report.error_m.unwrap() <= 10.0);
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let exe = env!("CARGO_BIN_EXE_lbsn-sim");
    let dir = tempfile::tempdir().unwrap();

    // config error: missing scenario file -> 1
    let out = Command::new(exe)
        .args(["attack", "--scenario", "nope.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // unknown profile -> 1
    std::fs::write(dir.path().join("s.json"), momo_attack_json()).unwrap();
    let out = Command::new(exe)
        .args([
            "attack",
            "--scenario",
            dir.path().join("s.json").to_str().unwrap(),
            "--profile",
            "frobnicate",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // success -> 0
    let out_dir = dir.path().join("ok");
    let out = Command::new(exe)
        .args([
            "attack",
            "--scenario",
            dir.path().join("s.json").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // attack failure -> 2 (victim far outside the scan region)
    let fail_json = r#"{
        "seed": 3,
        "profile": "wechat-dense",
        "region": {"origin": {"lat": 31.2304, "lon": 121.4737}, "density_per_km2": 5000.0},
        "victims": [{
            "user_id": "victim-1",
            "trace": {"kind": "synthetic", "days": 1, "anchors": [
                {"lat": 31.40, "lon": 121.80, "weight": 1.0},
                {"lat": 31.41, "lon": 121.81, "weight": 1.0}
            ]}
        }],
        "attack": {"scan_region": {
            "south_west": {"lat": 31.2304, "lon": 121.4737},
            "north_east": {"lat": 31.2574, "lon": 121.5263}
        }}
    }"#;
    std::fs::write(dir.path().join("fail.json"), fail_json).unwrap();
    let out = Command::new(exe)
        .args([
            "attack",
            "--scenario",
            dir.path().join("fail.json").to_str().unwrap(),
            "--out",
            dir.path().join("failout").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_override_flag_changes_outputs() {
    let exe = env!("CARGO_BIN_EXE_lbsn-sim");
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), momo_attack_json()).unwrap();
    let run = |seed: &str, out: &str| {
        let status = Command::new(exe)
            .args([
                "attack",
                "--scenario",
                dir.path().join("s.json").to_str().unwrap(),
                "--seed",
                seed,
                "--out",
                dir.path().join(out).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join(out).join("attack_report.json")).unwrap()
    };
    let a = run("100", "a");
    let b = run("100", "b");
    let c = run("101", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
