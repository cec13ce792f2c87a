//! Acceptance suite: every exit criterion runs here at its stated
//! tolerance and prints one pass/fail line. Field means measured against
//! live services (25.82 m Momo / 129.37 m Skout / 51.09 m Wechat) include
//! real-world provider noise and are documented as upper envelopes, not
//! asserted; the idealized-oracle bounds below are the contract.

use lbsn_core::attacker::{bisect_box, iterative_trilateration, scan};
use lbsn_core::metrics::{self, InferredTrace};
use lbsn_core::mobility::{synthesize_trace, AnchorSpec, DwellModel, UsagePattern};
use lbsn_core::oracle::{DistanceReply, NearbyReply};
use lbsn_core::{
    distance_m, full_attack, offset_m, run_victims, tradeoff_curve, AnchorSampler, AttackConfig,
    AttackError, GeoPoint, GridSpec, ObfuscationPolicy, Oracle, Quantizer, RateLimit, Rect,
    Session, SweepMode, Trace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::AssertUnwindSafe;

fn criterion(n: u32, label: &str, body: impl FnOnce()) {
    let start = std::time::Instant::now();
    match std::panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!(
            "acceptance: criterion {n:2} ({label}) ... PASS [{:.2}s]",
            start.elapsed().as_secs_f64()
        ),
        Err(e) => {
            println!("acceptance: criterion {n:2} ({label}) ... FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

fn shanghai() -> GeoPoint {
    GeoPoint::new(31.2304, 121.4737).unwrap()
}

fn box_around(p: GeoPoint, half_m: f64) -> Rect {
    Rect {
        south_west: offset_m(p, -half_m, -half_m).unwrap(),
        north_east: offset_m(p, half_m, half_m).unwrap(),
    }
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_quantizer_staircases() {
    criterion(1, "quantizer staircases", || {
        // independent staircase oracles, written directly from the
        // observed display behavior
        let momo_expect = |d: f64| {
            let k = (d / 10.0).floor();
            let rem = d - 10.0 * k;
            if rem < 5.0 {
                10.0 * k
            } else {
                10.0 * (k + 1.0)
            }
        };
        let skout_expect = |d: f64| {
            if d <= 804.5 {
                804.5
            } else {
                let mut v = 804.5;
                while v < d {
                    v += 1609.0;
                }
                v
            }
        };
        let wechat_expect = |d: f64| {
            let mut v = 0.0;
            while v + 100.0 <= d {
                v += 100.0;
            }
            v
        };

        let momo = ObfuscationPolicy::momo().quantizer;
        let skout = ObfuscationPolicy::skout().quantizer;
        let wechat = ObfuscationPolicy::wechat_dense().quantizer;

        let mut d = 0.0;
        while d <= 5000.0 {
            assert_eq!(momo.quantize(d), momo_expect(d), "momo at {d}");
            assert_eq!(skout.quantize(d), skout_expect(d), "skout at {d}");
            assert_eq!(wechat.quantize(d), wechat_expect(d), "wechat at {d}");
            d += 0.25;
        }
        // the anchor cases from the precision figures
        assert_eq!(momo.quantize(3.0), 0.0);
        assert_eq!(momo.quantize(4.999), 0.0);
        assert_eq!(momo.quantize(5.0), 10.0);
        assert_eq!(skout.quantize(200.0), 804.5);
        assert_eq!(wechat.quantize(250.0), 200.0);
    });
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_iterative_trilateration_exact_oracle() {
    criterion(2, "iterative trilateration, exact oracle", || {
        let base = shanghai();
        let anchor_box = box_around(base, 15_000.0);
        let mut placement = ChaCha8Rng::seed_from_u64(0x0222);
        let mut rounds_seen = Vec::with_capacity(100);
        for seed in 0..100u64 {
            let target = offset_m(
                base,
                placement.gen_range(-14_000.0..14_000.0),
                placement.gen_range(-14_000.0..14_000.0),
            )
            .unwrap();
            let mut oracle = Oracle::new(ObfuscationPolicy::exact()).unwrap();
            oracle.report_location("victim", target, 0).unwrap();
            let mut session = Session::new(&mut oracle, "a", 0, 0);
            let mut cfg = AttackConfig::for_policy(&ObfuscationPolicy::exact(), seed);
            cfg.initial_anchor_box = anchor_box;
            cfg.trilateration_threshold_m = 10.0;
            let est = iterative_trilateration(&mut session, "victim", &cfg).unwrap();
            let err = distance_m(est.point, target);
            assert!(err <= 10.0, "seed {seed}: error {err}");
            rounds_seen.push(est.wall_rounds);
        }
        rounds_seen.sort_unstable();
        let median = rounds_seen[rounds_seen.len() / 2];
        assert!(median <= 8, "median rounds {median}");

        // global scale: continental anchors, target near Buffalo NY;
        // the field anecdote finished in 5 rounds, asserted loosely
        let china = Rect {
            south_west: GeoPoint::new(30.0, 104.0).unwrap(),
            north_east: GeoPoint::new(40.0, 122.0).unwrap(),
        };
        let buffalo = GeoPoint::new(42.8864, -78.8784).unwrap();
        let mut oracle = Oracle::new(ObfuscationPolicy::exact()).unwrap();
        oracle.report_location("victim", buffalo, 0).unwrap();
        let mut session = Session::new(&mut oracle, "a", 0, 0);
        let mut cfg = AttackConfig::for_policy(&ObfuscationPolicy::exact(), 7);
        cfg.initial_anchor_box = china;
        cfg.trilateration_threshold_m = 10.0;
        let est = iterative_trilateration(&mut session, "victim", &cfg).unwrap();
        assert!(distance_m(est.point, buffalo) <= 10.0);
        assert!(est.wall_rounds <= 12, "global rounds {}", est.wall_rounds);
    });
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_space_partition_box_oracle() {
    criterion(3, "space partition, box-membership oracle", || {
        let r = 804.5f64;
        let threshold = 25.0;
        let expected_queries = 2 * (r / threshold).log2().ceil() as u32;
        assert_eq!(expected_queries, 12);
        let mut placement = ChaCha8Rng::seed_from_u64(0x0333);
        for run in 0..100 {
            let target = (placement.gen_range(-r..r), placement.gen_range(-r..r));
            let out = bisect_box(r, threshold, |e, n| {
                ((target.0 - e).abs() <= r && (target.1 - n).abs() <= r, false)
            });
            assert_eq!(out.probes, expected_queries, "run {run}");
            let ex = (out.east_m - target.0).abs();
            let ey = (out.north_m - target.1).abs();
            assert!(ex <= 50.0 && ey <= 50.0, "run {run}: per-axis errors ({ex}, {ey})");
            assert!(!out.contradiction);
        }
    });
}

// ---------------------------------------------------------------- 4 & 5

fn end_to_end_errors(policy: ObfuscationPolicy, n_runs: u64) -> Vec<f64> {
    let base = shanghai();
    let mut placement = ChaCha8Rng::seed_from_u64(0x0445);
    let mut errors = Vec::with_capacity(n_runs as usize);
    for seed in 0..n_runs {
        let target = offset_m(
            base,
            placement.gen_range(-14_000.0..14_000.0),
            placement.gen_range(-14_000.0..14_000.0),
        )
        .unwrap();
        let mut oracle = Oracle::new(policy.clone()).unwrap();
        oracle.report_location("victim", target, 0).unwrap();
        let mut cfg = AttackConfig::for_policy(&policy, seed);
        cfg.initial_anchor_box = box_around(base, 15_000.0);
        let mut session = Session::new(&mut oracle, "a", 0, cfg.per_query_latency_s);
        let est = full_attack(&mut session, "victim", &policy, 0.0, None, &cfg)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        errors.push(distance_m(est.point, target));
    }
    errors
}

#[test]
fn criterion_04_momo_end_to_end() {
    criterion(4, "momo end-to-end, quantized oracle", || {
        let errors = end_to_end_errors(ObfuscationPolicy::momo(), 100);
        let within = errors.iter().filter(|&&e| e <= 10.0).count();
        // the 25.82 m field mean over live services is an upper envelope;
        // the idealized oracle must hit the 10 m policy floor
        assert!(within >= 95, "only {within}/100 within 10 m; errors {errors:?}");
    });
}

#[test]
fn criterion_05_skout_end_to_end() {
    criterion(5, "skout end-to-end, quantized oracle", || {
        let errors = end_to_end_errors(ObfuscationPolicy::skout(), 100);
        let within = errors.iter().filter(|&&e| e <= 150.0).count();
        // box-vs-disc corner effects included; the 804.5 m floor is beaten
        // well below the field's sub-60 m typical accuracy claim
        assert!(within >= 90, "only {within}/100 within 150 m; errors {errors:?}");
    });
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_scan_bounds_and_popularity() {
    criterion(6, "coverage scan bounds", || {
        // 28 km^2 at 1 km spacing, dense coverage: 28 probes worst case
        let base = shanghai();
        let region = Rect {
            south_west: base,
            north_east: offset_m(base, 7000.0, 4000.0).unwrap(),
        };
        let mut oracle =
            Oracle::new(ObfuscationPolicy::wechat_dense()).unwrap().with_density(5000.0);
        oracle
            .report_location("victim", offset_m(base, 80_000.0, 0.0).unwrap(), 0)
            .unwrap();
        let mut session = Session::new(&mut oracle, "a", 0, 0);
        match scan(&mut session, "victim", &region, 1000.0, None) {
            Err(AttackError::NotFound { queries_used, .. }) => {
                assert_eq!(queries_used, 28, "worst case must exhaust exactly the 28 cells")
            }
            other => panic!("unexpected {other:?}"),
        }
        // a target in the last-visited cell is still found within 28
        let mut oracle =
            Oracle::new(ObfuscationPolicy::wechat_dense()).unwrap().with_density(5000.0);
        oracle
            .report_location("victim", offset_m(base, 6500.0, 3500.0).unwrap(), 0)
            .unwrap();
        let mut session = Session::new(&mut oracle, "a", 0, 0);
        scan(&mut session, "victim", &region, 1000.0, None).unwrap();
        assert!(session.queries_used() <= 28);

        // sparse 10 km coverage: a 20 km x 20 km downtown in <= 5 probes
        let region = Rect {
            south_west: base,
            north_east: offset_m(base, 20_000.0, 20_000.0).unwrap(),
        };
        let mut oracle =
            Oracle::new(ObfuscationPolicy::wechat_sparse()).unwrap().with_density(10.0);
        oracle
            .report_location("victim", offset_m(base, 18_000.0, 17_000.0).unwrap(), 0)
            .unwrap();
        let mut session = Session::new(&mut oracle, "a", 0, 0);
        scan(&mut session, "victim", &region, 10_000.0, None).unwrap();
        assert!(session.queries_used() <= 5, "{} probes", session.queries_used());

        // popularity priority: top cell probed first
        let region = Rect {
            south_west: base,
            north_east: offset_m(base, 7000.0, 4000.0).unwrap(),
        };
        let mut oracle =
            Oracle::new(ObfuscationPolicy::wechat_dense()).unwrap().with_density(5000.0);
        oracle
            .report_location("victim", offset_m(base, 4500.0, 2500.0).unwrap(), 0)
            .unwrap();
        let mut map = lbsn_core::PopularityMap::new();
        map.set(4, 2, 0, 900.0);
        map.set(0, 0, 0, 100.0);
        let mut session = Session::new(&mut oracle, "a", 0, 0);
        scan(&mut session, "victim", &region, 1000.0, Some(&map)).unwrap();
        assert_eq!(session.queries_used(), 1, "most popular cell must be probed first");
    });
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_tracking_campaign_tnr() {
    criterion(7, "21-day tracking campaign TNR", || {
        let base = shanghai();
        let grid = GridSpec::uniform(base, 100.0).unwrap();
        let heavy = offset_m(base, 1250.0, 750.0).unwrap(); // mid-cell anchor
        let light = offset_m(base, -2350.0, -1450.0).unwrap();
        let anchors = [
            AnchorSpec {
                point: heavy,
                weight: 3.0,
                dwell: DwellModel::Fixed { steps: 3 },
                jitter_m: 0.0,
            },
            AnchorSpec {
                point: light,
                weight: 1.0,
                dwell: DwellModel::Fixed { steps: 3 },
                jitter_m: 0.0,
            },
        ];
        let policy = ObfuscationPolicy::momo();
        let week = 7 * 86_400u64;
        let duration = 3 * week;
        let interval = 2400u64;

        let mut perfect_at_three_weeks = 0;
        let mut monotone_seeds = 0;
        let mut mean_tnr1 = [0.0f64; 3];
        for seed in 0..20u64 {
            let trace = synthesize_trace("victim", seed, 21, &anchors).unwrap();
            let mut oracle = Oracle::new(policy.clone()).unwrap();
            run_victims(
                &mut oracle,
                &[(trace.clone(), UsagePattern::default())],
                duration,
                seed,
            )
            .unwrap();

            let mut inferred = InferredTrace { user_id: "victim".into(), points: vec![] };
            let mut launch_t = trace.start_t();
            let mut launch_idx = 0u64;
            while launch_t <= trace.start_t() + duration {
                let mut cfg = AttackConfig::for_policy(&policy, seed ^ (launch_idx << 17));
                cfg.initial_anchor_box = box_around(base, 15_000.0);
                let mut session =
                    Session::new(&mut oracle, "acc", launch_t, cfg.per_query_latency_s);
                if let Ok(est) = full_attack(&mut session, "victim", &policy, 0.0, None, &cfg) {
                    inferred.points.push((launch_t, est));
                }
                launch_idx += 1;
                launch_t += interval;
            }

            let mut tnr1 = [0.0f64; 3];
            for (i, cut) in (1..=3).map(|k| k as u64 * week).enumerate() {
                let truth_cut = trace.truncated(trace.start_t() + cut).unwrap();
                let inferred_cut = inferred.truncated(trace.start_t() + cut);
                tnr1[i] = metrics::tnr(&truth_cut, &inferred_cut, 1, &grid).unwrap();
                mean_tnr1[i] += tnr1[i] / 20.0;
            }
            if tnr1[2] == 1.0 {
                perfect_at_three_weeks += 1;
            }
            if tnr1[0] <= tnr1[1] && tnr1[1] <= tnr1[2] {
                monotone_seeds += 1;
            }
        }
        assert!(
            perfect_at_three_weeks >= 18,
            "three-week top-1 recovered in only {perfect_at_three_weeks}/20 seeds"
        );
        assert!(monotone_seeds >= 18, "TNR1 non-monotone in {}/20 seeds", 20 - monotone_seeds);
        assert!(
            mean_tnr1[0] <= mean_tnr1[1] + 1e-12 && mean_tnr1[1] <= mean_tnr1[2] + 1e-12,
            "mean TNR1 not non-decreasing: {mean_tnr1:?}"
        );
    });
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_metrics_unit_values() {
    criterion(8, "metrics unit suite", || {
        let base = shanghai();
        let grid = GridSpec::uniform(base, 100.0).unwrap();
        let cell = |ix: f64, iy: f64| offset_m(base, ix * 100.0 + 50.0, iy * 100.0 + 50.0).unwrap();

        // entropy: single cell -> 0
        let single = Trace::new("u", vec![(0, cell(0.0, 0.0)), (10, cell(0.0, 0.0))]).unwrap();
        assert!(metrics::location_entropy(&single, &grid).unwrap().abs() < 1e-9);

        // uniform over 4 cells -> ln 4
        let uniform4 = Trace::new(
            "u",
            (0..8u64).map(|i| (i * 10, cell((i % 4) as f64 * 3.0, 0.0))).collect(),
        )
        .unwrap();
        let h = metrics::location_entropy(&uniform4, &grid).unwrap();
        assert!((h - 4.0f64.ln()).abs() < 1e-9, "got {h}");

        // p = {1/2, 1/4, 1/4} -> 1.0397 (exactly 1.5 ln 2 + 0.5 ln 2)
        let skewed = Trace::new(
            "u",
            vec![
                (0, cell(0.0, 0.0)),
                (10, cell(0.0, 0.0)),
                (20, cell(3.0, 0.0)),
                (30, cell(6.0, 0.0)),
            ],
        )
        .unwrap();
        let h = metrics::location_entropy(&skewed, &grid).unwrap();
        let exact = -(0.5f64 * 0.5f64.ln() + 0.5 * 0.25f64.ln());
        assert!((h - exact).abs() < 1e-9);
        assert!((h - 1.0397).abs() < 1e-4);

        // TNR 1.0 / 0.5 / 0.0
        let estimate = |p: GeoPoint| lbsn_core::Estimate {
            point: p,
            bound_m: 1.0,
            queries_used: 0,
            wall_rounds: 0,
            phase_log: vec![],
            reliable: true,
        };
        let as_inferred = |t: &Trace| InferredTrace {
            user_id: "u".into(),
            points: t.points().iter().map(|&(ts, p)| (ts, estimate(p))).collect(),
        };
        let five_cells = Trace::new(
            "u",
            (0..5u64).map(|i| (i * 10, cell(i as f64 * 3.0, 0.0))).collect(),
        )
        .unwrap();
        assert!(
            (metrics::tnr(&five_cells, &as_inferred(&five_cells), 5, &grid).unwrap() - 1.0)
                .abs()
                < 1e-9
        );
        let truth2 = Trace::new(
            "u",
            vec![(0, cell(0.0, 0.0)), (10, cell(0.0, 0.0)), (20, cell(3.0, 0.0))],
        )
        .unwrap();
        let half = Trace::new(
            "u",
            vec![(0, cell(0.0, 0.0)), (10, cell(0.0, 0.0)), (20, cell(9.0, 0.0))],
        )
        .unwrap();
        assert!(
            (metrics::tnr(&truth2, &as_inferred(&half), 2, &grid).unwrap() - 0.5).abs() < 1e-9
        );
        let disjoint =
            Trace::new("u", vec![(0, cell(20.0, 20.0)), (10, cell(25.0, 20.0))]).unwrap();
        assert!(metrics::tnr(&truth2, &as_inferred(&disjoint), 2, &grid).unwrap().abs() < 1e-9);

        // nearest-in-time tracking error: |dt| 10 beats |dt| 30
        let truth = Trace::new(
            "u",
            vec![(90, offset_m(base, 50.0, 0.0).unwrap()), (130, offset_m(base, 10.0, 0.0).unwrap())],
        )
        .unwrap();
        let inferred = InferredTrace { user_id: "u".into(), points: vec![(100, estimate(base))] };
        let series = metrics::tracking_error_series(&inferred, &truth);
        let expected = distance_m(base, offset_m(base, 50.0, 0.0).unwrap());
        assert!((series[0] - expected).abs() < 1e-9);
    });
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_mitigation_trends() {
    criterion(9, "grid-reference-system trends", || {
        let base = shanghai();
        // spatially diverse victims: wide jitter fills cells at every
        // sweep size, so means converge to their geometric values
        let mut traces = Vec::new();
        for v in 0..3u64 {
            let mut anchors = Vec::new();
            let mut placer = ChaCha8Rng::seed_from_u64(0x0900 + v);
            for a in 0..6 {
                anchors.push(AnchorSpec {
                    point: offset_m(
                        base,
                        placer.gen_range(-5000.0..5000.0),
                        placer.gen_range(-5000.0..5000.0),
                    )
                    .unwrap(),
                    weight: if a == 0 { 5.0 } else { 1.0 },
                    dwell: DwellModel::Fixed { steps: 3 },
                    jitter_m: 700.0,
                });
            }
            traces.push(synthesize_trace(format!("v{v}"), 0x0901 + v, 14, &anchors).unwrap());
        }

        let sizes = [200.0, 400.0, 600.0, 800.0, 1000.0];
        let sampler = AnchorSampler {
            anchors_per_point: 24,
            min_radius_m: 500.0,
            max_radius_m: 5000.0,
            seed: 0x0902,
        };
        let display = Quantizer::FloorBucket { step_m: 100.0 };
        let dist_max = 500.0;

        let uniform = tradeoff_curve(
            &traces,
            base,
            100.0,
            &sampler,
            SweepMode::Uniform,
            &sizes,
            &display,
            dist_max,
        )
        .unwrap();
        let classified = tradeoff_curve(
            &traces,
            base,
            100.0,
            &sampler,
            SweepMode::Classified { top_size_m: 1000.0, top_n: 2 },
            &sizes,
            &display,
            dist_max,
        )
        .unwrap();

        for w in uniform.windows(2) {
            assert!(
                w[1].mean_privacy_m > w[0].mean_privacy_m,
                "uniform privacy not strictly increasing: {:?} -> {:?}",
                w[0],
                w[1]
            );
            assert!(
                w[1].mean_utility <= w[0].mean_utility + 1e-12,
                "uniform utility increased: {:?} -> {:?}",
                w[0],
                w[1]
            );
        }

        // classified dominates uniform at matched mean privacy
        let mut dominated = 0;
        for point in &classified {
            match lbsn_cli::utility_at_privacy(&uniform, point.mean_privacy_m) {
                Some(matched) => {
                    if point.mean_utility >= matched - 1e-9 {
                        dominated += 1;
                    } else {
                        eprintln!(
                            "classified at size {} loses: {:.4} vs uniform {:.4}",
                            point.cell_size_m, point.mean_utility, matched
                        );
                    }
                }
                None => eprintln!(
                    "classified privacy {} outside the uniform span",
                    point.mean_privacy_m
                ),
            }
        }
        assert!(dominated >= 4, "classified dominates at only {dominated}/5 sweep points");

        // attack vs the protected oracle: median error >= cell/4
        let cell = 400.0;
        let grs = lbsn_core::GrsMode::uniform(base, cell).unwrap();
        let policy = ObfuscationPolicy::momo();
        let mut errors = Vec::new();
        let mut placement = ChaCha8Rng::seed_from_u64(0x0903);
        for seed in 0..21u64 {
            let target = offset_m(
                base,
                placement.gen_range(-5000.0..5000.0),
                placement.gen_range(-5000.0..5000.0),
            )
            .unwrap();
            let mut oracle = Oracle::new(policy.clone()).unwrap().with_grs(grs.clone());
            oracle.report_location("victim", target, 0).unwrap();
            let mut cfg = AttackConfig::for_policy(&policy, seed);
            cfg.initial_anchor_box = box_around(base, 10_000.0);
            let mut session = Session::new(&mut oracle, "a", 0, cfg.per_query_latency_s);
            match full_attack(&mut session, "victim", &policy, 0.0, None, &cfg) {
                Ok(est) => errors.push(distance_m(est.point, target)),
                Err(_) => errors.push(f64::INFINITY),
            }
        }
        errors.sort_by(f64::total_cmp);
        let median = errors[errors.len() / 2];
        assert!(
            median >= cell / 4.0,
            "defense too weak: median error {median} < {}",
            cell / 4.0
        );
    });
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_service_differential() {
    criterion(10, "HTTP differential, 10k operations", || {
        let mut policy = ObfuscationPolicy::wechat_dense();
        policy.rate_limit = Some(RateLimit { max_queries: 60, window_s: 900, ban_s: 3600 });
        let make = || Oracle::new(policy.clone()).unwrap().with_density(5000.0);

        let shared = std::sync::Arc::new(std::sync::Mutex::new(make()));
        let server_state = shared.clone();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = std::sync::mpsc::channel::<()>();
        let server = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let handle = lbsn_service::serve(server_state, "127.0.0.1:0".parse().unwrap())
                    .await
                    .unwrap();
                addr_tx.send(handle.local_addr).unwrap();
                let _ = tokio::task::spawn_blocking(move || stop_rx.recv()).await;
                handle.shutdown().await;
            });
        });
        let url = format!("http://{}", addr_rx.recv().unwrap());

        let mut local = make();
        let mut client = lbsn_service::HttpOracleClient::new(&url);
        let base = shanghai();
        let users = ["u1", "u2", "u3"];
        let accounts = ["a1", "a2"];
        let mut rng = ChaCha8Rng::seed_from_u64(0x1010);
        let mut t: u64 = 0;
        let mut last_report = std::collections::HashMap::new();
        use lbsn_core::DistanceOracle as _;
        for op in 0..10_000u32 {
            t += rng.gen_range(0..20);
            let point = offset_m(
                base,
                rng.gen_range(-2500.0..2500.0),
                rng.gen_range(-2500.0..2500.0),
            )
            .unwrap();
            let roll: f64 = rng.gen_range(0.0..1.0);
            if roll < 0.2 {
                let user = users[rng.gen_range(0..users.len())];
                let rt = (*last_report.get(user).unwrap_or(&0u64)).max(t) + 1;
                last_report.insert(user, rt);
                assert_eq!(
                    client.report(user, point, rt).is_ok(),
                    local.report_location(user, point, rt).is_ok(),
                    "op {op}"
                );
            } else if roll < 0.8 {
                let account = accounts[rng.gen_range(0..accounts.len())];
                let target = users[rng.gen_range(0..users.len())];
                let wire = client.query_distance(account, point, target, t);
                let here = local.query_distance(account, point, target, t);
                match (&wire, &here) {
                    (DistanceReply::Distance(a), DistanceReply::Distance(b)) => {
                        assert_eq!(a.value_m, b.value_m, "op {op}");
                        assert_eq!(a.at_floor, b.at_floor, "op {op}");
                    }
                    _ => assert_eq!(wire, here, "op {op}"),
                }
            } else {
                let account = accounts[rng.gen_range(0..accounts.len())];
                let wire = client.query_nearby(account, point, t);
                let here = local.query_nearby(account, point, t);
                match (&wire, &here) {
                    (NearbyReply::Nearby(a), NearbyReply::Nearby(b)) => {
                        assert_eq!(a, b, "op {op}")
                    }
                    _ => assert_eq!(wire, here, "op {op}"),
                }
            }
        }
        assert_eq!(
            shared.lock().unwrap().ledger_snapshot(),
            local.ledger_snapshot(),
            "ledger/ban state diverged"
        );
        let _ = stop_tx.send(());
        server.join().unwrap();

        // sdk shape: error 161 and exact round-trip
        let p = GeoPoint::new(31.2, 121.5).unwrap();
        let text = lbsn_service::sdk_response(p, 70.0, 7);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["result"]["error"], 161);
        assert_eq!(lbsn_service::parse_sdk_response(&text), Some(p));
    });
}

// ---------------------------------------------------------------- 11

#[test]
fn criterion_11_rate_limit_fuzz() {
    criterion(11, "rate-limit window property, 1000 schedules", || {
        let mut fuzz = ChaCha8Rng::seed_from_u64(0x1111);
        for schedule in 0..1000u32 {
            let max_queries = fuzz.gen_range(3..12u32);
            let window = fuzz.gen_range(60..900u64);
            let mut policy = ObfuscationPolicy::momo();
            policy.rate_limit = Some(RateLimit {
                max_queries,
                window_s: window,
                ban_s: fuzz.gen_range(200..2000),
            });
            let mut oracle = Oracle::new(policy).unwrap();
            let base = shanghai();
            oracle.report_location("victim", base, 0).unwrap();

            // N concurrent sessions on random accounts, arbitrary times
            let n_sessions = fuzz.gen_range(1..5usize);
            let mut events: Vec<(u64, usize)> = Vec::new();
            for s in 0..n_sessions {
                let queries = fuzz.gen_range(5..40);
                for _ in 0..queries {
                    events.push((fuzz.gen_range(0..4000u64), s));
                }
            }
            events.sort_unstable();
            let mut answered: Vec<Vec<u64>> = vec![Vec::new(); n_sessions];
            for &(t, s) in &events {
                // sessions share one account half the time
                let account = if s % 2 == 0 { "shared".to_string() } else { format!("s{s}") };
                if let DistanceReply::Distance(_) =
                    oracle.query_distance(&account, base, "victim", t)
                {
                    answered[s].push(t);
                }
            }
            // per account: answered queries inside any window <= budget
            let mut by_account: std::collections::HashMap<String, Vec<u64>> = Default::default();
            for (s, times) in answered.iter().enumerate() {
                let account = if s % 2 == 0 { "shared".to_string() } else { format!("s{s}") };
                by_account.entry(account).or_default().extend(times);
            }
            for (account, mut times) in by_account {
                times.sort_unstable();
                for i in 0..times.len() {
                    let in_window =
                        times[i..].iter().take_while(|&&u| u < times[i] + window).count();
                    assert!(
                        in_window as u32 <= max_queries,
                        "schedule {schedule}, account {account}: {in_window} answered \
                         in a {window} s window (budget {max_queries})"
                    );
                }
            }
        }
    });
}
