use criterion::{black_box, criterion_group, criterion_main, Criterion};
use lbsn_core::attacker::bisect_box;
use lbsn_core::oracle::DisplayedDistance;
use lbsn_core::{
    distance_m, full_attack, lsp, offset_m, AnchorReading, AttackConfig, GeoPoint,
    ObfuscationPolicy, Oracle, Quantizer, Rect, Session,
};

fn shanghai() -> GeoPoint {
    GeoPoint::new(31.2304, 121.4737).unwrap()
}

fn bench_haversine(c: &mut Criterion) {
    let a = shanghai();
    let b = GeoPoint::new(39.9042, 116.4074).unwrap();
    c.bench_function("haversine_distance", |bencher| {
        bencher.iter(|| distance_m(black_box(a), black_box(b)))
    });
}

fn bench_quantizers(c: &mut Criterion) {
    let quantizers = [
        Quantizer::RoundNearest { step_m: 10.0 },
        Quantizer::FloorBucket { step_m: 100.0 },
        Quantizer::MinThenStep { min_m: 804.5, step_m: 1609.0 },
    ];
    c.bench_function("quantize_sweep", |bencher| {
        bencher.iter(|| {
            let mut acc = 0.0;
            for q in &quantizers {
                let mut d = 0.0;
                while d < 5000.0 {
                    acc += q.quantize(black_box(d));
                    d += 50.0;
                }
            }
            acc
        })
    });
}

fn bench_lsp(c: &mut Criterion) {
    let origin = shanghai();
    let anchors = [
        origin,
        offset_m(origin, 1000.0, 0.0).unwrap(),
        offset_m(origin, 0.0, 1000.0).unwrap(),
    ];
    let target = offset_m(origin, 300.0, 400.0).unwrap();
    let readings: Vec<AnchorReading> = anchors
        .iter()
        .map(|&a| AnchorReading {
            anchor: a,
            displayed: DisplayedDistance { value_m: distance_m(a, target), at_floor: false },
            t: 0,
        })
        .collect();
    let readings: [AnchorReading; 3] = [readings[0], readings[1], readings[2]];
    c.bench_function("lsp_three_anchors", |bencher| {
        bencher.iter(|| lsp(black_box(&readings)).unwrap())
    });
}

fn bench_bisect(c: &mut Criterion) {
    c.bench_function("bisect_box_804m_25m", |bencher| {
        bencher.iter(|| {
            bisect_box(black_box(804.5), black_box(25.0), |e, n| {
                ((130.0 - e).abs() <= 804.5 && (-412.0 - n).abs() <= 804.5, false)
            })
        })
    });
}

fn bench_full_momo_attack(c: &mut Criterion) {
    let base = shanghai();
    let target = offset_m(base, 4321.0, -2468.0).unwrap();
    let policy = ObfuscationPolicy::momo();
    let anchor_box = Rect {
        south_west: offset_m(base, -15_000.0, -15_000.0).unwrap(),
        north_east: offset_m(base, 15_000.0, 15_000.0).unwrap(),
    };
    c.bench_function("full_momo_attack", |bencher| {
        bencher.iter(|| {
            let mut oracle = Oracle::new(policy.clone()).unwrap();
            oracle.report_location("victim", target, 0).unwrap();
            let mut cfg = AttackConfig::for_policy(&policy, 17);
            cfg.initial_anchor_box = anchor_box;
            let mut session = Session::new(&mut oracle, "a", 0, 55);
            full_attack(&mut session, "victim", &policy, 0.0, None, &cfg).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_haversine,
    bench_quantizers,
    bench_lsp,
    bench_bisect,
    bench_full_momo_attack
);
criterion_main!(benches);
