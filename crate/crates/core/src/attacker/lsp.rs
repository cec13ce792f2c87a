//! Least-squares position from three anchor readings.
//!
//! The solve runs in the equirectangular tangent frame of the anchors'
//! centroid: the residual of a candidate point is its great-circle distance
//! to each anchor minus that anchor's displayed reading. Gauss-Newton with
//! Levenberg damping, initialized at the linearized closed-form
//! trilateration solution, converges when a step falls below 0.01 m.

use super::{AnchorReading, AttackError};
use crate::geo::{self, GeoPoint, LocalFrame};

const STEP_TOL_M: f64 = 0.01;
const MAX_ITERS: usize = 100;
const COLLINEAR_TOL_RAD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LspSolution {
    pub point: GeoPoint,
    /// False when the iteration cap was hit before the step tolerance;
    /// the best iterate is still returned.
    pub converged: bool,
    /// Euclidean norm of the residual vector at the returned point.
    pub residual_norm: f64,
}

/// Position minimizing the sum of squared range residuals over three
/// anchors. Errors on collinear (or coincident) anchor geometry.
pub fn lsp(readings: &[AnchorReading; 3]) -> Result<LspSolution, AttackError> {
    let anchors = [readings[0].anchor, readings[1].anchor, readings[2].anchor];
    let dists = [
        readings[0].displayed.value_m,
        readings[1].displayed.value_m,
        readings[2].displayed.value_m,
    ];

    let centroid = centroid_of(&anchors);
    let frame = LocalFrame::new(centroid);
    let local: Vec<(f64, f64)> = anchors.iter().map(|&a| frame.to_local(a)).collect();

    // reject collinear geometry: angle between the anchor edge vectors
    let v1 = (local[1].0 - local[0].0, local[1].1 - local[0].1);
    let v2 = (local[2].0 - local[0].0, local[2].1 - local[0].1);
    let n1 = (v1.0 * v1.0 + v1.1 * v1.1).sqrt();
    let n2 = (v2.0 * v2.0 + v2.1 * v2.1).sqrt();
    let cross = v1.0 * v2.1 - v1.1 * v2.0;
    if n1 == 0.0 || n2 == 0.0 || (cross / (n1 * n2)).abs() < COLLINEAR_TOL_RAD {
        return Err(AttackError::DegenerateGeometry);
    }

    // residuals use true great-circle distances; the Jacobian uses the
    // planar direction, which matches in the tangent limit
    let residuals = |pt: (f64, f64)| -> [f64; 3] {
        let (lat, lon) = chart(&frame, pt);
        [
            geo::haversine_raw(lat, lon, anchors[0].lat(), anchors[0].lon()) - dists[0],
            geo::haversine_raw(lat, lon, anchors[1].lat(), anchors[1].lon()) - dists[1],
            geo::haversine_raw(lat, lon, anchors[2].lat(), anchors[2].lon()) - dists[2],
        ]
    };

    // The chart distorts long-range geometry enough to grow spurious local
    // minima, so descend from the closed-form init plus a fixed fallback
    // fan (its mirror across the anchor baseline and a bearing ring around
    // the closest anchor) and keep the lowest-cost solution.
    let primary = linearized_init(&local, &dists).unwrap_or((0.0, 0.0));
    let mut starts = vec![primary, mirror_across(local[0], local[1], primary)];
    let (nearest, &d_near) = {
        let i = (0..3).min_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap();
        (local[i], &dists[i])
    };
    for k in 0..6 {
        let theta = k as f64 * std::f64::consts::TAU / 6.0;
        starts.push((nearest.0 + d_near * theta.cos(), nearest.1 + d_near * theta.sin()));
    }

    let mut best: Option<(f64, (f64, f64), bool)> = None;
    for start in starts {
        let (u, cost, converged) = descend(start, &local, &residuals);
        if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
            best = Some((cost, u, converged));
        }
    }
    let (cost, u, converged) = best.expect("at least one start");

    let (lat, lon) = chart(&frame, u);
    Ok(LspSolution {
        point: GeoPoint::new(lat, lon).expect("chart latitude is clamped"),
        converged,
        residual_norm: cost.sqrt(),
    })
}

/// One damped Gauss-Newton descent; returns (point, final cost, converged).
fn descend<F>(start: (f64, f64), local: &[(f64, f64)], residuals: &F) -> ((f64, f64), f64, bool)
where
    F: Fn((f64, f64)) -> [f64; 3],
{
    let cost_of = |r: &[f64; 3]| r.iter().map(|x| x * x).sum::<f64>();
    let mut u = start;
    let mut r = residuals(u);
    let mut cost = cost_of(&r);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_ITERS {
        // rows of the Jacobian: unit vectors anchor -> point
        let mut jt_j = [[0.0f64; 2]; 2];
        let mut jt_r = [0.0f64; 2];
        for (i, &(ax, ay)) in local.iter().enumerate() {
            let dx = u.0 - ax;
            let dy = u.1 - ay;
            let norm = (dx * dx + dy * dy).sqrt().max(1e-9);
            let j = (dx / norm, dy / norm);
            jt_j[0][0] += j.0 * j.0;
            jt_j[0][1] += j.0 * j.1;
            jt_j[1][1] += j.1 * j.1;
            jt_r[0] += j.0 * r[i];
            jt_r[1] += j.1 * r[i];
        }
        jt_j[1][0] = jt_j[0][1];

        let mut accepted = false;
        for _ in 0..12 {
            let a = [
                [jt_j[0][0] + lambda, jt_j[0][1]],
                [jt_j[1][0], jt_j[1][1] + lambda],
            ];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det.abs() < 1e-18 {
                lambda *= 10.0;
                continue;
            }
            let step = (
                (-jt_r[0] * a[1][1] + jt_r[1] * a[0][1]) / det,
                (-jt_r[1] * a[0][0] + jt_r[0] * a[1][0]) / det,
            );
            let candidate = (u.0 + step.0, u.1 + step.1);
            let cand_r = residuals(candidate);
            let cand_cost = cost_of(&cand_r);
            if cand_cost <= cost {
                u = candidate;
                r = cand_r;
                cost = cand_cost;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if (step.0 * step.0 + step.1 * step.1).sqrt() < STEP_TOL_M {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !accepted {
            converged = converged || !accepted; // no acceptable step: stationary
            break;
        }
    }
    (u, cost, converged)
}

/// Reflect `p` across the line through `a` and `b`.
fn mirror_across(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> (f64, f64) {
    let (ux, uy) = (b.0 - a.0, b.1 - a.1);
    let len2 = (ux * ux + uy * uy).max(1e-12);
    let (vx, vy) = (p.0 - a.0, p.1 - a.1);
    let dot = (vx * ux + vy * uy) / len2;
    let (px, py) = (ux * dot, uy * dot);
    (a.0 + 2.0 * px - vx, a.1 + 2.0 * py - vy)
}

/// Chart coordinates -> (lat, lon) with latitude clamped into range;
/// longitude is left raw for the periodic haversine.
fn chart(frame: &LocalFrame, u: (f64, f64)) -> (f64, f64) {
    let o = frame.origin();
    let lat = (o.lat() + (u.1 / geo::EARTH_RADIUS_M).to_degrees()).clamp(-89.99, 89.99);
    let cos_lat = o.lat().to_radians().cos();
    let lon = o.lon() + (u.0 / (geo::EARTH_RADIUS_M * cos_lat)).to_degrees();
    (lat, lon)
}

fn centroid_of(anchors: &[GeoPoint; 3]) -> GeoPoint {
    let lat = anchors.iter().map(|a| a.lat()).sum::<f64>() / 3.0;
    // circular mean for longitude so antimeridian anchors average sanely
    let (mut sx, mut sy) = (0.0, 0.0);
    for a in anchors {
        sx += a.lon().to_radians().cos();
        sy += a.lon().to_radians().sin();
    }
    let lon = if sx == 0.0 && sy == 0.0 { 0.0 } else { sy.atan2(sx).to_degrees() };
    GeoPoint::new(lat.clamp(-89.99, 89.99), lon).expect("mean of valid coordinates")
}

/// Closed-form trilateration by subtracting range equations pairwise;
/// `None` when the 2x2 system is singular.
fn linearized_init(local: &[(f64, f64)], d: &[f64; 3]) -> Option<(f64, f64)> {
    let (x1, y1) = local[0];
    let (x2, y2) = local[1];
    let (x3, y3) = local[2];
    let k = |x: f64, y: f64| x * x + y * y;
    let a11 = 2.0 * (x2 - x1);
    let a12 = 2.0 * (y2 - y1);
    let a21 = 2.0 * (x3 - x1);
    let a22 = 2.0 * (y3 - y1);
    let b1 = d[0] * d[0] - d[1] * d[1] + k(x2, y2) - k(x1, y1);
    let b2 = d[0] * d[0] - d[2] * d[2] + k(x3, y3) - k(x1, y1);
    let det = a11 * a22 - a12 * a21;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(((b1 * a22 - b2 * a12) / det, (b2 * a11 - b1 * a21) / det))
}
