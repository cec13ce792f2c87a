//! Coverage scan: sweep a region probing the nearby list until the target
//! shows up. With a popularity map the most crowded cells at the current
//! hour are probed first; otherwise the sweep is row-major.

use super::{AttackError, DistanceOracle, Phase, Rect, Session};
use crate::geo::{GeoPoint, LocalFrame};
use crate::mobility::PopularityMap;

/// Probe the region at `spacing_m` and return the first probe position
/// whose nearby list contains the target.
pub fn scan<O: DistanceOracle>(
    session: &mut Session<O>,
    target_id: &str,
    region: &Rect,
    spacing_m: f64,
    popularity: Option<&PopularityMap>,
) -> Result<GeoPoint, AttackError> {
    region.validate()?;
    if !(spacing_m > 0.0) {
        return Err(AttackError::InvalidConfig("scan spacing must be > 0".into()));
    }
    let queries_before = session.queries_used();
    let frame = LocalFrame::new(region.south_west);
    let (width_m, height_m) = frame.to_local(region.north_east);
    // epsilon guards exact-multiple regions against float creep
    let cols = ((width_m / spacing_m) - 1e-9).ceil().max(1.0) as i64;
    let rows = ((height_m / spacing_m) - 1e-9).ceil().max(1.0) as i64;

    // row-major cell order; popularity reorders by expected count at the
    // hour the scan starts, ties keeping row-major order
    let mut cells: Vec<(i64, i64)> = Vec::with_capacity((rows * cols) as usize);
    for iy in 0..rows {
        for ix in 0..cols {
            cells.push((ix, iy));
        }
    }
    if let Some(map) = popularity {
        let hour = ((session.now_s() % 86_400) / 3600) as u8;
        cells.sort_by(|&(ax, ay), &(bx, by)| {
            let ca = map.expected_at(ax, ay, hour);
            let cb = map.expected_at(bx, by, hour);
            cb.total_cmp(&ca)
                .then_with(|| (ay * cols + ax).cmp(&(by * cols + bx)))
        });
    }

    for (ix, iy) in cells {
        let probe = frame.from_local(
            (ix as f64 + 0.5) * spacing_m,
            (iy as f64 + 0.5) * spacing_m,
        )?;
        let listed = session.query_nearby_list(probe);
        if listed.iter().any(|(id, _)| id == target_id) {
            return Ok(probe);
        }
    }
    Err(AttackError::NotFound {
        queries_used: session.queries_used() - queries_before,
        phase_log: vec![(Phase::Scan, session.queries_used() - queries_before)],
    })
}
