//! Space partition: alternating-axis bisection that breaks the display
//! floor. Starting from a point known to be within `R` of the target, each
//! probe shifts the current center by `R` along one axis and asks whether
//! the reading still certifies membership; the center then moves half the
//! axis bracket toward or away from the probe.

use super::{AttackConfig, AttackError, DistanceOracle, Estimate, Phase, Session};
use crate::geo::{GeoPoint, LocalFrame};
use crate::oracle::{DisplayedDistance, Quantizer};

/// How a displayed reading is interpreted as "target within R of the probe".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipRule {
    /// Reading sits in the minimum bucket (R = the quantizer floor radius).
    AtFloor,
    /// Reading is at most this bucket value (R = the bucket's upper edge).
    BucketAtMost { value_m: f64 },
}

impl MembershipRule {
    fn is_member(&self, d: &DisplayedDistance) -> bool {
        match *self {
            MembershipRule::AtFloor => d.at_floor,
            MembershipRule::BucketAtMost { value_m } => d.value_m <= value_m + 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectOutcome {
    /// Final center in the local frame of the starting point.
    pub east_m: f64,
    pub north_m: f64,
    pub probes: u32,
    /// Set when a probe's reading was impossible for an in-box target.
    pub contradiction: bool,
}

/// The bisection core, driven by any membership test. `member_at` receives
/// probe coordinates in the local frame and reports (membership,
/// out-of-box contradiction). Probing stops when both axis brackets drop
/// below the threshold; with an exact box oracle that takes exactly
/// `2 * ceil(log2(r / threshold))` probes and leaves each axis within
/// `threshold` of the target.
pub fn bisect_box<F>(r_m: f64, threshold_m: f64, mut member_at: F) -> BisectOutcome
where
    F: FnMut(f64, f64) -> (bool, bool),
{
    let mut center = (0.0f64, 0.0f64);
    let mut delta = (r_m, r_m);
    let mut axis_is_x = true;
    let mut probes = 0u32;
    let mut contradiction = false;

    while delta.0 > threshold_m || delta.1 > threshold_m {
        let probe = if axis_is_x {
            (center.0 + r_m, center.1)
        } else {
            (center.0, center.1 + r_m)
        };
        let (member, bad) = member_at(probe.0, probe.1);
        contradiction |= bad;
        probes += 1;

        let (c, d) = if axis_is_x {
            (&mut center.0, &mut delta.0)
        } else {
            (&mut center.1, &mut delta.1)
        };
        if member {
            *c += *d / 2.0;
        } else {
            *c -= *d / 2.0;
        }
        *d /= 2.0;
        axis_is_x = !axis_is_x;
    }

    BisectOutcome { east_m: center.0, north_m: center.1, probes, contradiction }
}

/// Run the bisection against a live oracle session. `p0` must be within
/// `r_m` of the target (the caller establishes this via the trilateration
/// floor or a scan hit); violations surface as `reliable = false` on the
/// estimate when a probe reading proves the target cannot be in the box.
pub fn space_partition<O: DistanceOracle>(
    session: &mut Session<O>,
    target_id: &str,
    p0: GeoPoint,
    r_m: f64,
    rule: MembershipRule,
    quantizer: Option<&Quantizer>,
    cfg: &AttackConfig,
) -> Result<Estimate, AttackError> {
    if !(r_m > 0.0) {
        return Err(AttackError::InvalidConfig(format!("partition radius {r_m} must be > 0")));
    }
    let queries_before = session.queries_used();
    let frame = LocalFrame::new(p0);
    // any point of the 2R box is within sqrt(5)*R of a probe; readings
    // provably beyond that contradict the precondition
    let impossible_beyond = (5.0f64).sqrt() * r_m;

    let outcome = bisect_box(r_m, cfg.partition_threshold_m, |east, north| {
        let probe = frame
            .from_local(east, north)
            .expect("partition probes stay near the starting point");
        match session.query_displayed(probe, target_id) {
            Some(d) => {
                let bad = quantizer
                    .map(|q| q.preimage(d.value_m).0 > impossible_beyond)
                    .unwrap_or(false);
                (rule.is_member(&d), bad)
            }
            // out of coverage: certainly not within R of the probe
            None => (false, false),
        }
    });

    let point = frame.from_local(outcome.east_m, outcome.north_m)?;
    let queries = session.queries_used() - queries_before;
    Ok(Estimate {
        point,
        bound_m: if outcome.probes == 0 { r_m } else { 2.0 * cfg.partition_threshold_m },
        queries_used: queries,
        wall_rounds: outcome.probes,
        phase_log: vec![(Phase::Partition, queries)],
        reliable: !outcome.contradiction,
    })
}
