//! Iterative trilateration: keep a list of fake anchors sorted by their
//! displayed distance to the target, repeatedly solve least squares on the
//! closest three, teleport a new anchor to the solution, and stop once the
//! closest and third-closest anchors are within the threshold of each other
//! or the top three readings all sit on the quantization floor.

use super::{lsp, AnchorReading, AttackConfig, AttackError, DistanceOracle, Estimate, Phase, Session};
use crate::geo::{self};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hard cap on refinement rounds; hitting it flags the estimate instead of
/// spinning on quantization plateaus.
const MAX_ROUNDS: u32 = 64;

pub fn iterative_trilateration<O: DistanceOracle>(
    session: &mut Session<O>,
    target_id: &str,
    cfg: &AttackConfig,
) -> Result<Estimate, AttackError> {
    iterative_trilateration_with_reading(session, target_id, cfg).map(|(est, _)| est)
}

/// One refinement round's observable outcome, kept for convergence
/// diagnostics: what the best anchor read before the round and what the
/// freshly inserted point read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub previous_best_value_m: f64,
    pub inserted_value_m: f64,
}

/// As [`iterative_trilateration`], also returning the displayed reading of
/// the winning anchor so the caller can size the partition handoff without
/// an extra query.
pub(crate) fn iterative_trilateration_with_reading<O: DistanceOracle>(
    session: &mut Session<O>,
    target_id: &str,
    cfg: &AttackConfig,
) -> Result<(Estimate, crate::oracle::DisplayedDistance), AttackError> {
    iterative_trilateration_traced(session, target_id, cfg).map(|(est, reading, _)| (est, reading))
}

pub(crate) fn iterative_trilateration_traced<O: DistanceOracle>(
    session: &mut Session<O>,
    target_id: &str,
    cfg: &AttackConfig,
) -> Result<(Estimate, crate::oracle::DisplayedDistance, Vec<RoundRecord>), AttackError> {
    cfg.validate()?;
    let queries_before = session.queries_used();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // sorted ascending by displayed value; insertion order breaks ties
    let mut anchors: Vec<AnchorReading> = Vec::new();
    let insert = |list: &mut Vec<AnchorReading>, reading: AnchorReading| {
        let pos = list.partition_point(|r| r.displayed.value_m <= reading.displayed.value_m);
        list.insert(pos, reading);
    };

    for _ in 0..3 {
        let pos = cfg.initial_anchor_box.sample(&mut rng);
        let t = session.now_s();
        if let Some(displayed) = session.query_displayed(pos, target_id) {
            insert(&mut anchors, AnchorReading { anchor: pos, displayed, t });
        }
    }
    if anchors.len() < 3 {
        return Err(AttackError::NeedsScan {
            queries_used: session.queries_used() - queries_before,
        });
    }

    let mut rounds: u32 = 0;
    let mut stalled_rounds: u32 = 0;
    let mut reliable = true;
    let mut round_log: Vec<RoundRecord> = Vec::new();
    loop {
        let spread = geo::distance_m(anchors[0].anchor, anchors[2].anchor);
        if spread <= cfg.trilateration_threshold_m {
            break;
        }
        // below the floor the readings carry no gradient; hand off
        if anchors.iter().take(3).all(|r| r.displayed.at_floor) {
            break;
        }
        // coarse quantizers plateau: once fresh points stop beating the
        // third-best reading, more rounds add nothing
        if stalled_rounds >= 3 {
            break;
        }
        if rounds >= MAX_ROUNDS {
            reliable = false;
            break;
        }
        rounds += 1;

        let top: [AnchorReading; 3] = [anchors[0], anchors[1], anchors[2]];
        let solution = match lsp(&top) {
            Ok(s) => s,
            // clustered collinear anchors: the current best is the answer
            Err(AttackError::DegenerateGeometry) => break,
            Err(e) => return Err(e),
        };
        let mut next = solution.point;
        if anchors.iter().any(|r| r.anchor == next) {
            // nudge repeats so the list keeps gaining information,
            // rotating the direction to avoid collinear pile-ups
            let dirs = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
            let (east, north) = dirs[(rounds as usize) % dirs.len()];
            next = geo::offset_m(next, east, north)?;
        }
        let t = session.now_s();
        match session.query_displayed(next, target_id) {
            Some(displayed) => {
                round_log.push(RoundRecord {
                    previous_best_value_m: anchors[0].displayed.value_m,
                    inserted_value_m: displayed.value_m,
                });
                if displayed.value_m < anchors[2].displayed.value_m {
                    stalled_rounds = 0;
                } else {
                    stalled_rounds += 1;
                }
                insert(&mut anchors, AnchorReading { anchor: next, displayed, t });
            }
            None => {
                // target fell out of coverage mid-attack
                return Err(AttackError::NeedsScan {
                    queries_used: session.queries_used() - queries_before,
                });
            }
        }
    }

    let queries = session.queries_used() - queries_before;
    let estimate = Estimate {
        point: anchors[0].anchor,
        bound_m: geo::distance_m(anchors[0].anchor, anchors[2].anchor),
        queries_used: queries,
        wall_rounds: rounds,
        phase_log: vec![(Phase::Trilateration, queries)],
        reliable,
    };
    Ok((estimate, anchors[0].displayed, round_log))
}
