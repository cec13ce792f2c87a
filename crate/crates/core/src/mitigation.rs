//! Grid-reference-system defense: snap every reported position to the
//! center of a grid cell before any distance is computed, uniformly or with
//! per-location privacy classes (larger cells over a user's top locations),
//! plus the privacy/utility metrics and trade-off sweep.

use crate::geo::{self, CellIndex, GeoError, GeoPoint, GridSpec};
use crate::mobility::Trace;
use crate::oracle::Quantizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MitigationError {
    #[error("invalid privacy profile: {0}")]
    InvalidProfile(String),
    #[error("dist_max must be > 0")]
    InvalidDistMax,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Non-uniform grid reference system: a base grid classifies locations into
/// privacy levels, each level snapping to its own (coarser) cell size.
///
/// Every class size must be a positive multiple of the base cell size and
/// top levels must not be finer than level 0, which keeps the class regions
/// aligned and obfuscation exactly idempotent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyProfile {
    base: GridSpec,
    base_size_m: f64,
    /// privacy level -> snapping cell size (level 0 = normal locations).
    classes: BTreeMap<u8, f64>,
    /// base cell -> privacy level; unlisted cells are level 0.
    classifier: BTreeMap<CellIndex, u8>,
    /// derived per-level uniform grids sharing the base origin
    class_grids: BTreeMap<u8, GridSpec>,
}

impl PrivacyProfile {
    pub fn new(
        origin: GeoPoint,
        base_size_m: f64,
        classes: BTreeMap<u8, f64>,
        classifier: BTreeMap<CellIndex, u8>,
    ) -> Result<Self, MitigationError> {
        if !classes.contains_key(&0) {
            return Err(MitigationError::InvalidProfile("missing level 0 class".into()));
        }
        let normal = classes[&0];
        let mut class_grids = BTreeMap::new();
        for (&level, &size) in &classes {
            if !(size > 0.0) {
                return Err(MitigationError::InvalidProfile(format!(
                    "level {level}: size {size} must be > 0"
                )));
            }
            let ratio = size / base_size_m;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
                return Err(MitigationError::InvalidProfile(format!(
                    "level {level}: size {size} must be a multiple of the base {base_size_m}"
                )));
            }
            if level > 0 && size < normal {
                return Err(MitigationError::InvalidProfile(format!(
                    "level {level}: top-location cells ({size} m) must not be finer than \
                     normal cells ({normal} m)"
                )));
            }
            class_grids.insert(level, GridSpec::uniform(origin, size)?);
        }
        for (cell, level) in &classifier {
            if !classes.contains_key(level) {
                return Err(MitigationError::InvalidProfile(format!(
                    "classifier maps {cell:?} to unknown level {level}"
                )));
            }
        }
        Ok(PrivacyProfile {
            base: GridSpec::uniform(origin, base_size_m)?,
            base_size_m,
            classes,
            classifier,
            class_grids,
        })
    }

    /// Profile with the given top cells pinned at `top_size_m`; every base
    /// cell of each enclosing top-size block is marked, so the protected
    /// region is exactly that block.
    pub fn with_top_cells(
        origin: GeoPoint,
        base_size_m: f64,
        normal_size_m: f64,
        top_size_m: f64,
        top_base_cells: &[CellIndex],
    ) -> Result<Self, MitigationError> {
        let ratio = top_size_m / base_size_m;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(MitigationError::InvalidProfile(
                "top size must be a multiple of the base size".into(),
            ));
        }
        let k = ratio.round() as i64;
        let mut classifier = BTreeMap::new();
        for cell in top_base_cells {
            let bx = cell.ix.div_euclid(k);
            let by = cell.iy.div_euclid(k);
            for ix in bx * k..(bx + 1) * k {
                for iy in by * k..(by + 1) * k {
                    classifier.insert(CellIndex::new(ix, iy, 0), 1);
                }
            }
        }
        let mut classes = BTreeMap::new();
        classes.insert(0, normal_size_m);
        classes.insert(1, top_size_m);
        PrivacyProfile::new(origin, base_size_m, classes, classifier)
    }

    pub fn level_of(&self, p: GeoPoint) -> Result<u8, MitigationError> {
        let cell = geo::cell_of(p, &self.base, 0)?;
        Ok(self.classifier.get(&cell).copied().unwrap_or(0))
    }

    fn snap(&self, p: GeoPoint, level: u8) -> Result<GeoPoint, MitigationError> {
        let grid = &self.class_grids[&level];
        Ok(geo::cell_center(geo::cell_of(p, grid, 0)?, grid)?)
    }

    /// Snap `p` to the center of the cell its privacy class prescribes.
    ///
    /// A normal-size cell can straddle a protected block; when its center
    /// lands inside one, the point falls back to its base-cell center so a
    /// second obfuscation cannot move it again (exact idempotence).
    pub fn obfuscate(&self, p: GeoPoint) -> Result<GeoPoint, MitigationError> {
        let level = self.level_of(p)?;
        let snapped = self.snap(p, level)?;
        if level == 0 && self.level_of(snapped)? != 0 {
            return Ok(geo::cell_center(geo::cell_of(p, &self.base, 0)?, &self.base)?);
        }
        Ok(snapped)
    }
}

/// The grid reference system applied by an oracle or a sweep: uniform cell
/// size everywhere, or classified per privacy profile.
#[derive(Debug, Clone, PartialEq)]
pub enum GrsMode {
    Uniform { grid: GridSpec },
    Classified { profile: PrivacyProfile },
}

impl GrsMode {
    pub fn uniform(origin: GeoPoint, cell_size_m: f64) -> Result<Self, GeoError> {
        Ok(GrsMode::Uniform { grid: GridSpec::uniform(origin, cell_size_m)? })
    }

    /// Center of the grid cell containing `p` (per the point's privacy
    /// class in classified mode). Idempotent: obfuscating a center returns
    /// it bit-for-bit.
    pub fn obfuscate(&self, p: GeoPoint) -> Result<GeoPoint, MitigationError> {
        match self {
            GrsMode::Uniform { grid } => Ok(geo::cell_center(geo::cell_of(p, grid, 0)?, grid)?),
            GrsMode::Classified { profile } => profile.obfuscate(p),
        }
    }
}

/// Distance between two obfuscated positions: the cell centers already
/// carry the grid geometry, so this is the plain great-circle distance
/// (zero iff both points share a cell).
pub fn grs_distance(a_obf: GeoPoint, b_obf: GeoPoint) -> f64 {
    geo::distance_m(a_obf, b_obf)
}

/// Privacy gained by obfuscation: how far the displayed location sits from
/// the real one.
pub fn privacy_gain(loc_real: GeoPoint, loc_obfuscated: GeoPoint) -> f64 {
    geo::distance_m(loc_real, loc_obfuscated)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utility {
    pub value: f64,
    /// The displayed-distance gap exceeded dist_max; the value was clamped
    /// to zero rather than silently going negative.
    pub gap_exceeded: bool,
}

/// 1 - |displayed(real, anchor) - displayed(obfuscated, anchor)| / dist_max,
/// clamped into [0, 1].
pub fn utility(
    loc_real: GeoPoint,
    loc_obfuscated: GeoPoint,
    anchor: GeoPoint,
    dist_max_m: f64,
    display: &Quantizer,
) -> Result<Utility, MitigationError> {
    if !(dist_max_m > 0.0) {
        return Err(MitigationError::InvalidDistMax);
    }
    let shown_real = display.quantize(geo::distance_m(loc_real, anchor));
    let shown_obf = display.quantize(geo::distance_m(loc_obfuscated, anchor));
    let gap = (shown_real - shown_obf).abs();
    if gap > dist_max_m {
        return Ok(Utility { value: 0.0, gap_exceeded: true });
    }
    Ok(Utility { value: 1.0 - gap / dist_max_m, gap_exceeded: false })
}

/// How anchors are drawn around each trace point for the utility average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSampler {
    pub anchors_per_point: usize,
    pub min_radius_m: f64,
    pub max_radius_m: f64,
    pub seed: u64,
}

impl Default for AnchorSampler {
    fn default() -> Self {
        AnchorSampler { anchors_per_point: 32, min_radius_m: 500.0, max_radius_m: 5000.0, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMode {
    Uniform,
    /// Top cells (derived from each trace's most visited locations) pinned
    /// at `top_size_m` while the normal size sweeps.
    Classified { top_size_m: f64, top_n: usize },
}

impl SweepMode {
    fn label(&self) -> &'static str {
        match self {
            SweepMode::Uniform => "uniform",
            SweepMode::Classified { .. } => "classified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: String,
    pub cell_size_m: f64,
    pub mean_privacy_m: f64,
    pub mean_utility: f64,
}

/// Sweep cell sizes and average privacy/utility over every trace point.
/// The anchor set is drawn once and shared across sizes and modes, so
/// curves differ only by geometry, never by sampling noise.
pub fn tradeoff_curve(
    traces: &[Trace],
    grid_origin: GeoPoint,
    base_size_m: f64,
    sampler: &AnchorSampler,
    mode: SweepMode,
    sizes_m: &[f64],
    display: &Quantizer,
    dist_max_m: f64,
) -> Result<Vec<CurvePoint>, MitigationError> {
    if !(dist_max_m > 0.0) {
        return Err(MitigationError::InvalidDistMax);
    }
    if traces.is_empty() || traces.iter().all(|t| t.points().is_empty()) {
        return Err(MitigationError::InvalidProfile("no trace points to evaluate".into()));
    }

    // one shared anchor table: anchors[point][k]
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut points: Vec<GeoPoint> = Vec::new();
    for trace in traces {
        points.extend(trace.points().iter().map(|&(_, p)| p));
    }
    let mut anchors: Vec<Vec<GeoPoint>> = Vec::with_capacity(points.len());
    for &p in &points {
        let mut list = Vec::with_capacity(sampler.anchors_per_point);
        for _ in 0..sampler.anchors_per_point {
            let radius = rng.gen_range(sampler.min_radius_m..sampler.max_radius_m);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            list.push(geo::offset_m(p, radius * theta.cos(), radius * theta.sin())?);
        }
        anchors.push(list);
    }

    let top_cells: Vec<CellIndex> = match mode {
        SweepMode::Uniform => Vec::new(),
        SweepMode::Classified { top_n, .. } => {
            let base = GridSpec::uniform(grid_origin, base_size_m)?;
            let mut cells = BTreeSet::new();
            for trace in traces {
                let top = crate::metrics::top_n(trace, top_n, &base)?;
                cells.extend(top.cells);
            }
            cells.into_iter().collect()
        }
    };

    let mut curve = Vec::with_capacity(sizes_m.len());
    for &size in sizes_m {
        let grs = match mode {
            SweepMode::Uniform => GrsMode::uniform(grid_origin, size)?,
            SweepMode::Classified { top_size_m, .. } => GrsMode::Classified {
                profile: PrivacyProfile::with_top_cells(
                    grid_origin,
                    base_size_m,
                    size,
                    top_size_m,
                    &top_cells,
                )?,
            },
        };
        let mut privacy_sum = 0.0;
        let mut utility_sum = 0.0;
        let mut utility_count = 0usize;
        for (i, &p) in points.iter().enumerate() {
            let obf = grs.obfuscate(p)?;
            privacy_sum += privacy_gain(p, obf);
            for &a in &anchors[i] {
                utility_sum += utility(p, obf, a, dist_max_m, display)?.value;
                utility_count += 1;
            }
        }
        curve.push(CurvePoint {
            mode: mode.label().to_string(),
            cell_size_m: size,
            mean_privacy_m: privacy_sum / points.len() as f64,
            mean_utility: utility_sum / utility_count as f64,
        });
    }
    Ok(curve)
}
