//! Coordinate arithmetic shared by every other module: great-circle
//! distance, local tangent-frame offsets, and square grid cells.
//!
//! All planar work (grid indexing, least squares, bisection) happens in an
//! equirectangular tangent frame anchored at a reference point; latitude and
//! longitude only appear at the edges (anchor generation and reporting).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Mean Earth radius in meters (spherical model).
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest offset accepted by [`offset_m`]. The 0.5% accuracy contract
/// holds for offsets up to 100 km; the hard bound leaves headroom for the
/// one-degree-of-longitude case while still rejecting non-local use.
pub const MAX_OFFSET_M: f64 = 150_000.0;

/// Half-width of the region a grid covers around its origin.
pub const GRID_REGION_M: f64 = 1_000_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("coordinate is not finite")]
    NotFinite,
    #[error("offset ({east_m}, {north_m}) exceeds {MAX_OFFSET_M} m local-frame validity bound")]
    OffsetOutOfRange { east_m: f64, north_m: f64 },
    #[error("point is outside the ±{GRID_REGION_M} m grid region")]
    OutOfRegion,
    #[error("grid has no level {0}")]
    UnknownLevel(u8),
    #[error("cell size {0} must be positive and finite")]
    InvalidCellSize(f64),
}

/// A latitude/longitude position in degrees.
///
/// Latitude is validated into [-90, 90]; longitude is normalized into
/// [-180, 180) on construction, so two `GeoPoint`s compare meaningfully.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(raw: RawGeoPoint) -> Result<Self, GeoError> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NotFinite);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        Ok(GeoPoint { lat, lon: normalize_lon(lon) })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl std::fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Normalize a longitude into [-180, 180). In-range values pass through
/// bit-exact.
pub fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let n = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can land exactly on 360 for inputs like -1e-15.
    if n >= 180.0 {
        n - 360.0
    } else {
        n
    }
}

/// Haversine great-circle distance in meters on a sphere of radius
/// [`EARTH_RADIUS_M`]. Symmetric, non-negative, zero iff the points coincide.
pub fn distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    haversine_raw(a.lat, a.lon, b.lat, b.lon)
}

/// Haversine on raw degree pairs. `dlon` may exceed 180 degrees; the
/// formula is periodic so the shorter arc is always measured.
pub(crate) fn haversine_raw(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let dlat = (lat2 - lat1).to_radians();
    let dlon = (lon2 - lon1).to_radians();
    let h = (dlat * 0.5).sin().powi(2)
        + lat1.to_radians().cos() * lat2.to_radians().cos() * (dlon * 0.5).sin().powi(2);
    let h = h.min(1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Equirectangular tangent frame anchored at `origin`.
///
/// East/north are meters; the frame is a global chart (any point has
/// coordinates), accurate as a metric only near the origin.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: GeoPoint,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        LocalFrame { origin, cos_lat: origin.lat.to_radians().cos() }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    /// (east_m, north_m) of `p` relative to the origin, longitude wrapped to
    /// the shorter side.
    pub fn to_local(&self, p: GeoPoint) -> (f64, f64) {
        let dlat = (p.lat - self.origin.lat).to_radians();
        let mut dlon = p.lon - self.origin.lon;
        if dlon >= 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        let east = EARTH_RADIUS_M * self.cos_lat * dlon.to_radians();
        let north = EARTH_RADIUS_M * dlat;
        (east, north)
    }

    /// Point at (east_m, north_m) from the origin. Latitude leaving
    /// [-90, 90] is an error; longitude wraps.
    pub fn from_local(&self, east_m: f64, north_m: f64) -> Result<GeoPoint, GeoError> {
        let lat = self.origin.lat + (north_m / EARTH_RADIUS_M).to_degrees();
        let lon = self.origin.lon + (east_m / (EARTH_RADIUS_M * self.cos_lat)).to_degrees();
        GeoPoint::new(lat, lon)
    }
}

/// Shift `p` by the given local-frame offsets (meters east and north).
///
/// Valid for |east|, |north| < [`MAX_OFFSET_M`]; within that bound the
/// round-trip `distance_m(p, offset_m(p, e, n))` matches `hypot(e, n)`
/// to 0.5% at |lat| <= 60 degrees.
pub fn offset_m(p: GeoPoint, east_m: f64, north_m: f64) -> Result<GeoPoint, GeoError> {
    if !east_m.is_finite() || !north_m.is_finite() {
        return Err(GeoError::NotFinite);
    }
    if east_m.abs() >= MAX_OFFSET_M || north_m.abs() >= MAX_OFFSET_M {
        return Err(GeoError::OffsetOutOfRange { east_m, north_m });
    }
    LocalFrame::new(p).from_local(east_m, north_m)
}

/// Index of one square cell in a [`GridSpec`]. Ordering is lexicographic by
/// (ix, iy, level), which the metrics tie-breaks rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: i64,
    pub iy: i64,
    pub level: u8,
}

impl CellIndex {
    pub fn new(ix: i64, iy: i64, level: u8) -> Self {
        CellIndex { ix, iy, level }
    }
}

/// Axis-aligned square grid in the local frame of `origin`, with one cell
/// size per privacy level. Level 0 always exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    origin: GeoPoint,
    cell_size_m: BTreeMap<u8, f64>,
}

impl GridSpec {
    /// Single-level grid (level 0 only).
    pub fn uniform(origin: GeoPoint, cell_size_m: f64) -> Result<Self, GeoError> {
        let mut sizes = BTreeMap::new();
        sizes.insert(0, cell_size_m);
        GridSpec::with_levels(origin, sizes)
    }

    pub fn with_levels(origin: GeoPoint, cell_size_m: BTreeMap<u8, f64>) -> Result<Self, GeoError> {
        if !cell_size_m.contains_key(&0) {
            return Err(GeoError::UnknownLevel(0));
        }
        for &s in cell_size_m.values() {
            if !s.is_finite() || s <= 0.0 {
                return Err(GeoError::InvalidCellSize(s));
            }
        }
        Ok(GridSpec { origin, cell_size_m })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn size_for(&self, level: u8) -> Result<f64, GeoError> {
        self.cell_size_m.get(&level).copied().ok_or(GeoError::UnknownLevel(level))
    }

    fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.origin)
    }
}

/// Cell containing `p` at the given level. Total over the ±1000 km region
/// around the grid origin; points outside are rejected.
pub fn cell_of(p: GeoPoint, grid: &GridSpec, level: u8) -> Result<CellIndex, GeoError> {
    let size = grid.size_for(level)?;
    let (east, north) = grid.frame().to_local(p);
    if east.abs() > GRID_REGION_M || north.abs() > GRID_REGION_M {
        return Err(GeoError::OutOfRegion);
    }
    Ok(CellIndex {
        ix: (east / size).floor() as i64,
        iy: (north / size).floor() as i64,
        level,
    })
}

/// Center of a cell, in lat/lon.
pub fn cell_center(cell: CellIndex, grid: &GridSpec) -> Result<GeoPoint, GeoError> {
    let size = grid.size_for(cell.level)?;
    grid.frame()
        .from_local((cell.ix as f64 + 0.5) * size, (cell.iy as f64 + 0.5) * size)
}
