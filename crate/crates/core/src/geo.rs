//! Spherical geodesy: great-circle distance, initial bearing, compass
//! bucketing and left/right classification relative to a direction of travel.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Mean Earth radius in meters used for every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Below this value of `sin(central angle)` the initial bearing is
/// numerically meaningless (coincident or antipodal points).
const BEARING_DEGENERACY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("bearing undefined between coincident points")]
    CoincidentPoints,
    #[error("bearing undefined between antipodal points")]
    AntipodalPoints,
}

/// WGS84 latitude/longitude in decimal degrees.
///
/// Serialized as a `[lon, lat]` pair, the order used by every file format
/// in this crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }

    /// Builds a point from the `[lon, lat]` order used on the wire.
    pub fn from_lon_lat(lon: f64, lat: f64) -> Result<Self, GeoError> {
        Self::new(lat, lon)
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn to_lon_lat(self) -> [f64; 2] {
        [self.lon, self.lat]
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

impl Serialize for GeoPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_lon_lat().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GeoPoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [lon, lat] = <[f64; 2]>::deserialize(deserializer)?;
        GeoPoint::from_lon_lat(lon, lat).map_err(serde::de::Error::custom)
    }
}

/// Clockwise azimuth from true north, always in `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Bearing(f64);

impl Bearing {
    /// Normalizes any finite angle in degrees into `[0, 360)`.
    pub fn new(degrees: f64) -> Self {
        let mut d = degrees.rem_euclid(360.0);
        // rem_euclid of a tiny negative value rounds up to exactly 360.0
        if d >= 360.0 {
            d = 0.0;
        }
        Self(d)
    }

    pub fn degrees(self) -> f64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Bearing {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Bearing::new(f64::deserialize(deserializer)?))
    }
}

/// One of the eight 45° compass sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CardinalDirection {
    North,
    #[serde(rename = "North-East")]
    NorthEast,
    East,
    #[serde(rename = "South-East")]
    SouthEast,
    South,
    #[serde(rename = "South-West")]
    SouthWest,
    West,
    #[serde(rename = "North-West")]
    NorthWest,
}

impl CardinalDirection {
    pub const ALL: [CardinalDirection; 8] = [
        CardinalDirection::North,
        CardinalDirection::NorthEast,
        CardinalDirection::East,
        CardinalDirection::SouthEast,
        CardinalDirection::South,
        CardinalDirection::SouthWest,
        CardinalDirection::West,
        CardinalDirection::NorthWest,
    ];

    /// Lowercase hyphenated form used inside instructions ("north-east").
    pub fn word(self) -> &'static str {
        match self {
            CardinalDirection::North => "north",
            CardinalDirection::NorthEast => "north-east",
            CardinalDirection::East => "east",
            CardinalDirection::SouthEast => "south-east",
            CardinalDirection::South => "south",
            CardinalDirection::SouthWest => "south-west",
            CardinalDirection::West => "west",
            CardinalDirection::NorthWest => "north-west",
        }
    }

    /// Sector center in degrees.
    pub fn center(self) -> f64 {
        45.0 * self as u8 as f64
    }
}

impl fmt::Display for CardinalDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            CardinalDirection::North => "North",
            CardinalDirection::NorthEast => "North-East",
            CardinalDirection::East => "East",
            CardinalDirection::SouthEast => "South-East",
            CardinalDirection::South => "South",
            CardinalDirection::SouthWest => "South-West",
            CardinalDirection::West => "West",
            CardinalDirection::NorthWest => "North-West",
        };
        f.write_str(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EgocentricSide {
    Left,
    Right,
}

impl EgocentricSide {
    pub fn opposite(self) -> Self {
        match self {
            EgocentricSide::Left => EgocentricSide::Right,
            EgocentricSide::Right => EgocentricSide::Left,
        }
    }

    /// Phrase used in instructions ("on your right").
    pub fn phrase(self) -> &'static str {
        match self {
            EgocentricSide::Left => "on your left",
            EgocentricSide::Right => "on your right",
        }
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` toward `b`.
///
/// `atan2(sin Δλ · cos φ₂, cos φ₁ · sin φ₂ − sin φ₁ · cos φ₂ · cos Δλ)`,
/// converted to degrees and normalized to `[0, 360)`.
pub fn bearing(a: GeoPoint, b: GeoPoint) -> Result<Bearing, GeoError> {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    // |(y, x)| is the sine of the central angle between the points.
    if y.hypot(x) < BEARING_DEGENERACY {
        let cos_central = phi1.sin() * phi2.sin() + phi1.cos() * phi2.cos() * dlambda.cos();
        return Err(if cos_central > 0.0 {
            GeoError::CoincidentPoints
        } else {
            GeoError::AntipodalPoints
        });
    }
    Ok(Bearing::new(y.atan2(x).to_degrees()))
}

/// Buckets a bearing into 45° sectors centered on the compass points.
/// A value on a sector boundary belongs to the clockwise-later sector.
pub fn cardinal_of(b: Bearing) -> CardinalDirection {
    let sector = ((b.degrees() + 22.5) / 45.0).floor() as usize % 8;
    CardinalDirection::ALL[sector]
}

/// Side of a landmark relative to the direction of travel.
///
/// `theta_landmark` is the bearing of the shortest line from the path to the
/// landmark. `Δθ = (θ_l − θ_p) mod 360`; RIGHT iff `Δθ < 180`.
pub fn egocentric_side(theta_path: Bearing, theta_landmark: Bearing) -> EgocentricSide {
    let delta = (theta_landmark.degrees() - theta_path.degrees()).rem_euclid(360.0);
    if delta < 180.0 {
        EgocentricSide::Right
    } else {
        EgocentricSide::Left
    }
}

/// Local equirectangular frame anchored at `origin`, in meters (x east, y north).
///
/// Accurate to well under a meter over city-scale extents, which is all the
/// corridor and projection queries need.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: GeoPoint,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        Self {
            origin,
            cos_lat: origin.lat.to_radians().cos().max(1e-9),
        }
    }

    pub fn to_xy(&self, p: GeoPoint) -> (f64, f64) {
        let mut dlon = p.lon - self.origin.lon;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        let x = dlon.to_radians() * EARTH_RADIUS_M * self.cos_lat;
        let y = (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    pub fn to_point(&self, x: f64, y: f64) -> GeoPoint {
        let lat = (self.origin.lat + (y / EARTH_RADIUS_M).to_degrees()).clamp(-90.0, 90.0);
        let mut lon = self.origin.lon + (x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees();
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        GeoPoint { lat, lon }
    }
}

/// Closest point of segment `a→b` to `p`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentProjection {
    /// Position along the segment in `[0, 1]`.
    pub t: f64,
    pub point: GeoPoint,
    /// Haversine distance from `p` to `point`.
    pub distance: f64,
}

pub fn project_onto_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> SegmentProjection {
    let frame = LocalFrame::new(a);
    let (bx, by) = frame.to_xy(b);
    let (px, py) = frame.to_xy(p);
    let len2 = bx * bx + by * by;
    let t = if len2 > 0.0 {
        ((px * bx + py * by) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let point = if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        frame.to_point(t * bx, t * by)
    };
    SegmentProjection {
        t,
        point,
        distance: haversine_distance(p, point),
    }
}
