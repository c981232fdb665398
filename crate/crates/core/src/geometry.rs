//! Reference frames shared by every other module.
//!
//! Positions use a right-handed `(east, north, depth)` frame: `north` follows
//! geomagnetic north, `depth` grows downward from the water surface at 0.
//! Bearings are `(azimuth, elevation)` in degrees, azimuth clockwise from
//! north and elevation positive toward the surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate bearing: source and target coincide")]
    DegenerateBearing,
    #[error("negative depth {0} m")]
    NegativeDepth(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// A point in the water column, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub east: f64,
    pub north: f64,
    pub depth: f64,
}

impl Position {
    pub const fn new(east: f64, north: f64, depth: f64) -> Self {
        Self { east, north, depth }
    }

    pub fn is_finite(&self) -> bool {
        self.east.is_finite() && self.north.is_finite() && self.depth.is_finite()
    }

    /// Displacement `to - self` as `[east, north, depth]`.
    pub fn displacement_to(&self, to: &Position) -> [f64; 3] {
        [to.east - self.east, to.north - self.north, to.depth - self.depth]
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        norm(self.displacement_to(other))
    }

    /// `self + scale * v` where `v` is in `[east, north, depth]` components.
    pub fn offset(&self, v: [f64; 3], scale: f64) -> Position {
        Position::new(
            self.east + scale * v[0],
            self.north + scale * v[1],
            self.depth + scale * v[2],
        )
    }
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.distance_to(b)
}

pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Angle in radians between two non-zero vectors.
pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return 0.0;
    }
    (dot(a, b) / denom).clamp(-1.0, 1.0).acos()
}

/// Emission or receiver orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bearing {
    azimuth: f64,
    elevation: f64,
}

impl Bearing {
    /// Builds a canonical bearing: azimuth wrapped into `[0, 360)`, elevation
    /// clamped to `[-90, 90]`, azimuth forced to 0 when pointing straight up
    /// or down.
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        let elevation = elevation_deg.clamp(-90.0, 90.0);
        let mut azimuth = azimuth_deg.rem_euclid(360.0);
        if azimuth >= 360.0 {
            azimuth = 0.0;
        }
        if elevation.abs() == 90.0 {
            azimuth = 0.0;
        }
        Self { azimuth, elevation }
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    /// Unit vector in `[east, north, depth]` components.
    pub fn unit_vector(&self) -> [f64; 3] {
        let az = self.azimuth.to_radians();
        let el = self.elevation.to_radians();
        let horizontal = el.cos();
        [horizontal * az.sin(), horizontal * az.cos(), -el.sin()]
    }

    /// Bearing of the opposite direction.
    pub fn reversed(&self) -> Bearing {
        Bearing::new(self.azimuth + 180.0, -self.elevation)
    }
}

/// Direction from `from` toward `to`.
pub fn bearing_from_to(from: &Position, to: &Position) -> Result<Bearing, GeometryError> {
    if !from.is_finite() || !to.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let [de, dn, dd] = from.displacement_to(to);
    let run = de.hypot(dn);
    let rise = -dd;
    if run == 0.0 && rise == 0.0 {
        return Err(GeometryError::DegenerateBearing);
    }
    let elevation = rise.atan2(run).to_degrees();
    let azimuth = if run == 0.0 { 0.0 } else { de.atan2(dn).to_degrees() };
    Ok(Bearing::new(azimuth, elevation))
}

/// Depth-dependent sounding resolution `δ(z) = base + slope · z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthAccuracy {
    /// Resolution at the surface, meters.
    pub base: f64,
    /// Resolution growth per meter of depth.
    pub slope: f64,
}

impl Default for DepthAccuracy {
    fn default() -> Self {
        Self { base: 0.5, slope: 0.005 }
    }
}

impl DepthAccuracy {
    pub fn resolution_at(&self, depth: f64) -> f64 {
        self.base + self.slope * depth
    }

    /// Continuous bucket coordinate: the number of resolution cells between
    /// the surface and `depth`, i.e. the integral of `1/δ(z)`. Each unit step
    /// spans exactly `δ(z)` meters at depth `z`.
    fn cell_coordinate(&self, depth: f64) -> f64 {
        if self.slope == 0.0 {
            depth / self.base
        } else {
            (self.slope * depth / self.base).ln_1p() / self.slope
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthCode {
    pub bucket: u32,
    pub resolution_at_depth: f64,
}

/// Quantizes a depth into the bucket the sonar (and the node) would report.
/// Two depths are indistinguishable iff their buckets are equal.
pub fn quantize_depth(depth: f64, model: &DepthAccuracy) -> Result<DepthCode, GeometryError> {
    if !depth.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    if depth < 0.0 {
        return Err(GeometryError::NegativeDepth(depth));
    }
    let bucket = model.cell_coordinate(depth).floor() as u32;
    Ok(DepthCode {
        bucket,
        resolution_at_depth: model.resolution_at(depth),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle_distance(a: &Position, b: &Position) -> f64 {
        let dx = a.east - b.east;
        let dy = a.north - b.north;
        let dz = a.depth - b.depth;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    #[test]
    fn distance_examples() {
        let o = Position::new(0.0, 0.0, 0.0);
        assert_eq!(distance(&o, &o), 0.0);
        assert_eq!(distance(&o, &Position::new(0.0, 0.0, 200.0)), 200.0);
        let a = Position::new(0.0, 0.0, 50.0);
        let b = Position::new(30.0, 40.0, 50.0);
        assert!((distance(&a, &b) - oracle_distance(&a, &b)).abs() < 1e-12);
        assert!((distance(&a, &b) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn bearing_examples() {
        let b = bearing_from_to(&Position::new(0.0, 0.0, 100.0), &Position::new(0.0, 100.0, 100.0))
            .unwrap();
        assert_eq!((b.azimuth(), b.elevation()), (0.0, 0.0));

        let up = bearing_from_to(&Position::new(0.0, 0.0, 100.0), &Position::new(0.0, 0.0, 0.0))
            .unwrap();
        assert_eq!((up.azimuth(), up.elevation()), (0.0, 90.0));

        let t = bearing_from_to(&Position::new(0.0, 0.0, 50.0), &Position::new(30.0, 40.0, 50.0))
            .unwrap();
        let expected = 30f64.atan2(40.0).to_degrees();
        assert!((t.azimuth() - expected).abs() < 1e-9);
        assert!((t.azimuth() - 36.8699).abs() < 1e-4);
        assert_eq!(t.elevation(), 0.0);
    }

    #[test]
    fn bearing_degenerate() {
        let p = Position::new(1.0, 2.0, 3.0);
        assert_eq!(bearing_from_to(&p, &p), Err(GeometryError::DegenerateBearing));
    }

    #[test]
    fn bearing_canonical_straight_down() {
        let b = Bearing::new(123.0, -90.0);
        assert_eq!(b.azimuth(), 0.0);
        let w = Bearing::new(-10.0, 5.0);
        assert!((w.azimuth() - 350.0).abs() < 1e-12);
    }

    #[test]
    fn quantize_examples() {
        let m = DepthAccuracy::default();
        assert_eq!(quantize_depth(0.0, &m).unwrap().bucket, 0);
        assert!((m.resolution_at(100.0) - 1.0).abs() < 1e-12);
        let a = quantize_depth(100.0, &m).unwrap().bucket;
        let b = quantize_depth(100.3, &m).unwrap().bucket;
        let c = quantize_depth(101.2, &m).unwrap().bucket;
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(matches!(quantize_depth(-0.1, &m), Err(GeometryError::NegativeDepth(_))));
    }

    #[test]
    fn bucket_width_matches_resolution() {
        // Walk a bucket at 100 m in 1 mm steps; its width must be δ(100) ≈ 1 m.
        let m = DepthAccuracy::default();
        let start = quantize_depth(100.0, &m).unwrap().bucket;
        let mut lo = 100.0;
        while quantize_depth(lo - 0.001, &m).unwrap().bucket == start {
            lo -= 0.001;
        }
        let mut hi = 100.0;
        while quantize_depth(hi + 0.001, &m).unwrap().bucket == start {
            hi += 0.001;
        }
        let width = hi - lo;
        assert!((width - m.resolution_at((lo + hi) / 2.0)).abs() < 0.01, "width {width}");
    }

    fn pos() -> impl Strategy<Value = Position> {
        (-500.0..500.0f64, -500.0..500.0f64, 0.0..500.0f64)
            .prop_map(|(e, n, d)| Position::new(e, n, d))
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_triangle(a in pos(), b in pos(), c in pos()) {
            prop_assert_eq!(distance(&a, &b), distance(&b, &a));
            prop_assert!(distance(&a, &c) <= distance(&a, &b) + distance(&b, &c) + 1e-9);
        }

        #[test]
        fn bearing_round_trip(a in pos(), b in pos()) {
            prop_assume!(distance(&a, &b) > 1e-6);
            let bearing = bearing_from_to(&a, &b).unwrap();
            let back = a.offset(bearing.unit_vector(), distance(&a, &b));
            prop_assert!(distance(&back, &b) < 1e-6);
        }

        #[test]
        fn quantize_monotone(d1 in 0.0..1000.0f64, d2 in 0.0..1000.0f64) {
            let m = DepthAccuracy::default();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(quantize_depth(lo, &m).unwrap().bucket <= quantize_depth(hi, &m).unwrap().bucket);
        }
    }
}
