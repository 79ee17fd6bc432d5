mod support;

use navsynth_core::geo::{
    bearing, cardinal_of, egocentric_side, haversine_distance, Bearing, CardinalDirection, EgocentricSide, GeoPoint,
};
use proptest::prelude::*;
use rand::Rng;
use support::{angle_gap, direct_is_right, sector_of, vector_bearing, vector_distance};

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

#[test]
fn spec_pairs_match_vector_oracle() {
    for (a, b) in [
        (pt(0.0, 0.0), pt(0.0, 90.0)),
        (pt(40.7580, -73.9855), pt(40.7484, -73.9857)),
        (pt(10.0, 10.0), pt(20.0, 20.0)),
    ] {
        let (h, o) = (haversine_distance(a, b), vector_distance(a, b));
        assert!((h - o).abs() <= 1e-9 * o, "{h} vs {o}");
        let gap = angle_gap(bearing(a, b).unwrap().degrees(), vector_bearing(a, b));
        assert!(gap < 1e-9, "{gap}");
    }
    let quarter = std::f64::consts::FRAC_PI_2 * 6_371_000.0;
    assert!((haversine_distance(pt(0.0, 0.0), pt(0.0, 90.0)) - quarter).abs() < 1e-6);
    assert_eq!(bearing(pt(0.0, 0.0), pt(1.0, 0.0)).unwrap().degrees(), 0.0);
    assert!((bearing(pt(0.0, 0.0), pt(0.0, 1.0)).unwrap().degrees() - 90.0).abs() < 1e-12);
}

#[test]
fn random_pairs_match_vector_oracle() {
    let mut rng = support::rng(11);
    let mut checked = 0;
    while checked < 1000 {
        let a = pt(rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0));
        let b = if checked % 2 == 0 {
            pt(rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0))
        } else {
            // City-scale pairs exercise the small-angle regime.
            pt(
                (a.lat() + rng.random_range(-0.05..0.05)).clamp(-90.0, 90.0),
                (a.lon() + rng.random_range(-0.05..0.05)).clamp(-180.0, 180.0),
            )
        };
        let o = vector_distance(a, b);
        if !(1.0..=20_000_000.0).contains(&o) {
            continue;
        }
        let h = haversine_distance(a, b);
        assert!((h - o).abs() <= 1e-6 * o, "{a:?} {b:?}: {h} vs {o}");
        let gap = angle_gap(bearing(a, b).unwrap().degrees(), vector_bearing(a, b));
        assert!(gap <= 1e-6, "{a:?} {b:?}: bearing gap {gap}");
        checked += 1;
    }
}

#[test]
fn side_matches_direct_delta_including_boundaries() {
    let mut rng = support::rng(12);
    let mut cases: Vec<(f64, f64)> = Vec::new();
    for _ in 0..900 {
        cases.push((rng.random_range(0.0..360.0), rng.random_range(0.0..360.0)));
    }
    for _ in 0..50 {
        let p = rng.random_range(0..360) as f64;
        cases.push((p, p));
        cases.push((p, (p + 180.0) % 360.0));
    }
    assert_eq!(cases.len(), 1000);
    for (p, l) in cases {
        let side = egocentric_side(Bearing::new(p), Bearing::new(l));
        let expected = if direct_is_right(p, l) { EgocentricSide::Right } else { EgocentricSide::Left };
        assert_eq!(side, expected, "θp={p} θl={l}");
    }
    assert_eq!(egocentric_side(Bearing::new(0.0), Bearing::new(0.0)), EgocentricSide::Right);
    assert_eq!(egocentric_side(Bearing::new(0.0), Bearing::new(180.0)), EgocentricSide::Left);
    assert_eq!(egocentric_side(Bearing::new(0.0), Bearing::new(90.0)), EgocentricSide::Right);
    assert_eq!(egocentric_side(Bearing::new(90.0), Bearing::new(0.0)), EgocentricSide::Left);
}

#[test]
fn cardinal_sectors_match_table() {
    for (b, want) in [
        (0.0, CardinalDirection::North),
        (30.0, CardinalDirection::NorthEast),
        (22.5, CardinalDirection::NorthEast),
        (337.5, CardinalDirection::North),
        (337.4999, CardinalDirection::NorthWest),
        (180.0, CardinalDirection::South),
    ] {
        assert_eq!(cardinal_of(Bearing::new(b)), want, "{b}");
    }
    let mut rng = support::rng(13);
    for _ in 0..2000 {
        let b: f64 = rng.random_range(0.0..360.0);
        assert_eq!(cardinal_of(Bearing::new(b)), CardinalDirection::ALL[sector_of(b)], "{b}");
    }
}

#[test]
fn reverse_bearing_drifts_off_meridians() {
    // Great circles cross meridians at varying angles, so the back azimuth
    // differs from the forward one by 180° only along meridians and the equator.
    let (a, b) = (pt(10.0, 10.0), pt(20.0, 20.0));
    let f = bearing(a, b).unwrap().degrees();
    let r = bearing(b, a).unwrap().degrees();
    assert!(angle_gap(f + 180.0, r) > 1.0);
    assert!((angle_gap(r, vector_bearing(b, a))) < 1e-9);
}

#[test]
fn coincident_points_have_no_bearing() {
    assert!(bearing(pt(10.0, 20.0), pt(10.0, 20.0)).is_err());
    assert_eq!(haversine_distance(pt(10.0, 20.0), pt(10.0, 20.0)), 0.0);
}

fn point() -> impl Strategy<Value = GeoPoint> {
    (-85.0f64..85.0, -179.0f64..179.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

proptest! {
    #[test]
    fn reverse_bearing_is_opposite_on_meridians(lat1 in -85.0f64..85.0, lat2 in -85.0f64..85.0, lon in -179.0f64..179.0) {
        prop_assume!((lat1 - lat2).abs() > 1e-4);
        let (a, b) = (pt(lat1, lon), pt(lat2, lon));
        let f = bearing(a, b).unwrap().degrees();
        let r = bearing(b, a).unwrap().degrees();
        prop_assert!(angle_gap(f + 180.0, r) < 1e-6);
    }

    #[test]
    fn reverse_bearing_is_opposite_on_equator(lon1 in -170.0f64..0.0, dlon in 1e-3f64..340.0) {
        let (a, b) = (pt(0.0, lon1), pt(0.0, lon1 + dlon / 2.0));
        let f = bearing(a, b).unwrap().degrees();
        let r = bearing(b, a).unwrap().degrees();
        prop_assert!(angle_gap(f + 180.0, r) < 1e-6);
    }

    #[test]
    fn side_is_invariant_under_full_turns(p in 0.0f64..360.0, l in 0.0f64..360.0, k in -3i32..4) {
        let shift = 360.0 * k as f64;
        prop_assert_eq!(
            egocentric_side(Bearing::new(p), Bearing::new(l)),
            egocentric_side(Bearing::new(p + shift), Bearing::new(l + shift))
        );
    }

    #[test]
    fn cardinal_is_periodic(b in -720.0f64..720.0, k in -3i32..4) {
        prop_assert_eq!(
            cardinal_of(Bearing::new(b)),
            cardinal_of(Bearing::new(b + 360.0 * k as f64))
        );
    }

    #[test]
    fn bearing_is_normalized(d in -1e6f64..1e6) {
        let b = Bearing::new(d).degrees();
        prop_assert!((0.0..360.0).contains(&b));
    }

    #[test]
    fn triangle_inequality(a in point(), b in point(), c in point()) {
        let ab = haversine_distance(a, b);
        let bc = haversine_distance(b, c);
        let ac = haversine_distance(a, c);
        prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-9);
        prop_assert!((haversine_distance(b, a) - ab).abs() <= 1e-9 * ab.max(1.0));
    }
}
