use odflow::geo::{decode_geohash, geohash_bounds, haversine_km, LatLon};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = LatLon> {
    (-90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(lat, lon)| LatLon::new(lat, lon))
}

const BASE32: &[u8] = b"0123456789bcdefghjkmnpqrstuvwxyz";

fn geohash(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(0..32usize, 1..=max).prop_map(|v| v.into_iter().map(|k| BASE32[k] as char).collect())
}

proptest! {
    #[test]
    fn haversine_symmetric(a in point(), b in point()) {
        prop_assert_eq!(haversine_km(a, b), haversine_km(b, a));
        prop_assert!(haversine_km(a, b) >= 0.0);
    }

    #[test]
    fn haversine_triangle(a in point(), b in point(), c in point()) {
        prop_assert!(haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9);
    }

    #[test]
    fn geohash_child_inside_parent(code in geohash(11), k in 0..32usize) {
        let parent = geohash_bounds(&code).unwrap();
        let child = format!("{code}{}", BASE32[k] as char);
        prop_assert!(parent.contains(decode_geohash(&child).unwrap()));
        prop_assert!(parent.contains(decode_geohash(&code).unwrap()));
    }
}
