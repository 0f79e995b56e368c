//! Nearest-gridpoint assignment via great-circle distance.

use super::{DataError, GriddedField, NearestMap, StationSeries};

const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// For each station, the gridpoint minimizing haversine distance.
/// Ties resolve to the lowest gridpoint index.
pub fn nearest_gridpoints(
    stations: &StationSeries,
    field: &GriddedField,
) -> Result<NearestMap, DataError> {
    if stations.coords.is_empty() {
        return Err(DataError::Empty("no station coordinates".into()));
    }
    if field.coords.is_empty() {
        return Err(DataError::Empty("no gridpoint coordinates".into()));
    }
    let pairs = stations
        .coords
        .iter()
        .enumerate()
        .map(|(p, &sc)| {
            let mut best = (0usize, f64::INFINITY);
            for (g, &gc) in field.coords.iter().enumerate() {
                let d = haversine_km(sc, gc);
                if d < best.1 {
                    best = (g, d);
                }
            }
            (p, best.0, best.1)
        })
        .collect();
    Ok(NearestMap { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn field_with_coords(coords: Vec<(f64, f64)>) -> GriddedField {
        let d = coords.len();
        GriddedField::new(
            Array3::zeros((1, 2, d)),
            coords,
            vec!["a".into()],
            "v",
            "u",
        )
        .unwrap()
    }

    fn stations_with_coords(coords: Vec<(f64, f64)>) -> StationSeries {
        let p = coords.len();
        StationSeries::new(
            (0..p).map(|i| format!("s{i}")).collect(),
            coords,
            Array3::zeros((1, 2, p)),
            Array3::from_elem((1, 2, p), true),
        )
        .unwrap()
    }

    #[test]
    fn station_on_gridpoint_has_zero_distance() {
        let coords: Vec<(f64, f64)> = (0..10).map(|i| (40.0 + i as f64 * 0.1, -90.0)).collect();
        let field = field_with_coords(coords.clone());
        let st = stations_with_coords(vec![coords[7]]);
        let map = nearest_gridpoints(&st, &field).unwrap();
        assert_eq!(map.pairs, vec![(0, 7, 0.0)]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        // Gridpoints 2 and 5 symmetric about the station longitude.
        let mut coords = vec![(0.0, 10.0); 6];
        coords[2] = (0.0, -1.0);
        coords[5] = (0.0, 1.0);
        let field = field_with_coords(coords);
        let st = stations_with_coords(vec![(0.0, 0.0)]);
        let map = nearest_gridpoints(&st, &field).unwrap();
        assert_eq!(map.pairs[0].1, 2);
    }

    #[test]
    fn random_instances_match_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid: Vec<(f64, f64)> = (0..100)
            .map(|_| (rng.random_range(-60.0..60.0), rng.random_range(-150.0..150.0)))
            .collect();
        let st_coords: Vec<(f64, f64)> = (0..20)
            .map(|_| (rng.random_range(-60.0..60.0), rng.random_range(-150.0..150.0)))
            .collect();
        let field = field_with_coords(grid.clone());
        let st = stations_with_coords(st_coords.clone());
        let map = nearest_gridpoints(&st, &field).unwrap();
        for &(p, g, dist) in &map.pairs {
            // All-pairs scan oracle.
            let best = grid
                .iter()
                .map(|&gc| haversine_km(st_coords[p], gc))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(dist, best);
            assert_eq!(haversine_km(st_coords[p], grid[g]), best);
        }
    }

    #[test]
    fn permutation_of_stations_permutes_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grid: Vec<(f64, f64)> = (0..30)
            .map(|_| (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let st_coords: Vec<(f64, f64)> = (0..8)
            .map(|_| (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let field = field_with_coords(grid);
        let fwd = nearest_gridpoints(&stations_with_coords(st_coords.clone()), &field).unwrap();
        let mut rev_coords = st_coords.clone();
        rev_coords.reverse();
        let rev = nearest_gridpoints(&stations_with_coords(rev_coords), &field).unwrap();
        let n = st_coords.len();
        for p in 0..n {
            let (_, g1, d1) = fwd.pairs[p];
            let (_, g2, d2) = rev.pairs[n - 1 - p];
            assert_eq!(g1, g2);
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn haversine_known_value() {
        // One degree of latitude is about 111.19 km on a 6371 km sphere.
        let d = haversine_km((0.0, 0.0), (1.0, 0.0));
        assert!((d - 6371.0 * 1.0f64.to_radians()).abs() < 1e-9);
    }
}
