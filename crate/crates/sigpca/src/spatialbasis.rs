//! Multi-resolution compactly supported Wendland radial basis functions.
//!
//! Knot grids cover the bounding box inclusive of its edges; each successive
//! resolution doubles the knot count per axis, and the kernel bandwidth is
//! exactly 2.5 times that resolution's knot spacing. Distances are Euclidean
//! in degrees, matching the metric in which the knot grid is defined.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ndarray::Array2;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("degenerate bounding box [{0}, {1}] x [{2}, {3}]")]
    DegenerateBbox(f64, f64, f64, f64),
    #[error("base_knots_per_axis must be >= 2, got {0}")]
    TooFewKnots(usize),
    #[error("n_resolutions must be >= 1, got {0}")]
    NoResolutions(usize),
}

/// Bandwidth is this multiple of the knot spacing at every resolution.
pub const BANDWIDTH_SPACING_RATIO: f64 = 2.5;

/// One resolution level: a regular knot grid with its spacing and bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisResolution {
    /// `(lat, lon)` knots, latitude-major.
    pub knots: Vec<(f64, f64)>,
    pub knots_per_axis: usize,
    /// Maximum of the per-axis grid spacings, in degrees.
    pub knot_spacing: f64,
    /// `BANDWIDTH_SPACING_RATIO * knot_spacing`, exactly.
    pub bandwidth: f64,
}

/// Multi-resolution Wendland basis over a bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingBasis {
    pub resolutions: Vec<BasisResolution>,
    /// `(lat_min, lat_max, lon_min, lon_max)`.
    pub bbox: (f64, f64, f64, f64),
}

impl KrigingBasis {
    /// Total basis function count across resolutions.
    pub fn total_count(&self) -> usize {
        self.resolutions.iter().map(|r| r.knots.len()).sum()
    }
}

/// Wendland kernel `(1 - r)^6 (35 r^2 + 18 r + 3) / 3` on `[0, 1]`, zero
/// beyond. Panics on negative input; distances are never negative.
pub fn wendland(r: f64) -> f64 {
    assert!(r >= 0.0, "wendland requires r >= 0, got {r}");
    if r > 1.0 {
        return 0.0;
    }
    let one_minus = 1.0 - r;
    one_minus.powi(6) * (35.0 * r * r + 18.0 * r + 3.0) / 3.0
}

/// Build a multi-resolution basis: resolution `r` places
/// `base_knots_per_axis * 2^(r-1)` knots per axis on a regular grid covering
/// the bounding box inclusive of its edges.
pub fn build_basis(
    bbox: (f64, f64, f64, f64),
    base_knots_per_axis: usize,
    n_resolutions: usize,
) -> Result<KrigingBasis, BasisError> {
    let (lat_min, lat_max, lon_min, lon_max) = bbox;
    if !(lat_max > lat_min && lon_max > lon_min) {
        return Err(BasisError::DegenerateBbox(lat_min, lat_max, lon_min, lon_max));
    }
    if base_knots_per_axis < 2 {
        return Err(BasisError::TooFewKnots(base_knots_per_axis));
    }
    if n_resolutions < 1 {
        return Err(BasisError::NoResolutions(n_resolutions));
    }
    let mut resolutions = Vec::with_capacity(n_resolutions);
    for level in 0..n_resolutions {
        let n = base_knots_per_axis << level;
        let lat_spacing = (lat_max - lat_min) / (n - 1) as f64;
        let lon_spacing = (lon_max - lon_min) / (n - 1) as f64;
        let knot_spacing = lat_spacing.max(lon_spacing);
        let mut knots = Vec::with_capacity(n * n);
        for i in 0..n {
            let lat = lat_min + lat_spacing * i as f64;
            for j in 0..n {
                let lon = lon_min + lon_spacing * j as f64;
                knots.push((lat, lon));
            }
        }
        resolutions.push(BasisResolution {
            knots,
            knots_per_axis: n,
            knot_spacing,
            bandwidth: BANDWIDTH_SPACING_RATIO * knot_spacing,
        });
    }
    Ok(KrigingBasis { resolutions, bbox })
}

fn degree_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dlat = a.0 - b.0;
    let dlon = a.1 - b.1;
    (dlat * dlat + dlon * dlon).sqrt()
}

/// Evaluate every basis function at every coordinate: entry `(n, j)` is
/// `wendland(dist(coord_n, knot_j) / bandwidth)` with the knot's resolution
/// bandwidth; columns are grouped by resolution in order.
pub fn basis_matrix(coords: &[(f64, f64)], basis: &KrigingBasis) -> Array2<f64> {
    let total = basis.total_count();
    let mut out = Array2::zeros((coords.len(), total));
    for (row, &coord) in coords.iter().enumerate() {
        let mut col = 0;
        for resolution in &basis.resolutions {
            for &knot in &resolution.knots {
                let r = degree_distance(coord, knot) / resolution.bandwidth;
                out[[row, col]] = wendland(r);
                col += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const BBOX: (f64, f64, f64, f64) = (40.0, 44.0, -90.0, -86.0);

    #[test]
    fn kernel_values() {
        assert_eq!(wendland(0.0), 1.0);
        assert_eq!(wendland(1.2), 0.0);
        assert_eq!(wendland(1.0), 0.0);
        // (0.5)^6 = 0.015625, 35/4 + 9 + 3 = 20.75.
        let want = 0.015625 * 20.75 / 3.0;
        assert!((wendland(0.5) - want).abs() < 1e-15);
        assert!((want - 0.108_072_916_6).abs() < 1e-9);
    }

    #[test]
    #[should_panic(expected = "r >= 0")]
    fn kernel_rejects_negative() {
        wendland(-0.1);
    }

    #[test]
    fn kernel_monotone_and_bounded_on_unit_interval() {
        let mut prev = wendland(0.0);
        for i in 1..=10_000 {
            let r = i as f64 / 10_000.0;
            let w = wendland(r);
            assert!(w <= prev + 1e-15, "not non-increasing at r={r}");
            assert!((0.0..=1.0).contains(&w));
            prev = w;
        }
    }

    #[test]
    fn geometric_doubling_of_knot_counts() {
        let basis = build_basis(BBOX, 5, 3).unwrap();
        let counts: Vec<usize> = basis.resolutions.iter().map(|r| r.knots.len()).collect();
        assert_eq!(counts, vec![25, 100, 400]);
        assert_eq!(basis.total_count(), 525);
        for r in &basis.resolutions {
            assert_eq!(r.bandwidth, BANDWIDTH_SPACING_RATIO * r.knot_spacing);
        }
    }

    #[test]
    fn smallest_basis_spans_bbox() {
        let basis = build_basis(BBOX, 2, 1).unwrap();
        let r = &basis.resolutions[0];
        assert_eq!(r.knots.len(), 4);
        assert_eq!(r.knot_spacing, 4.0);
        assert!(r.knots.contains(&(40.0, -90.0)));
        assert!(r.knots.contains(&(44.0, -86.0)));
    }

    #[test]
    fn finest_resolution_covers_probe_grid() {
        let basis = build_basis(BBOX, 4, 3).unwrap();
        let finest = basis.resolutions.last().unwrap();
        let bound = finest.knot_spacing * 2.0f64.sqrt() / 2.0 + 1e-9;
        // Dense probe grid: the nearest knot is never farther than half a
        // cell diagonal.
        for i in 0..=60 {
            for j in 0..=60 {
                let p = (
                    BBOX.0 + (BBOX.1 - BBOX.0) * i as f64 / 60.0,
                    BBOX.2 + (BBOX.3 - BBOX.2) * j as f64 / 60.0,
                );
                let nearest = finest
                    .knots
                    .iter()
                    .map(|&k| degree_distance(p, k))
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest <= bound, "probe {p:?} nearest {nearest} > {bound}");
            }
        }
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(matches!(
            build_basis((40.0, 40.0, -90.0, -86.0), 5, 3),
            Err(BasisError::DegenerateBbox(..))
        ));
    }

    #[test]
    fn point_on_knot_gives_unit_column() {
        let basis = build_basis(BBOX, 3, 2).unwrap();
        let knot = basis.resolutions[0].knots[4];
        let m = basis_matrix(&[knot], &basis);
        assert_eq!(m[[0, 4]], 1.0);
    }

    #[test]
    fn far_point_zeroes_resolution_block() {
        // A coarse 2-knot-per-axis resolution over a small box has a large
        // bandwidth, so probe support against the finest resolution of a
        // deeper basis instead: pick a point beyond bandwidth of every
        // finest-resolution knot by shrinking the bandwidth scale.
        let basis = build_basis((0.0, 1.0, 0.0, 1.0), 2, 1).unwrap();
        let far = (30.0, 30.0);
        let m = basis_matrix(&[far], &basis);
        for v in m.row(0).iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn matrix_matches_scalar_re_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let basis = build_basis(BBOX, 3, 3).unwrap();
        let coords: Vec<(f64, f64)> = (0..40)
            .map(|_| {
                (
                    rng.random_range(BBOX.0..BBOX.1),
                    rng.random_range(BBOX.2..BBOX.3),
                )
            })
            .collect();
        let m = basis_matrix(&coords, &basis);
        for (row, &coord) in coords.iter().enumerate() {
            let mut col = 0;
            let mut row_sum = 0.0;
            for resolution in &basis.resolutions {
                for &knot in &resolution.knots {
                    let want = wendland(degree_distance(coord, knot) / resolution.bandwidth);
                    assert!((m[[row, col]] - want).abs() < 1e-12);
                    row_sum += want;
                    col += 1;
                }
            }
            let got_sum: f64 = m.row(row).sum();
            assert!((got_sum - row_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn all_values_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let basis = build_basis(BBOX, 4, 2).unwrap();
        let coords: Vec<(f64, f64)> = (0..100)
            .map(|_| {
                (
                    rng.random_range(BBOX.0..BBOX.1),
                    rng.random_range(BBOX.2..BBOX.3),
                )
            })
            .collect();
        let m = basis_matrix(&coords, &basis);
        for v in m.iter() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn active_knots_per_resolution_bounded() {
        // With bandwidth = 2.5 x spacing, a point sees at most 6 knots per
        // axis per resolution: ceil(2 * 2.5 + 1)^2 = 36.
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let basis = build_basis(BBOX, 5, 3).unwrap();
        for _ in 0..1000 {
            let p = (
                rng.random_range(BBOX.0..BBOX.1),
                rng.random_range(BBOX.2..BBOX.3),
            );
            let m = basis_matrix(&[p], &basis);
            let mut col = 0;
            for resolution in &basis.resolutions {
                let active = (0..resolution.knots.len())
                    .filter(|&j| m[[0, col + j]] > 0.0)
                    .count();
                assert!(active <= 36, "{active} active knots at one resolution");
                col += resolution.knots.len();
            }
        }
    }

    #[test]
    fn row_order_follows_input_order() {
        let basis = build_basis(BBOX, 3, 2).unwrap();
        let a = (41.0, -89.0);
        let b = (43.0, -87.0);
        let fwd = basis_matrix(&[a, b], &basis);
        let rev = basis_matrix(&[b, a], &basis);
        for c in 0..basis.total_count() {
            assert_eq!(fwd[[0, c]], rev[[1, c]]);
            assert_eq!(fwd[[1, c]], rev[[0, c]]);
        }
    }
}
