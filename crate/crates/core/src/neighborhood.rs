//! Neighbor tables built from the nearest clusters, the expanded relative
//! position features and inverse-distance (Shepard) interpolation.

use alloc::vec::Vec;

use crate::clustering::{self, ClusterAssignment};
use crate::{Error, Point, Result};

const DIST_EPS: f64 = 1e-9;

/// Width of an expanded relative position.
pub const REL_DIM: usize = 5;

/// Fixed-width neighbor lists. Row `i` holds the `width` neighbors of token
/// `i`; short rows repeat their last real neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    pub indices: Vec<usize>,
    /// `expand_rel(p_i - p_j)` per entry, `REL_DIM` values each.
    pub rel_pos: Vec<f64>,
    pub tokens: usize,
    pub width: usize,
}

impl NeighborTable {
    pub fn row(&self, token: usize) -> &[usize] {
        &self.indices[token * self.width..(token + 1) * self.width]
    }

    pub fn rel(&self, token: usize, slot: usize) -> &[f64] {
        let at = (token * self.width + slot) * REL_DIM;
        &self.rel_pos[at..at + REL_DIM]
    }

    /// Table whose rows list every token, for global attention.
    pub fn global(positions: &[Point]) -> Self {
        let n = positions.len();
        let indices: Vec<usize> = (0..n).flat_map(|_| 0..n).collect();
        Self::from_indices(positions, indices, n)
    }

    fn from_indices(positions: &[Point], indices: Vec<usize>, width: usize) -> Self {
        let tokens = positions.len();
        let mut rel_pos = Vec::with_capacity(indices.len() * REL_DIM);
        for (at, &j) in indices.iter().enumerate() {
            let i = at / width.max(1);
            rel_pos.extend_from_slice(&expand_rel(positions[i] - positions[j]));
        }
        Self {
            indices,
            rel_pos,
            tokens,
            width,
        }
    }
}

/// `(dx, dy, d, dx / (d + eps), dy / (d + eps))` with `d = |delta|`.
pub fn expand_rel(delta: Point) -> [f64; REL_DIM] {
    let d = libm::hypot(delta.x, delta.y);
    let inv = 1.0 / (d + DIST_EPS);
    [delta.x, delta.y, d, delta.x * inv, delta.y * inv]
}

/// The `r` clusters whose centroids are closest to `query`, nearest first,
/// ties to the lower id.
pub fn nearest_clusters(query: Point, centroids: &[Point], r: usize) -> Result<Vec<usize>> {
    if r > centroids.len() {
        return Err(Error::TooManyClusters {
            requested: r,
            available: centroids.len(),
        });
    }
    let mut ranked: Vec<(f64, usize)> = centroids.iter().enumerate().map(|(c, &p)| (query.dist(p), c)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(r).map(|(_, c)| c).collect())
}

/// Neighborhoods made of the `r` clusters nearest to each token's own
/// cluster centroid. The token's own cluster always comes first. Rows are
/// `r * max_cluster_size` wide.
pub fn build_neighbor_table(positions: &[Point], assignment: &ClusterAssignment, r: usize) -> Result<NeighborTable> {
    if r == 0 {
        return Err(Error::EmptyInput("neighbor cluster count"));
    }
    let centers = clustering::centroids(positions, assignment);
    let width = r * assignment.max_cluster_size();
    let per_cluster = (0..assignment.cluster_count())
        .map(|c| {
            let mut row = Vec::with_capacity(width);
            for n in nearest_clusters(centers[c], &centers, r)? {
                row.extend_from_slice(assignment.members(n));
            }
            let last = *row.last().expect("clusters are nonempty");
            row.resize(width, last);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut indices = Vec::with_capacity(positions.len() * width);
    for &c in &assignment.cluster_of {
        indices.extend_from_slice(&per_cluster[c]);
    }
    Ok(NeighborTable::from_indices(positions, indices, width))
}

/// Inverse-distance weighted mean of the `k` nearest source features with
/// weights `1 / (d^power + eps)` normalized to sum to one.
pub fn shepard_interpolate(
    query: Point,
    positions: &[Point],
    features: &[f64],
    channels: usize,
    k: usize,
    power: f64,
) -> Result<Vec<f64>> {
    if positions.is_empty() || k == 0 {
        return Err(Error::EmptyInput("interpolation sources"));
    }
    if features.len() != positions.len() * channels {
        return Err(Error::ShapeMismatch {
            op: "shepard_interpolate",
            left: (positions.len(), channels),
            right: (features.len(), 1),
        });
    }
    if !power.is_finite() {
        return Err(Error::NonFinite("interpolation power"));
    }
    let weights = shepard_weights(query, positions, k, power);
    let mut out = alloc::vec![0.0; channels];
    for (j, w) in weights {
        for (o, f) in out.iter_mut().zip(&features[j * channels..(j + 1) * channels]) {
            *o += w * f;
        }
    }
    Ok(out)
}

/// `(source index, normalized weight)` pairs used by [`shepard_interpolate`].
pub fn shepard_weights(query: Point, positions: &[Point], k: usize, power: f64) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(f64, usize)> = positions.iter().enumerate().map(|(j, &p)| (query.dist(p), j)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(k.min(positions.len()));
    let raw: Vec<f64> = ranked
        .iter()
        .map(|&(d, _)| 1.0 / (libm::pow(d, power) + DIST_EPS))
        .collect();
    let total: f64 = raw.iter().sum();
    ranked.iter().zip(raw).map(|(&(_, j), w)| (j, w / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{balanced_cluster, ClusterAssignment};
    use crate::sfc::CurveKind;
    use alloc::vec;

    #[test]
    fn expand_rel_examples() {
        let v = expand_rel(Point::new(3.0, 4.0));
        let want = [3.0, 4.0, 5.0, 0.6, 0.8];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(expand_rel(Point::new(0.0, 0.0)), [0.0; 5]);
        let v = expand_rel(Point::new(-1.0, 0.0));
        let want = [-1.0, 0.0, 1.0, -1.0, 0.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn nearest_cluster_examples() {
        let c = vec![Point::new(5.0, 0.0), Point::new(1.0, 0.0), Point::new(3.0, 0.0)];
        assert_eq!(nearest_clusters(Point::new(0.0, 0.0), &c, 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(nearest_clusters(c[2], &c, 1).unwrap(), vec![2]);
        assert!(matches!(
            nearest_clusters(Point::new(0.0, 0.0), &c, 4),
            Err(Error::TooManyClusters { .. })
        ));
        // equidistant: lower id wins
        assert_eq!(nearest_clusters(Point::new(4.0, 0.0), &c, 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn one_cluster_whole_set() {
        let pts: Vec<Point> = (0..6).map(|i| Point::new(i as f64, 0.0)).collect();
        let a = ClusterAssignment::partition((0..6).collect(), 1);
        let t = build_neighbor_table(&pts, &a, 1).unwrap();
        for i in 0..6 {
            assert_eq!(t.row(i), &[0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn two_clusters_of_two() {
        let pts = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(11.0, 0.0),
        ];
        let a = ClusterAssignment::partition(vec![0, 1, 2, 3], 2);
        let t = build_neighbor_table(&pts, &a, 1).unwrap();
        assert_eq!(t.width, 2);
        assert_eq!(t.row(0), &[0, 1]);
        assert_eq!(t.row(1), &[0, 1]);
        assert_eq!(t.row(2), &[2, 3]);
        assert_eq!(t.row(3), &[2, 3]);
        assert_eq!(t.rel(0, 1), &expand_rel(Point::new(-1.0, 0.0)));
    }

    #[test]
    fn table_configuration_width() {
        let pts: Vec<Point> = (0..16)
            .flat_map(|y| (0..16).map(move |x| Point::new(x as f64, y as f64)))
            .collect();
        let a = balanced_cluster(&pts, 8, CurveKind::Scanline).unwrap();
        let t = build_neighbor_table(&pts, &a, 6).unwrap();
        assert_eq!(t.width, 48);
        for i in 0..pts.len() {
            assert!(t.row(i).contains(&i));
        }
    }

    #[test]
    fn padding_repeats_last() {
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 0.0)).collect();
        let a = ClusterAssignment::partition((0..10).collect(), 3); // 4,3,3
        let t = build_neighbor_table(&pts, &a, 1).unwrap();
        assert_eq!(t.width, 4);
        assert_eq!(t.row(9), &[7, 8, 9, 9]);
    }

    #[test]
    fn shepard_examples() {
        let pts = vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(5.0, 5.0)];
        let f = vec![1.0, 10.0, 3.0, 30.0, 7.0, 70.0];
        let out = shepard_interpolate(Point::new(0.0, 0.0), &pts, &f, 2, 4, 6.0).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-6 && (out[1] - 10.0).abs() < 1e-5);
        let out = shepard_interpolate(Point::new(1.0, 0.0), &pts, &f, 2, 2, 6.0).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12 && (out[1] - 20.0).abs() < 1e-12);
    }
}
