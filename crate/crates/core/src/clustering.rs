//! Balanced clustering of token positions and the silhouette coefficient.
//!
//! Tokens are quantized to coarse anchors ordered by a space-filling curve.
//! Inside one anchor cell tokens are ordered by the ratio of their distances
//! to the previous and the next anchor along the curve, so the token sequence
//! flows from one cell into the next. Cutting the sequence into contiguous
//! runs gives clusters whose sizes differ by at most one.

use alloc::vec;
use alloc::vec::Vec;

use crate::sfc::{self, CurveKind, CurveRanker};
use crate::{BBox, Error, Point, Result};

const RATIO_EPS: f64 = 1e-9;

/// Token positions (stage-1 lattice units) with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub positions: Vec<Point>,
    pub features: Vec<f64>,
    pub channels: usize,
    pub stage_index: usize,
}

impl TokenSet {
    pub fn new(positions: Vec<Point>, features: Vec<f64>, channels: usize, stage_index: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyInput("token set"));
        }
        if features.len() != positions.len() * channels {
            return Err(Error::ShapeMismatch {
                op: "TokenSet::new",
                left: (positions.len(), channels),
                right: (features.len(), 1),
            });
        }
        Ok(Self {
            positions,
            features,
            channels,
            stage_index,
        })
    }

    /// Featureless set, for clustering-only workflows.
    pub fn from_positions(positions: Vec<Point>) -> Result<Self> {
        Self::new(positions, Vec::new(), 0, 1)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Token indices in curve order; cluster `c` is
    /// `sorted_order[offsets[c]..offsets[c + 1]]`.
    pub sorted_order: Vec<usize>,
    pub cluster_of: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl ClusterAssignment {
    /// Cuts an ordering of `n` tokens into `k` contiguous groups of size
    /// `floor(n/k)` or `ceil(n/k)`, larger groups first.
    pub fn partition(sorted_order: Vec<usize>, k: usize) -> Self {
        let n = sorted_order.len();
        let k = k.clamp(1, n.max(1));
        let (base, extra) = (n / k, n % k);
        let cluster_sizes: Vec<usize> = (0..k).map(|c| base + usize::from(c < extra)).collect();
        let mut offsets = Vec::with_capacity(k + 1);
        offsets.push(0);
        for s in &cluster_sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let mut cluster_of = vec![0; n];
        for c in 0..k {
            for &t in &sorted_order[offsets[c]..offsets[c + 1]] {
                cluster_of[t] = c;
            }
        }
        Self {
            sorted_order,
            cluster_of,
            cluster_sizes,
            offsets,
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.sorted_order[self.offsets[cluster]..self.offsets[cluster + 1]]
    }

    pub fn max_cluster_size(&self) -> usize {
        self.cluster_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// `|p - a_prev| / (|p - a_next| + eps)`.
pub fn ratio_key(p: Point, a_prev: Point, a_next: Point) -> f64 {
    p.dist(a_prev) / (p.dist(a_next) + RATIO_EPS)
}

/// Number of clusters for `n` tokens: `max(1, round(n / cluster_size))`.
pub fn cluster_count_for(n: usize, cluster_size: usize) -> usize {
    let k = libm::round(n as f64 / cluster_size.max(1) as f64) as usize;
    k.max(1)
}

/// Anchored balanced clustering of `positions`.
pub fn balanced_cluster(positions: &[Point], cluster_size: usize, curve: CurveKind) -> Result<ClusterAssignment> {
    if cluster_size == 0 {
        return Err(Error::EmptyInput("cluster size"));
    }
    let bbox = BBox::of_tokens(positions)?;
    let k = cluster_count_for(positions.len(), cluster_size);
    let grid = sfc::build_anchor_grid(bbox, k)?;
    let ordering = sfc::order(&grid, curve);
    let ranks = ordering.ranks();
    let last = ordering.order.len() - 1;

    let mut keyed = Vec::with_capacity(positions.len());
    for (i, &p) in positions.iter().enumerate() {
        let anchor = sfc::quantize(p, &grid)?;
        let rank = ranks[anchor];
        let prev = grid.anchors[ordering.order[rank.saturating_sub(1)]];
        let next = grid.anchors[ordering.order[(rank + 1).min(last)]];
        keyed.push((rank, ratio_key(p, prev, next), i));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let order = keyed.into_iter().map(|(_, _, i)| i).collect();
    Ok(ClusterAssignment::partition(order, k))
}

/// Balanced clustering without anchors: the curve runs directly over unit
/// cells of the token extent and tokens are sorted by the rank of their cell.
pub fn no_anchor_cluster(positions: &[Point], cluster_size: usize, curve: CurveKind) -> Result<ClusterAssignment> {
    if cluster_size == 0 {
        return Err(Error::EmptyInput("cluster size"));
    }
    let bbox = BBox::of_tokens(positions)?;
    let cols = libm::ceil(bbox.width) as usize;
    let rows = libm::ceil(bbox.height) as usize;
    let ranker = CurveRanker::new(curve, rows, cols);
    let mut keyed: Vec<(u64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = (libm::floor(p.x - bbox.min.x) as usize).min(cols - 1);
            let r = (libm::floor(p.y - bbox.min.y) as usize).min(rows - 1);
            (ranker.rank(r, c), i)
        })
        .collect();
    keyed.sort_unstable();
    let k = cluster_count_for(positions.len(), cluster_size);
    Ok(ClusterAssignment::partition(
        keyed.into_iter().map(|(_, i)| i).collect(),
        k,
    ))
}

pub fn centroids(positions: &[Point], assignment: &ClusterAssignment) -> Vec<Point> {
    (0..assignment.cluster_count())
        .map(|c| {
            let members = assignment.members(c);
            let mut sum = Point::default();
            for &t in members {
                sum = sum + positions[t];
            }
            let n = members.len() as f64;
            Point::new(sum.x / n, sum.y / n)
        })
        .collect()
}

/// Mean silhouette coefficient over all tokens. Tokens of singleton clusters
/// contribute 0.
pub fn silhouette(positions: &[Point], assignment: &ClusterAssignment) -> Result<f64> {
    let k = assignment.cluster_count();
    if k < 2 {
        return Err(Error::SilhouetteUndefined);
    }
    let mut sums = vec![0.0; k];
    let mut total = 0.0;
    for (i, &p) in positions.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, &q) in positions.iter().enumerate() {
            sums[assignment.cluster_of[j]] += p.dist(q);
        }
        let own = assignment.cluster_of[i];
        let own_size = assignment.cluster_sizes[own];
        if own_size < 2 {
            continue;
        }
        let a = sums[own] / (own_size - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / assignment.cluster_sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / positions.len() as f64)
}
