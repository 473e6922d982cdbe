//! Learnable adaptive downsampling.
//!
//! 1. every token gets an importance score `s = sigmoid(l(f))`;
//! 2. an adaptive grid prior `g` marks the tokens a stride-2 grid
//!    downsampling would keep at the token's local stride, and coarse-lattice
//!    tokens are reserved;
//! 3. reserved tokens, then the highest `g + alpha * s`, become merge centers;
//! 4. each center's neighborhood is merged with a score-modulated point
//!    convolution: `vec(sum_i s_i W(p_i - p_c) f_i^T) U`.
//!
//! Because the scores scale the merged features, the task loss reaches the
//! score layer through every neighborhood, selected or not.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::linear;
use crate::autodiff::{Graph, Init, ParamId, ParamStore, Real, Tensor, Var};
use crate::neighborhood::{expand_rel, NeighborTable, REL_DIM};
use crate::{Error, Point, Result};

/// Hidden width of the merge weight net.
pub const C_MID: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DownsampleParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Score layer `l`: `in_dim x 1` and `1 x 1`.
    pub score_w: ParamId,
    pub score_b: ParamId,
    /// Weight net `W`: linear `5 -> C_MID`, layer norm, GELU.
    pub weight_w: ParamId,
    pub weight_b: ParamId,
    pub weight_gain: ParamId,
    pub weight_offset: ParamId,
    /// `(C_MID * in_dim) x out_dim`, no bias.
    pub u: ParamId,
    pub alpha: f64,
    pub keep_fraction: f64,
}

impl DownsampleParams {
    /// The score layer starts at zero, so every initial score is 0.5. The
    /// weight net starts close to position-independent (small input weights,
    /// unit-scale random bias), so merging begins as plain pooling; the
    /// random bias also keeps the zero offset of the center itself away
    /// from the layer norm's singular point.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        alpha: f64,
        keep_fraction: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if keep_fraction.is_nan() || keep_fraction <= 0.0 || keep_fraction > 1.0 {
            return Err(Error::InvalidArgument("keep fraction must lie in (0, 1]"));
        }
        if alpha.is_nan() || alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be nonnegative"));
        }
        let u_std = 1.0 / libm::sqrt((C_MID * in_dim) as f64);
        let mut add = |name: &str, r, c, init| store.add(&format!("{prefix}.{name}"), r, c, init, rng);
        Ok(Self {
            in_dim,
            out_dim,
            score_w: add("score.w", in_dim, 1, Init::Zeros)?,
            score_b: add("score.b", 1, 1, Init::Zeros)?,
            weight_w: add("weightnet.w", REL_DIM, C_MID, Init::TruncatedNormal { std: 0.02 })?,
            weight_b: add("weightnet.b", 1, C_MID, Init::TruncatedNormal { std: 1.0 })?,
            weight_gain: add("weightnet.gain", 1, C_MID, Init::Ones)?,
            weight_offset: add("weightnet.offset", 1, C_MID, Init::Zeros)?,
            u: add("u", C_MID * in_dim, out_dim, Init::TruncatedNormal { std: u_std })?,
            alpha,
            keep_fraction,
        })
    }
}

/// Adaptive grid prior of one token set.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrior {
    /// Local stride `t_i`, a power of two.
    pub stride: Vec<f64>,
    pub g: Vec<bool>,
    pub reserved: Vec<bool>,
}

impl GridPrior {
    /// Prior of a single token, which has no local stride.
    fn lone() -> Self {
        Self {
            stride: alloc::vec![1.0],
            g: alloc::vec![false],
            reserved: alloc::vec![false],
        }
    }
}

/// `N x 1` scores `sigmoid(f w + b)`.
pub fn importance_scores<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    features: Var,
    params: &DownsampleParams,
) -> Result<Var> {
    let logits = linear(g, store, features, params.score_w, params.score_b)?;
    Ok(g.sigmoid(logits))
}

fn pow2_at_least(d: f64) -> f64 {
    let mut t = 1.0;
    while t < d {
        t *= 2.0;
    }
    while t / 2.0 >= d {
        t /= 2.0;
    }
    t
}

/// L1 distance to the nearest other token rounded up to a power of two.
pub fn local_stride(positions: &[Point]) -> Result<Vec<f64>> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::TooFewTokens { needed: 2, got: n });
    }
    let mut out = Vec::with_capacity(n);
    for (i, &p) in positions.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, &q) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = p.dist_l1(q);
            if d == 0.0 {
                return Err(Error::DuplicatePosition {
                    first: i.min(j),
                    second: i.max(j),
                });
            }
            best = best.min(d);
        }
        out.push(pow2_at_least(best));
    }
    Ok(out)
}

/// `g_i = 1` iff both coordinates are multiples of `2 t_i`; token `i` is
/// reserved in stage `j` iff both are multiples of `2^(j+1)`.
pub fn grid_prior(positions: &[Point], stage_index: usize) -> Result<GridPrior> {
    if stage_index == 0 {
        return Err(Error::InvalidArgument("stage index starts at 1"));
    }
    for (i, p) in positions.iter().enumerate() {
        if libm::floor(p.x) != p.x || libm::floor(p.y) != p.y {
            return Err(Error::NonIntegerPosition { index: i });
        }
    }
    let stride = local_stride(positions)?;
    let coarse = (1i64 << (stage_index + 1).min(62)) as f64;
    let on = |v: f64, m: f64| libm::fmod(v, m) == 0.0;
    let g = positions
        .iter()
        .zip(&stride)
        .map(|(p, &t)| on(p.x, 2.0 * t) && on(p.y, 2.0 * t))
        .collect();
    let reserved = positions.iter().map(|p| on(p.x, coarse) && on(p.y, coarse)).collect();
    Ok(GridPrior { stride, g, reserved })
}

/// Number of centers kept out of `n`: `max(1, round(keep * n))`, at most `n`.
pub fn keep_count(n: usize, keep_fraction: f64) -> usize {
    (libm::round(keep_fraction * n as f64) as usize).clamp(1, n.max(1))
}

/// Merge centers in ascending index order. Reserved tokens always survive
/// (growing the count if they alone exceed it); the rest are ranked by
/// `g + alpha * s`, ties to the lower index.
pub fn select_centers(prior: &GridPrior, scores: &[f64], alpha: f64, keep_fraction: f64) -> Vec<usize> {
    let n = scores.len();
    let reserved = prior.reserved.iter().filter(|&&r| r).count();
    let m = keep_count(n, keep_fraction).max(reserved);
    let mut ranked: Vec<(bool, f64, usize)> = (0..n)
        .map(|i| {
            let g = if prior.g[i] { 1.0 } else { 0.0 };
            (prior.reserved[i], g + alpha * scores[i], i)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut picked: Vec<usize> = ranked.into_iter().take(m).map(|(_, _, i)| i).collect();
    picked.sort_unstable();
    picked
}

/// Score-modulated point convolution around each center, using the center's
/// neighbor-table row. Returns `centers.len() x out_dim` features.
#[allow(clippy::too_many_arguments)]
pub fn merge_neighborhoods<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    centers: &[usize],
    positions: &[Point],
    table: &NeighborTable,
    features: Var,
    scores: Var,
    params: &DownsampleParams,
) -> Result<Var> {
    let (n, c) = g.shape(features);
    if c != params.in_dim || table.tokens != n || g.shape(scores) != (n, 1) {
        return Err(Error::ShapeMismatch {
            op: "merge_neighborhoods",
            left: (n, c),
            right: (table.tokens, params.in_dim),
        });
    }
    let m = table.width;
    let mut index = Vec::with_capacity(centers.len() * m);
    let mut rel = Vec::with_capacity(centers.len() * m * REL_DIM);
    let mut owner = Vec::with_capacity(centers.len() * m);
    for (slot, &ctr) in centers.iter().enumerate() {
        for &j in table.row(ctr) {
            index.push(j);
            owner.push(slot);
            rel.extend_from_slice(&expand_rel(positions[j] - positions[ctr]));
        }
    }
    let rel = g.constant(Tensor::from_f64(index.len(), REL_DIM, &rel));
    let w = linear(g, store, rel, params.weight_w, params.weight_b)?;
    let gain = g.param(store, params.weight_gain);
    let offset = g.param(store, params.weight_offset);
    let w = g.layer_norm(w, gain, offset)?;
    let w = g.gelu(w);

    let f_nb = g.gather_rows(features, &index)?;
    let s_nb = g.gather_rows(scores, &index)?;
    let f_mod = g.mul_rows(f_nb, s_nb)?;
    let outer = g.row_outer(w, f_mod)?;
    let summed = g.scatter_add_rows(outer, &owner, centers.len())?;
    let u = g.param(store, params.u);
    g.matmul(summed, u)
}

#[derive(Debug, Clone)]
pub struct DownsampleOutput {
    pub positions: Vec<Point>,
    /// `centers.len() x out_dim`.
    pub features: Var,
    pub prior: GridPrior,
    pub scores: Vec<f64>,
    pub centers: Vec<usize>,
}

/// Scores, grid prior, center selection and merging in one step.
pub fn downsample<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    positions: &[Point],
    features: Var,
    table: &NeighborTable,
    params: &DownsampleParams,
    stage_index: usize,
) -> Result<DownsampleOutput> {
    let scores_var = importance_scores(g, store, features, params)?;
    let scores: Vec<f64> = g.value(scores_var).data.iter().map(|v| Real::to_f64(*v)).collect();
    let prior = if positions.len() < 2 {
        GridPrior::lone()
    } else {
        grid_prior(positions, stage_index)?
    };
    let centers = select_centers(&prior, &scores, params.alpha, params.keep_fraction);
    let merged = merge_neighborhoods(g, store, &centers, positions, table, features, scores_var, params)?;
    Ok(DownsampleOutput {
        positions: centers.iter().map(|&i| positions[i]).collect(),
        features: merged,
        prior,
        scores,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lattice(w: usize, h: usize) -> Vec<Point> {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| Point::new(x as f64, y as f64)))
            .collect()
    }

    #[test]
    fn stride_examples() {
        let pts = vec![Point::new(0.0, 0.0), Point::new(3.0, 0.0)];
        assert_eq!(local_stride(&pts).unwrap(), vec![4.0, 4.0]);
        assert!(local_stride(&lattice(4, 4)).unwrap().iter().all(|&t| t == 1.0));
        let pts = vec![Point::new(0.0, 0.0), Point::new(4.0, 0.0)];
        assert_eq!(local_stride(&pts).unwrap(), vec![4.0, 4.0]);
        assert!(matches!(
            local_stride(&[Point::new(0.0, 0.0)]),
            Err(Error::TooFewTokens { .. })
        ));
        assert!(matches!(
            local_stride(&[Point::new(1.0, 1.0), Point::new(1.0, 1.0)]),
            Err(Error::DuplicatePosition { first: 0, second: 1 })
        ));
    }

    #[test]
    fn prior_examples() {
        let pts = lattice(8, 8);
        let p = grid_prior(&pts, 1).unwrap();
        let at = |x: usize, y: usize| y * 8 + x;
        assert!(p.g[at(2, 4)]);
        assert!(!p.g[at(1, 4)]);
        assert!(p.reserved[at(4, 4)]);
        assert!(!p.reserved[at(2, 4)]);

        // stride-2 lattice: (2,2) is not a multiple of 4
        let pts: Vec<Point> = lattice(4, 4)
            .into_iter()
            .map(|p| Point::new(2.0 * p.x, 2.0 * p.y))
            .collect();
        let p = grid_prior(&pts, 2).unwrap();
        assert_eq!(p.stride[5], 2.0);
        assert!(!p.g[5]);
        assert!(p.g[0] && p.g[2]);

        assert!(matches!(
            grid_prior(&[Point::new(0.5, 0.0), Point::new(2.0, 0.0)], 1),
            Err(Error::NonIntegerPosition { index: 0 })
        ));
    }

    #[test]
    fn selection_rules() {
        let prior = GridPrior {
            stride: vec![1.0; 8],
            g: vec![false; 8],
            reserved: vec![true, false, false, false, false, false, false, false],
        };
        let mut s = vec![1.0; 8];
        s[0] = 0.0;
        let picked = select_centers(&prior, &s, 4.0, 0.25);
        assert_eq!(picked.len(), 2);
        assert!(picked.contains(&0));

        // reserved overflow grows m
        let prior = GridPrior {
            stride: vec![1.0; 8],
            g: vec![false; 8],
            reserved: vec![true, true, true, false, false, false, false, false],
        };
        assert_eq!(select_centers(&prior, &s, 4.0, 0.25), vec![0, 1, 2]);
    }

    #[test]
    fn selection_matches_exhaustive_ranking() {
        let prior = GridPrior {
            stride: vec![1.0; 6],
            g: vec![true, false, true, false, false, true],
            reserved: vec![false; 6],
        };
        let s = [0.1, 0.6, 0.2, 0.9, 0.3, 0.05];
        let alpha = 4.0;
        // g + 4s = 1.4, 2.4, 1.8, 3.6, 1.2, 1.2
        // top-3 by brute force over all 3-subsets
        let value = |i: usize| f64::from(u8::from(prior.g[i])) + alpha * s[i];
        let mut best: Option<(f64, Vec<usize>)> = None;
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    let total = value(a) + value(b) + value(c);
                    if best.as_ref().is_none_or(|(t, _)| total > *t) {
                        best = Some((total, vec![a, b, c]));
                    }
                }
            }
        }
        assert_eq!(select_centers(&prior, &s, alpha, 0.5), best.unwrap().1);
    }

    #[test]
    fn zero_scores_annihilate_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let p = DownsampleParams::new(&mut store, "d", 3, 5, 4.0, 0.5, &mut rng).unwrap();
        let pts = lattice(2, 2);
        let table = NeighborTable::global(&pts);
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_vec(4, 3, (0..12).map(|i| i as f64).collect()));
        let s = g.constant(Tensor::zeros(4, 1));
        let out = merge_neighborhoods(&mut g, &store, &[0, 3], &pts, &table, f, s, &p).unwrap();
        assert_eq!(g.value(out).shape(), (2, 5));
        assert!(g.value(out).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_scores_are_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let p = DownsampleParams::new(&mut store, "d", 3, 3, 4.0, 0.25, &mut rng).unwrap();
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 9.0]));
        let s = importance_scores(&mut g, &store, f, &p).unwrap();
        assert_eq!(g.value(s).data, vec![0.5, 0.5]);
        *store.value_mut(p.score_b) = Tensor::from_vec(1, 1, vec![50.0]);
        let s = importance_scores(&mut g, &store, f, &p).unwrap();
        assert!(g.value(s).data.iter().all(|&v| v > 1.0 - 1e-12));
    }

    #[test]
    fn keep_counts() {
        assert_eq!(keep_count(8, 0.25), 2);
        assert_eq!(keep_count(3136, 0.2), 627);
        assert_eq!(keep_count(3, 0.1), 1);
    }
}
