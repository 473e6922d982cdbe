//! Multi-head attention over irregular neighborhoods.
//!
//! Every token attends to the `width` entries of its neighbor-table row plus
//! one learned blank slot. Logits are `q.k / sqrt(C/H)` plus a per-head bias
//! that a single linear layer predicts from the expanded relative position;
//! the blank slot gets the raw scaled dot product with the blank key and no
//! position bias.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Init, ParamId, ParamStore, Real, Tensor, Var};
use crate::neighborhood::{NeighborTable, REL_DIM};
use crate::{Error, Point, Result};

const WEIGHT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub dim: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    /// `REL_DIM x heads`.
    pub pos_w: ParamId,
    pub pos_b: ParamId,
    pub blank_k: ParamId,
    pub blank_v: ParamId,
}

impl AttentionParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument("head count must divide the channel count"));
        }
        let w = Init::TruncatedNormal { std: WEIGHT_STD };
        let mut add = |name: &str, r, c, init| store.add(&format!("{prefix}.{name}"), r, c, init, rng);
        Ok(Self {
            dim,
            heads,
            wq: add("wq", dim, dim, w)?,
            bq: add("bq", 1, dim, Init::Zeros)?,
            wk: add("wk", dim, dim, w)?,
            bk: add("bk", 1, dim, Init::Zeros)?,
            wv: add("wv", dim, dim, w)?,
            bv: add("bv", 1, dim, Init::Zeros)?,
            wo: add("wo", dim, dim, w)?,
            bo: add("bo", 1, dim, Init::Zeros)?,
            pos_w: add("pos_w", REL_DIM, heads, w)?,
            pos_b: add("pos_b", 1, heads, Init::Zeros)?,
            blank_k: add("blank_k", 1, dim, w)?,
            blank_v: add("blank_v", 1, dim, w)?,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Pre-norm transformer block: attention and a GELU MLP, each residual.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub norm1_gain: ParamId,
    pub norm1_offset: ParamId,
    pub attn: AttentionParams,
    pub norm2_gain: ParamId,
    pub norm2_offset: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

impl BlockParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attn = AttentionParams::new(store, &format!("{prefix}.attn"), dim, heads, rng)?;
        let hidden = dim * mlp_ratio;
        let w = Init::TruncatedNormal { std: WEIGHT_STD };
        let mut add = |name: &str, r, c, init| store.add(&format!("{prefix}.{name}"), r, c, init, rng);
        Ok(Self {
            norm1_gain: add("norm1.gain", 1, dim, Init::Ones)?,
            norm1_offset: add("norm1.offset", 1, dim, Init::Zeros)?,
            attn,
            norm2_gain: add("norm2.gain", 1, dim, Init::Ones)?,
            norm2_offset: add("norm2.offset", 1, dim, Init::Zeros)?,
            mlp_w1: add("mlp.w1", dim, hidden, w)?,
            mlp_b1: add("mlp.b1", 1, hidden, Init::Zeros)?,
            mlp_w2: add("mlp.w2", hidden, dim, w)?,
            mlp_b2: add("mlp.b2", 1, dim, Init::Zeros)?,
        })
    }
}

/// `x W + b` with `W` and `b` taken from the store.
pub fn linear<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let w = g.param(store, w);
    let b = g.param(store, b);
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Per-head bias for every (token, neighbor) pair: `rel W + b`, `rel` being
/// the `(N*M) x 5` expanded relative positions.
pub fn position_bias<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    rel: Var,
    params: &AttentionParams,
) -> Result<Var> {
    linear(g, store, rel, params.pos_w, params.pos_b)
}

/// Constant node holding the table's relative positions.
pub fn rel_pos_input<T: Real>(g: &mut Graph<T>, table: &NeighborTable) -> Var {
    let rows = table.tokens * table.width;
    g.constant(Tensor::from_f64(rows, REL_DIM, &table.rel_pos))
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `N x C` projected output.
    pub out: Var,
    /// Per head, the `N x (M + 1)` attention matrix; the last column is the
    /// blank slot.
    pub weights: Vec<Var>,
}

pub fn local_attention<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    table: &NeighborTable,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let (n, c) = g.shape(x);
    if c != params.dim || table.tokens != n {
        return Err(Error::ShapeMismatch {
            op: "local_attention",
            left: (n, c),
            right: (table.tokens, params.dim),
        });
    }
    let m = table.width;
    let d = params.head_dim();
    let repeat: Vec<usize> = (0..n).flat_map(|i| core::iter::repeat_n(i, m)).collect();

    let q = linear(g, store, x, params.wq, params.bq)?;
    let q = g.scale(q, T::lit(1.0 / libm::sqrt(d as f64)));
    let k = linear(g, store, x, params.wk, params.bk)?;
    let v = linear(g, store, x, params.wv, params.bv)?;
    let rel = rel_pos_input(g, table);
    let bias = position_bias(g, store, rel, params)?;

    let q_rep = g.gather_rows(q, &repeat)?;
    let k_nb = g.gather_rows(k, &table.indices)?;
    let v_nb = g.gather_rows(v, &table.indices)?;
    let qk = g.mul(q_rep, k_nb)?;
    let blank_k = g.param(store, params.blank_k);
    let blank_v = g.param(store, params.blank_v);

    let mut heads = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let dots = g.slice_cols(qk, h * d, d)?;
        let dots = g.row_sum(dots);
        let ph = g.slice_cols(bias, h, 1)?;
        let logits = g.add(dots, ph)?;
        let logits = g.reshape(logits, n, m)?;
        let qh = g.slice_cols(q, h * d, d)?;
        let kb = g.slice_cols(blank_k, h * d, d)?;
        let kb = g.reshape(kb, d, 1)?;
        let blank_logit = g.matmul(qh, kb)?;
        let logits = g.concat_cols(&[logits, blank_logit])?;
        if !g.value(logits).is_finite() {
            return Err(Error::NonFinite("attention logits"));
        }
        let attn = g.softmax(logits);
        weights.push(attn);

        let a_nb = g.slice_cols(attn, 0, m)?;
        let a_nb = g.reshape(a_nb, n * m, 1)?;
        let vh = g.slice_cols(v_nb, h * d, d)?;
        let weighted = g.mul_rows(vh, a_nb)?;
        let pooled = g.scatter_add_rows(weighted, &repeat, n)?;
        let a_blank = g.slice_cols(attn, m, 1)?;
        let vb = g.slice_cols(blank_v, h * d, d)?;
        let blank_part = g.matmul(a_blank, vb)?;
        heads.push(g.add(pooled, blank_part)?);
    }
    let merged = g.concat_cols(&heads)?;
    let out = linear(g, store, merged, params.wo, params.bo)?;
    Ok(AttentionOutput { out, weights })
}

pub fn mlp<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, params: &BlockParams) -> Result<Var> {
    let h = linear(g, store, x, params.mlp_w1, params.mlp_b1)?;
    let h = g.gelu(h);
    linear(g, store, h, params.mlp_w2, params.mlp_b2)
}

/// `x + attn(LN(x))`, then `x + MLP(LN(x))`. Positions are untouched.
pub fn transformer_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    table: &NeighborTable,
    params: &BlockParams,
) -> Result<Var> {
    let gain = g.param(store, params.norm1_gain);
    let offset = g.param(store, params.norm1_offset);
    let h = g.layer_norm(x, gain, offset)?;
    let a = local_attention(g, store, h, table, &params.attn)?;
    let x = g.add(x, a.out)?;
    let gain = g.param(store, params.norm2_gain);
    let offset = g.param(store, params.norm2_offset);
    let h = g.layer_norm(x, gain, offset)?;
    let h = mlp(g, store, h, params)?;
    g.add(x, h)
}

/// Transformer block in which every token attends to all tokens.
pub fn global_attention_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    positions: &[Point],
    params: &BlockParams,
) -> Result<Var> {
    let table = NeighborTable::global(positions);
    transformer_block(g, store, x, &table, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::clustering::ClusterAssignment;
    use crate::neighborhood::build_neighbor_table;

    fn points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
            .collect()
    }

    #[test]
    fn head_count_must_divide() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        assert!(AttentionParams::new(&mut store, "a", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn zero_position_weights_give_constant_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let p = AttentionParams::new(&mut store, "a", 4, 2, &mut rng).unwrap();
        *store.value_mut(p.pos_w) = Tensor::zeros(REL_DIM, 2);
        *store.value_mut(p.pos_b) = Tensor::from_vec(1, 2, vec![0.25, -1.5]);
        let pts = points(5, &mut rng);
        let table = NeighborTable::global(&pts);
        let mut g = Graph::new();
        let rel = rel_pos_input(&mut g, &table);
        let b = position_bias(&mut g, &store, rel, &p).unwrap();
        for row in g.value(b).data.chunks(2) {
            assert_eq!(row, &[0.25, -1.5]);
        }
    }

    #[test]
    fn uniform_attention_when_keys_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let p = AttentionParams::new(&mut store, "a", 4, 1, &mut rng).unwrap();
        *store.value_mut(p.wk) = Tensor::zeros(4, 4);
        *store.value_mut(p.pos_w) = Tensor::zeros(REL_DIM, 1);
        *store.value_mut(p.blank_k) = Tensor::zeros(1, 4);
        let pts = points(6, &mut rng);
        let a = ClusterAssignment::partition((0..6).collect(), 2);
        let table = build_neighbor_table(&pts, &a, 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(6, 4, (0..24).map(|i| i as f64 * 0.1).collect()));
        let out = local_attention(&mut g, &store, x, &table, &p).unwrap();
        let w = g.value(out.weights[0]);
        for v in &w.data {
            assert!((v - 1.0 / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_blank_returns_blank_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let p = AttentionParams::new(&mut store, "a", 2, 1, &mut rng).unwrap();
        // q = x, blank key huge along the first channel, ordinary keys zero
        *store.value_mut(p.wq) = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        *store.value_mut(p.wk) = Tensor::zeros(2, 2);
        *store.value_mut(p.pos_w) = Tensor::zeros(REL_DIM, 1);
        *store.value_mut(p.blank_k) = Tensor::from_vec(1, 2, vec![1e4, 0.0]);
        *store.value_mut(p.blank_v) = Tensor::from_vec(1, 2, vec![0.3, -0.7]);
        *store.value_mut(p.wo) = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        let table = NeighborTable::global(&pts);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(2, 2, vec![1.0, 0.5, 2.0, -0.5]));
        let out = local_attention(&mut g, &store, x, &table, &p).unwrap();
        let o = g.value(out.out);
        for r in 0..2 {
            assert!((o.at(r, 0) - 0.3).abs() < 1e-9);
            assert!((o.at(r, 1) + 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn zeroed_output_projections_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let p = BlockParams::new(&mut store, "b", 4, 2, 2, &mut rng).unwrap();
        *store.value_mut(p.attn.wo) = Tensor::zeros(4, 4);
        *store.value_mut(p.mlp_w2) = Tensor::zeros(8, 4);
        let pts = points(5, &mut rng);
        let table = NeighborTable::global(&pts);
        let feats: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(5, 4, feats.clone()));
        let y = transformer_block(&mut g, &store, x, &table, &p).unwrap();
        assert_eq!(g.value(y).data, feats);
    }

    #[test]
    fn single_token_global_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let p = BlockParams::new(&mut store, "b", 4, 2, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(1, 4, vec![0.1, 0.2, -0.3, 0.4]));
        let h = g.constant(Tensor::from_vec(1, 4, vec![0.1, 0.2, -0.3, 0.4]));
        let y = global_attention_block(&mut g, &store, x, &[Point::new(3.0, 3.0)], &p).unwrap();
        assert!(g.value(y).is_finite());
        let table = NeighborTable::global(&[Point::new(3.0, 3.0)]);
        let a = local_attention(&mut g, &store, h, &table, &p.attn).unwrap();
        assert_eq!(g.value(a.weights[0]).shape(), (1, 2));
    }
}
