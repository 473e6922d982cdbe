//! Library outputs against independent loop-based reimplementations.

#![allow(clippy::needless_range_loop)]

use aff_core::attention::{local_attention, position_bias, rel_pos_input, AttentionParams};
use aff_core::autodiff::{Graph, ParamStore, Tensor};
use aff_core::clustering::{balanced_cluster, centroids, ClusterAssignment};
use aff_core::downsample::{merge_neighborhoods, DownsampleParams, C_MID};
use aff_core::neighborhood::{build_neighbor_table, nearest_clusters, shepard_interpolate, NeighborTable};
use aff_core::sfc::CurveKind;
use aff_core::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
        .collect()
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

fn get(t: &Tensor<f64>, r: usize, c: usize) -> f64 {
    t.data[r * t.cols + c]
}

fn expand(dx: f64, dy: f64) -> [f64; 5] {
    let d = (dx * dx + dy * dy).sqrt();
    [dx, dy, d, dx / (d + 1e-9), dy / (d + 1e-9)]
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn affine(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    (0..w.cols)
        .map(|j| {
            let mut acc = b.map_or(0.0, |b| b.data[j]);
            for (i, xi) in x.iter().enumerate() {
                acc += xi * get(w, i, j);
            }
            acc
        })
        .collect()
}

/// Dense multi-head attention over explicit neighbor lists.
fn reference_attention(
    x: &[Vec<f64>],
    positions: &[Point],
    rows: &[Vec<usize>],
    store: &ParamStore<f64>,
    p: &AttentionParams,
) -> Vec<Vec<f64>> {
    let v = |id| store.value(id);
    let q: Vec<_> = x.iter().map(|r| affine(r, v(p.wq), Some(v(p.bq)))).collect();
    let k: Vec<_> = x.iter().map(|r| affine(r, v(p.wk), Some(v(p.bk)))).collect();
    let val: Vec<_> = x.iter().map(|r| affine(r, v(p.wv), Some(v(p.bv)))).collect();
    let d = p.dim / p.heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Vec::new();
    for i in 0..x.len() {
        let mut concat = vec![0.0; p.dim];
        for h in 0..p.heads {
            let cols = h * d..(h + 1) * d;
            let mut logits = Vec::new();
            for &j in &rows[i] {
                let rel = expand(positions[i].x - positions[j].x, positions[i].y - positions[j].y);
                let mut bias = v(p.pos_b).data[h];
                for (c, r) in rel.iter().enumerate() {
                    bias += r * get(v(p.pos_w), c, h);
                }
                let dot: f64 = cols.clone().map(|c| q[i][c] * k[j][c]).sum();
                logits.push(dot * scale + bias);
            }
            let blank: f64 = cols.clone().map(|c| q[i][c] * v(p.blank_k).data[c]).sum();
            logits.push(blank * scale);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols {
                let mut acc = e[rows[i].len()] / z * v(p.blank_v).data[c];
                for (slot, &j) in rows[i].iter().enumerate() {
                    acc += e[slot] / z * val[j][c];
                }
                concat[c] = acc;
            }
        }
        out.push(affine(&concat, v(p.wo), Some(v(p.bo))));
    }
    out
}

fn table_rows(table: &NeighborTable) -> Vec<Vec<usize>> {
    (0..table.tokens).map(|i| table.row(i).to_vec()).collect()
}

fn check_attention(n: usize, dim: usize, heads: usize, table_of: impl Fn(&[Point]) -> NeighborTable, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = random_points(n, &mut rng);
    let table = table_of(&positions);
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "attn", dim, heads, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut g = Graph::new();
    let xv = g.constant(Tensor::from_vec(n, dim, x.concat()));
    let out = local_attention(&mut g, &store, xv, &table, &p).unwrap();
    let want = reference_attention(&x, &positions, &table_rows(&table), &store, &p);
    let got = g.value(out.out);
    for i in 0..n {
        for c in 0..dim {
            assert!((get(got, i, c) - want[i][c]).abs() < 1e-10, "token {i} channel {c}");
        }
    }
}

#[test]
fn five_token_single_head_attention() {
    check_attention(
        5,
        4,
        1,
        |pts| {
            let a = ClusterAssignment::partition((0..5).collect(), 2);
            build_neighbor_table(pts, &a, 1).unwrap()
        },
        11,
    );
}

#[test]
fn clustered_multi_head_attention() {
    check_attention(
        23,
        8,
        2,
        |pts| {
            let a = balanced_cluster(pts, 4, CurveKind::Hilbert).unwrap();
            build_neighbor_table(pts, &a, 2).unwrap()
        },
        12,
    );
}

#[test]
fn eight_token_global_attention() {
    check_attention(8, 6, 3, NeighborTable::global, 13);
}

#[test]
fn position_bias_matches_dense_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let positions = random_points(9, &mut rng);
    let table = NeighborTable::global(&positions);
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "attn", 4, 2, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let mut g = Graph::new();
    let rel = rel_pos_input(&mut g, &table);
    let bias = position_bias(&mut g, &store, rel, &p).unwrap();
    let got = g.value(bias);
    for i in 0..9 {
        for (slot, &j) in table.row(i).iter().enumerate() {
            let rel = expand(positions[i].x - positions[j].x, positions[i].y - positions[j].y);
            let want = affine(&rel, store.value(p.pos_w), Some(store.value(p.pos_b)));
            for h in 0..2 {
                assert!((get(got, i * 9 + slot, h) - want[h]).abs() < 1e-12);
            }
        }
    }
}

/// Continuous convolution `vec(sum_j s_j W(p_j - p_c) f_j^T) U` evaluated
/// with explicit loops; `W` is linear, layer norm, GELU.
fn reference_merge(
    positions: &[Point],
    features: &[Vec<f64>],
    scores: &[f64],
    center: usize,
    neighbors: &[usize],
    store: &ParamStore<f64>,
    p: &DownsampleParams,
) -> Vec<f64> {
    let c = features[0].len();
    let mut acc = vec![vec![0.0; c]; C_MID];
    for &j in neighbors {
        let rel = expand(
            positions[j].x - positions[center].x,
            positions[j].y - positions[center].y,
        );
        let h = affine(&rel, store.value(p.weight_w), Some(store.value(p.weight_b)));
        let mean = h.iter().sum::<f64>() / C_MID as f64;
        let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / C_MID as f64;
        let w: Vec<f64> = (0..C_MID)
            .map(|m| {
                let n = (h[m] - mean) / (var + 1e-5).sqrt();
                gelu(n * store.value(p.weight_gain).data[m] + store.value(p.weight_offset).data[m])
            })
            .collect();
        for m in 0..C_MID {
            for ch in 0..c {
                acc[m][ch] += scores[j] * w[m] * features[j][ch];
            }
        }
    }
    affine(&acc.concat(), store.value(p.u), None)
}

#[test]
fn merge_matches_loop_reference_with_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 19;
    let positions = random_points(n, &mut rng);
    let a = balanced_cluster(&positions, 4, CurveKind::Scanline).unwrap();
    let table = build_neighbor_table(&positions, &a, 2).unwrap();
    let mut store = ParamStore::new();
    let p = DownsampleParams::new(&mut store, "down", 3, 5, 1.0, 0.25, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let centers = [1, 4, 9, 17];
    let mut g = Graph::new();
    let f = g.constant(Tensor::from_vec(n, 3, feats.concat()));
    let s = g.constant(Tensor::from_vec(n, 1, scores.clone()));
    let out = merge_neighborhoods(&mut g, &store, &centers, &positions, &table, f, s, &p).unwrap();
    let got = g.value(out);
    for (row, &c) in centers.iter().enumerate() {
        let want = reference_merge(&positions, &feats, &scores, c, table.row(c), &store, &p);
        for o in 0..5 {
            assert!((get(got, row, o) - want[o]).abs() < 1e-12);
        }
    }
}

#[test]
fn centroids_and_nearest_clusters_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for trial in 0..20 {
        let n = rng.gen_range(5..200);
        let positions = random_points(n, &mut rng);
        let a = balanced_cluster(&positions, 6, CurveKind::ALL[trial % 3]).unwrap();
        let cs = centroids(&positions, &a);
        for (c, centroid) in cs.iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| a.cluster_of[i] == c).collect();
            let mx = members.iter().map(|&i| positions[i].x).sum::<f64>() / members.len() as f64;
            let my = members.iter().map(|&i| positions[i].y).sum::<f64>() / members.len() as f64;
            assert!((centroid.x - mx).abs() < 1e-12 && (centroid.y - my).abs() < 1e-12);
        }
        let q = Point::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
        let r = rng.gen_range(1..=cs.len());
        let got = nearest_clusters(q, &cs, r).unwrap();
        // all pairs: everything chosen is no farther than anything left out
        let d = |c: usize| ((cs[c].x - q.x).powi(2) + (cs[c].y - q.y).powi(2)).sqrt();
        for &inside in &got {
            for outside in (0..cs.len()).filter(|c| !got.contains(c)) {
                assert!(d(inside) <= d(outside));
            }
        }
        assert!(got.windows(2).all(|w| d(w[0]) <= d(w[1])));
    }
}

#[test]
fn neighbor_rows_are_unions_of_nearest_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let positions = random_points(150, &mut rng);
    let a = balanced_cluster(&positions, 8, CurveKind::Scanline).unwrap();
    let cs = centroids(&positions, &a);
    let table = build_neighbor_table(&positions, &a, 3).unwrap();
    for i in 0..positions.len() {
        let own = cs[a.cluster_of[i]];
        let mut by_dist: Vec<usize> = (0..cs.len()).collect();
        by_dist.sort_by(|&p, &q| own.dist(cs[p]).total_cmp(&own.dist(cs[q])).then(p.cmp(&q)));
        let mut want: Vec<usize> = (0..positions.len())
            .filter(|&t| by_dist[..3].contains(&a.cluster_of[t]))
            .collect();
        let mut got = table.row(i).to_vec();
        got.sort_unstable();
        got.dedup();
        want.sort_unstable();
        assert_eq!(got, want);
    }
}

#[test]
fn shepard_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..50 {
        let n = rng.gen_range(1..30);
        let positions = random_points(n, &mut rng);
        let feats: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q = Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let k = rng.gen_range(1..6);
        let power = rng.gen_range(1.0..8.0);
        let got = shepard_interpolate(q, &positions, &feats, 2, k, power).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| q.dist(positions[a]).total_cmp(&q.dist(positions[b])).then(a.cmp(&b)));
        let chosen = &order[..k.min(n)];
        let w: Vec<f64> = chosen
            .iter()
            .map(|&j| 1.0 / (q.dist(positions[j]).powf(power) + 1e-9))
            .collect();
        let z: f64 = w.iter().sum();
        for ch in 0..2 {
            let want: f64 = chosen.iter().zip(&w).map(|(&j, wj)| wj / z * feats[j * 2 + ch]).sum();
            assert!((got[ch] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }
}

/// Zero-padded 3x3 convolution with explicit loops.
fn reference_conv(x: &[f64], h: usize, w: usize, cin: usize, k: &Tensor<f64>, stride: usize) -> Vec<f64> {
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let cout = k.cols;
    let mut out = vec![0.0; ho * wo * cout];
    for oy in 0..ho {
        for ox in 0..wo {
            for co in 0..cout {
                let mut acc = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = ((oy * stride + ky) as isize - 1, (ox * stride + kx) as isize - 1);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let v = x[(iy as usize * w + ix as usize) * cin + ci];
                            acc += v * get(k, (ky * 3 + kx) * cin + ci, co);
                        }
                    }
                }
                out[(oy * wo + ox) * cout + co] = acc;
            }
        }
    }
    out
}

#[test]
fn im2col_convolution_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for &(h, w, cin, cout, stride) in &[(8, 8, 1, 4, 2), (7, 5, 3, 2, 2), (4, 6, 2, 3, 1)] {
        let x: Vec<f64> = (0..h * w * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = Tensor::from_vec(
            9 * cin,
            cout,
            (0..9 * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let mut g = Graph::new();
        let xv = g.constant(Tensor::from_vec(h * w, cin, x.clone()));
        let cols = g.im2col3x3(xv, h, w, stride).unwrap();
        let kv = g.constant(k.clone());
        let y = g.matmul(cols, kv).unwrap();
        let want = reference_conv(&x, h, w, cin, &k, stride);
        for (a, b) in g.value(y).data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
