//! Finite-difference checks of every differentiable op and of the composed
//! losses (attention block, merge step, full classifier).

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::BlockParams;
use crate::autodiff::{grad_check, GradCheckConfig, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::clustering::balanced_cluster;
use crate::downsample::{importance_scores, merge_neighborhoods, DownsampleParams};
use crate::model::{classification_loss, Image, Model, ModelConfig};
use crate::neighborhood::build_neighbor_table;
use crate::sfc::CurveKind;
use crate::{Point, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl CheckEntry {
    pub fn max_rel_err(&self) -> f64 {
        self.report.max_rel_err()
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// `sum(out * R)` with a fixed random `R`, so every output coordinate
/// reaches the loss with a distinct weight.
pub fn project(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let (r, c) = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed ^ (r * 131 + c) as u64);
    let w = g.constant(random_tensor(r, c, &mut rng));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn store_of(shapes: &[(&str, usize, usize)], rng: &mut impl Rng) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::new();
    for &(name, r, c) in shapes {
        store.insert(name, random_tensor(r, c, rng), false)?;
    }
    Ok(store)
}

type OpBuild = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;
type OpCase = (&'static str, Vec<(&'static str, usize, usize)>, OpBuild);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", vec![("a", 3, 4), ("b", 4, 2)], |g, v| g.matmul(v[0], v[1])),
        ("add", vec![("a", 3, 4), ("b", 3, 4)], |g, v| g.add(v[0], v[1])),
        ("sub", vec![("a", 3, 4), ("b", 3, 4)], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![("a", 3, 4), ("b", 3, 4)], |g, v| g.mul(v[0], v[1])),
        ("add_bias", vec![("a", 3, 4), ("b", 1, 4)], |g, v| {
            g.add_bias(v[0], v[1])
        }),
        ("mul_rows", vec![("a", 3, 4), ("b", 3, 1)], |g, v| {
            g.mul_rows(v[0], v[1])
        }),
        ("scale", vec![("a", 3, 4)], |g, v| Ok(g.scale(v[0], -1.7))),
        ("sigmoid", vec![("a", 3, 4)], |g, v| Ok(g.sigmoid(v[0]))),
        ("gelu", vec![("a", 3, 4)], |g, v| Ok(g.gelu(v[0]))),
        ("softmax", vec![("a", 3, 5)], |g, v| Ok(g.softmax(v[0]))),
        (
            "layer_norm",
            vec![("a", 3, 5), ("gain", 1, 5), ("offset", 1, 5)],
            |g, v| g.layer_norm(v[0], v[1], v[2]),
        ),
        ("gather_rows", vec![("a", 4, 3)], |g, v| {
            g.gather_rows(v[0], &[3, 0, 3, 1, 1])
        }),
        ("scatter_add_rows", vec![("a", 5, 3)], |g, v| {
            g.scatter_add_rows(v[0], &[2, 0, 2, 1, 2], 4)
        }),
        ("reshape", vec![("a", 3, 4)], |g, v| g.reshape(v[0], 2, 6)),
        ("concat_cols", vec![("a", 3, 2), ("b", 3, 3)], |g, v| {
            g.concat_cols(&[v[0], v[1], v[0]])
        }),
        ("slice_cols", vec![("a", 3, 5)], |g, v| g.slice_cols(v[0], 1, 3)),
        ("row_sum", vec![("a", 3, 4)], |g, v| Ok(g.row_sum(v[0]))),
        ("mean_rows", vec![("a", 3, 4)], |g, v| Ok(g.mean_rows(v[0]))),
        ("sum", vec![("a", 3, 4)], |g, v| Ok(g.sum(v[0]))),
        ("row_outer", vec![("a", 3, 2), ("b", 3, 4)], |g, v| {
            g.row_outer(v[0], v[1])
        }),
        ("im2col3x3", vec![("a", 20, 2)], |g, v| g.im2col3x3(v[0], 4, 5, 2)),
        ("cross_entropy", vec![("a", 3, 4)], |g, v| {
            g.cross_entropy(v[0], &[2, 0, 3])
        }),
    ]
}

/// One entry per differentiable op on small random tensors.
pub fn op_checks(cfg: &GradCheckConfig) -> Result<Vec<CheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (name, shapes, build) in op_cases() {
        let store = store_of(&shapes, &mut rng)?;
        let report = grad_check(&store, cfg, |g, s| {
            let vars: Vec<Var> = s.ids().map(|id| g.param(s, id)).collect();
            let y = build(g, &vars)?;
            if name == "cross_entropy" || name == "sum" {
                Ok(y)
            } else {
                project(g, y)
            }
        })?;
        out.push(CheckEntry {
            name: name.to_string(),
            report,
        });
    }
    Ok(out)
}

fn jittered_grid(side: usize, rng: &mut impl Rng) -> Vec<Point> {
    (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            Point::new(x + rng.gen_range(-0.3..0.3), y + rng.gen_range(-0.3..0.3))
        })
        .collect()
}

/// Widens every parameter to unit-scale random values so gradients are far
/// from the small-initialization regime.
fn randomize(store: &mut ParamStore<f64>, std: f64, rng: &mut impl Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data.iter_mut() {
            *v += std * rng.gen_range(-1.0..1.0);
        }
    }
}

/// Transformer block on a clustered token set.
pub fn block_check(cfg: &GradCheckConfig) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb10c);
    let positions = jittered_grid(6, &mut rng);
    let assignment = balanced_cluster(&positions, 4, CurveKind::Scanline)?;
    let table = build_neighbor_table(&positions, &assignment, 2)?;
    let mut store = ParamStore::new();
    let params = BlockParams::new(&mut store, "block", 8, 2, 2, &mut rng)?;
    randomize(&mut store, 0.3, &mut rng);
    let x = store.insert("x", random_tensor(positions.len(), 8, &mut rng), false)?;
    let report = grad_check(&store, cfg, |g, s| {
        let xv = g.param(s, x);
        let y = crate::attention::transformer_block(g, s, xv, &table, &params)?;
        project(g, y)
    })?;
    Ok(CheckEntry {
        name: "attention_block".into(),
        report,
    })
}

/// Score layer plus merge on a fixed center set.
pub fn merge_check(cfg: &GradCheckConfig) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3e26e);
    let positions = jittered_grid(5, &mut rng);
    let assignment = balanced_cluster(&positions, 4, CurveKind::Scanline)?;
    let table = build_neighbor_table(&positions, &assignment, 2)?;
    let mut store = ParamStore::new();
    let params = DownsampleParams::new(&mut store, "down", 6, 7, 4.0, 0.25, &mut rng)?;
    randomize(&mut store, 0.5, &mut rng);
    let x = store.insert("x", random_tensor(positions.len(), 6, &mut rng), false)?;
    let centers = [0, 7, 12, 18, 24];
    let report = grad_check(&store, cfg, |g, s| {
        let xv = g.param(s, x);
        let scores = importance_scores(g, s, xv, &params)?;
        let y = merge_neighborhoods(g, s, &centers, &positions, &table, xv, scores, &params)?;
        project(g, y)
    })?;
    Ok(CheckEntry {
        name: "merge".into(),
        report,
    })
}

/// Cross-entropy of the nano classifier on a 16x16 image. The score layers
/// start from random weights so the selected centers are not decided by
/// ties that a finite-difference probe could flip.
pub fn classifier_check(cfg: &GradCheckConfig) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc1a55);
    let mut model = Model::<f64>::new(ModelConfig::aff_nano(), cfg.seed)?;
    let score_ids: Vec<_> = model
        .params
        .stages
        .iter()
        .filter_map(|s| s.down.as_ref().map(|d| d.score_w))
        .collect();
    for id in score_ids {
        for v in model.store.value_mut(id).data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let data: Vec<f32> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
    let image = Image::new(16, 16, 1, data)?;
    let report = grad_check(&model.store, cfg, |g, s| {
        let m = Model {
            config: model.config.clone(),
            params: model.params.clone(),
            store: s.clone(),
        };
        Ok(classification_loss(g, &m, &image, 1)?.0)
    })?;
    Ok(CheckEntry {
        name: "classifier".into(),
        report,
    })
}

/// Every op check followed by the three composed losses.
pub fn full_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckEntry>> {
    let mut out = op_checks(cfg)?;
    out.push(block_check(cfg)?);
    out.push(merge_check(cfg)?);
    out.push(classifier_check(cfg)?);
    Ok(out)
}
