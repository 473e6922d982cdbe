//! Backbone assembly: convolutional patch embedding, stages of
//! cluster -> attention blocks -> adaptive downsampling, and a mean-pooled
//! linear classifier. Also the synthetic textured-patch task used to train
//! the network at desk scale.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{linear, BlockParams};
use crate::autodiff::{adamw_step, AdamW, AdamWState, Graph, Init, ParamId, ParamStore, Real, Tensor, Var};
use crate::clustering::balanced_cluster;
use crate::downsample::{downsample, DownsampleParams, GridPrior};
use crate::neighborhood::{build_neighbor_table, NeighborTable};
use crate::sfc::CurveKind;
use crate::{Error, Point, Result};

/// Pixels per stage-1 token along each axis.
pub const PATCH_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub cluster_size: usize,
    pub neighborhood_size: usize,
}

impl StageConfig {
    /// Number of clusters a neighborhood spans.
    pub fn neighbor_clusters(&self) -> usize {
        self.neighborhood_size / self.cluster_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub in_channels: usize,
    pub num_classes: usize,
    pub stages: Vec<StageConfig>,
    pub keep_fraction: f64,
    pub alpha: f64,
    #[serde(default)]
    pub curve: CurveKind,
    pub last_stage_global: bool,
    /// Largest last-stage token count that still switches to global attention.
    #[serde(default = "default_global_max_tokens")]
    pub global_max_tokens: usize,
    /// Per-channel input normalization `(v - mean) / std`; both empty means
    /// raw pixels.
    #[serde(default)]
    pub pixel_mean: Vec<f64>,
    #[serde(default)]
    pub pixel_std: Vec<f64>,
}

fn default_global_max_tokens() -> usize {
    64
}

fn uniform_stages(
    blocks: [usize; 4],
    dims: [usize; 4],
    heads: [usize; 4],
    mlp_ratio: usize,
    neighborhood: usize,
) -> Vec<StageConfig> {
    (0..4)
        .map(|i| StageConfig {
            blocks: blocks[i],
            dim: dims[i],
            heads: heads[i],
            mlp_ratio,
            cluster_size: 8,
            neighborhood_size: neighborhood,
        })
        .collect()
}

impl ModelConfig {
    fn preset(name: &str, stages: Vec<StageConfig>) -> Self {
        Self {
            name: name.into(),
            in_channels: 3,
            num_classes: 1000,
            stages,
            keep_fraction: 0.25,
            alpha: 4.0,
            curve: CurveKind::Scanline,
            last_stage_global: true,
            global_max_tokens: default_global_max_tokens(),
            pixel_mean: vec![0.485, 0.456, 0.406],
            pixel_std: vec![0.229, 0.224, 0.225],
        }
    }

    /// Desk-scale configuration: roughly half of the mini model.
    pub fn aff_nano() -> Self {
        let mut cfg = Self::preset(
            "aff-nano",
            uniform_stages([1, 1, 2, 1], [16, 32, 64, 96], [1, 2, 4, 8], 2, 24),
        );
        cfg.in_channels = 1;
        cfg.num_classes = 2;
        cfg.pixel_mean.clear();
        cfg.pixel_std.clear();
        cfg
    }

    pub fn aff_mini() -> Self {
        Self::preset(
            "aff-mini",
            uniform_stages([2, 2, 6, 2], [32, 128, 256, 384], [2, 4, 8, 16], 2, 48),
        )
    }

    pub fn aff_tiny() -> Self {
        Self::preset(
            "aff-tiny",
            uniform_stages([3, 4, 18, 5], [64, 128, 256, 512], [2, 4, 8, 16], 3, 48),
        )
    }

    pub fn aff_small() -> Self {
        Self::preset(
            "aff-small",
            uniform_stages([3, 4, 18, 2], [96, 192, 384, 768], [3, 6, 12, 24], 3, 48),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one stage"));
        }
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument("channel and class counts must be positive"));
        }
        if self.keep_fraction.is_nan() || self.keep_fraction <= 0.0 || self.keep_fraction > 1.0 {
            return Err(Error::InvalidArgument("keep fraction must lie in (0, 1]"));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be nonnegative"));
        }
        for s in &self.stages {
            if s.cluster_size == 0 || s.neighborhood_size == 0 || s.neighborhood_size % s.cluster_size != 0 {
                return Err(Error::InvalidArgument(
                    "neighborhood size must be a positive multiple of the cluster size",
                ));
            }
            if s.heads == 0 || s.dim % s.heads != 0 {
                return Err(Error::InvalidArgument("head count must divide the stage dim"));
            }
            if s.mlp_ratio == 0 {
                return Err(Error::InvalidArgument("MLP ratio must be positive"));
            }
        }
        if self.pixel_mean.len() != self.pixel_std.len()
            || !(self.pixel_mean.is_empty() || self.pixel_mean.len() == self.in_channels)
        {
            return Err(Error::InvalidArgument(
                "pixel mean and std need one entry per input channel",
            ));
        }
        if self.pixel_std.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("pixel std must be positive"));
        }
        if self.stages.windows(2).any(|w| w[1].dim < w[0].dim) {
            return Err(Error::InvalidArgument("stage dims must be nondecreasing"));
        }
        Ok(())
    }
}

/// Image with unit-range pixels stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                op: "Image::new",
                left: (height * width, channels),
                right: (data.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn check_embeddable(&self) -> Result<()> {
        if self.height < 8
            || self.width < 8
            || !self.height.is_multiple_of(PATCH_STRIDE)
            || !self.width.is_multiple_of(PATCH_STRIDE)
        {
            return Err(Error::InvalidArgument(
                "image sides must be at least 8 and divisible by 4",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub blocks: Vec<BlockParams>,
    pub down: Option<DownsampleParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed: EmbedParams,
    pub stages: Vec<StageParams>,
    pub head_gain: ParamId,
    pub head_offset: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl ModelParams {
    pub fn new<T: Real, R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d0 = cfg.stages[0].dim;
        let mid = (d0 / 2).max(1);
        let conv = |fan_in: usize| Init::TruncatedNormal {
            std: libm::sqrt(2.0 / fan_in as f64),
        };
        let embed = EmbedParams {
            conv1_w: store.add(
                "embed.conv1.w",
                9 * cfg.in_channels,
                mid,
                conv(9 * cfg.in_channels),
                rng,
            )?,
            conv1_b: store.add("embed.conv1.b", 1, mid, Init::Zeros, rng)?,
            conv2_w: store.add("embed.conv2.w", 9 * mid, d0, conv(9 * mid), rng)?,
            conv2_b: store.add("embed.conv2.b", 1, d0, Init::Zeros, rng)?,
        };
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (i, s) in cfg.stages.iter().enumerate() {
            let blocks = (0..s.blocks)
                .map(|b| {
                    BlockParams::new(
                        store,
                        &format!("stage{}.block{b}", i + 1),
                        s.dim,
                        s.heads,
                        s.mlp_ratio,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let down = match cfg.stages.get(i + 1) {
                Some(next) => Some(DownsampleParams::new(
                    store,
                    &format!("stage{}.down", i + 1),
                    s.dim,
                    next.dim,
                    cfg.alpha,
                    cfg.keep_fraction,
                    rng,
                )?),
                None => None,
            };
            stages.push(StageParams { blocks, down });
        }
        let last = cfg.stages.last().unwrap().dim;
        Ok(Self {
            embed,
            stages,
            head_gain: store.add("head.norm.gain", 1, last, Init::Ones, rng)?,
            head_offset: store.add("head.norm.offset", 1, last, Init::Zeros, rng)?,
            head_w: store.add(
                "head.w",
                last,
                cfg.num_classes,
                Init::TruncatedNormal { std: 0.02 },
                rng,
            )?,
            head_b: store.add("head.b", 1, cfg.num_classes, Init::Zeros, rng)?,
        })
    }
}

/// Configuration, parameter layout and parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = ModelParams::new(&config, &mut store, &mut rng)?;
        Ok(Self { config, params, store })
    }

    /// Same layout with the parameter values converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
            store: self.store.cast(),
        }
    }
}

/// Token set flowing between stages.
#[derive(Debug, Clone)]
pub struct Tokens {
    pub positions: Vec<Point>,
    /// `N x C` features.
    pub features: Var,
}

/// What one stage did, for dumps and overlays.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    /// 1-based.
    pub stage: usize,
    pub positions: Vec<Point>,
    /// Grid prior and scores of the downsampling step; `None` in the last stage.
    pub prior: Option<GridPrior>,
    pub scores: Option<Vec<f64>>,
    /// Per token, whether it survives into the next stage.
    pub selected: Vec<bool>,
    pub global_attention: bool,
}

fn image_tensor<T: Real>(image: &Image, mean: &[f64], std: &[f64]) -> Tensor<T> {
    let c = image.channels;
    let data = image
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| match (mean.get(i % c), std.get(i % c)) {
            (Some(m), Some(s)) => T::lit((v as f64 - m) / s),
            _ => T::lit(v as f64),
        })
        .collect();
    Tensor::from_vec(image.height * image.width, c, data)
}

/// Per-channel mean and standard deviation over a set of images.
pub fn pixel_stats<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sum = Vec::new();
    let mut sq = Vec::new();
    let mut count = 0usize;
    for image in images {
        if sum.is_empty() {
            sum = vec![0.0; image.channels];
            sq = vec![0.0; image.channels];
        } else if sum.len() != image.channels {
            return Err(Error::InvalidArgument("images differ in channel count"));
        }
        for px in image.data.chunks(image.channels) {
            for (c, &v) in px.iter().enumerate() {
                sum[c] += v as f64;
                sq[c] += v as f64 * v as f64;
            }
        }
        count += image.height * image.width;
    }
    if count == 0 {
        return Err(Error::EmptyInput("images"));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| libm::sqrt((q / n - m * m).max(0.0)).max(1e-6))
        .collect();
    Ok((mean, std))
}

/// Two stride-2 3x3 convolutions with a GELU in between. Token `(x, y)` sits
/// on the integer lattice of the `H/4 x W/4` output. `mean` and `std`
/// normalize the pixels per channel unless empty.
pub fn patch_embed<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    image: &Image,
    params: &EmbedParams,
    mean: &[f64],
    std: &[f64],
) -> Result<Tokens> {
    image.check_embeddable()?;
    let x = g.constant(image_tensor(image, mean, std));
    let cols = g.im2col3x3(x, image.height, image.width, 2)?;
    let h = linear(g, store, cols, params.conv1_w, params.conv1_b)?;
    let h = g.gelu(h);
    let (h2, w2) = (image.height / 2, image.width / 2);
    let cols = g.im2col3x3(h, h2, w2, 2)?;
    let features = linear(g, store, cols, params.conv2_w, params.conv2_b)?;
    let (h4, w4) = (h2 / 2, w2 / 2);
    let positions = (0..h4)
        .flat_map(|y| (0..w4).map(move |x| Point::new(x as f64, y as f64)))
        .collect();
    Ok(Tokens { positions, features })
}

/// Neighbor table of one stage: one balanced clustering shared by all blocks
/// and the downsampling step, or all-to-all for a small global last stage.
pub fn stage_table(
    positions: &[Point],
    stage: &StageConfig,
    cfg: &ModelConfig,
    is_last: bool,
) -> Result<(NeighborTable, bool)> {
    if is_last && cfg.last_stage_global && positions.len() <= cfg.global_max_tokens {
        return Ok((NeighborTable::global(positions), true));
    }
    let assignment = balanced_cluster(positions, stage.cluster_size, cfg.curve)?;
    let r = stage.neighbor_clusters().min(assignment.cluster_count());
    Ok((build_neighbor_table(positions, &assignment, r)?, false))
}

/// One stage; `stage_index` is 1-based.
pub fn stage_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    tokens: Tokens,
    cfg: &ModelConfig,
    params: &StageParams,
    stage_index: usize,
) -> Result<(Tokens, StageRecord)> {
    let stage = &cfg.stages[stage_index - 1];
    let is_last = params.down.is_none();
    let (table, global) = stage_table(&tokens.positions, stage, cfg, is_last)?;
    let mut x = tokens.features;
    for block in &params.blocks {
        x = crate::attention::transformer_block(g, store, x, &table, block)?;
    }
    let n = tokens.positions.len();
    match &params.down {
        None => {
            let record = StageRecord {
                stage: stage_index,
                positions: tokens.positions.clone(),
                prior: None,
                scores: None,
                selected: vec![true; n],
                global_attention: global,
            };
            Ok((
                Tokens {
                    positions: tokens.positions,
                    features: x,
                },
                record,
            ))
        }
        Some(down) => {
            let out = downsample(g, store, &tokens.positions, x, &table, down, stage_index)?;
            let mut selected = vec![false; n];
            for &c in &out.centers {
                selected[c] = true;
            }
            let record = StageRecord {
                stage: stage_index,
                positions: tokens.positions,
                prior: Some(out.prior),
                scores: Some(out.scores),
                selected,
                global_attention: global,
            };
            Ok((
                Tokens {
                    positions: out.positions,
                    features: out.features,
                },
                record,
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `1 x num_classes`.
    pub logits: Var,
    pub stages: Vec<StageRecord>,
}

/// Backbone plus head: layer norm, mean pool over tokens, linear.
pub fn classify<T: Real>(g: &mut Graph<T>, model: &Model<T>, image: &Image) -> Result<ForwardOutput> {
    let cfg = &model.config;
    if image.channels != cfg.in_channels {
        return Err(Error::InvalidArgument("image channel count does not match the model"));
    }
    let store = &model.store;
    let mut tokens = patch_embed(g, store, image, &model.params.embed, &cfg.pixel_mean, &cfg.pixel_std)?;
    let mut stages = Vec::with_capacity(cfg.stages.len());
    for (i, sp) in model.params.stages.iter().enumerate() {
        let (next, record) = stage_forward(g, store, tokens, cfg, sp, i + 1)?;
        tokens = next;
        stages.push(record);
    }
    let p = &model.params;
    let gain = g.param(store, p.head_gain);
    let offset = g.param(store, p.head_offset);
    let x = g.layer_norm(tokens.features, gain, offset)?;
    let pooled = g.mean_rows(x);
    let logits = linear(g, store, pooled, p.head_w, p.head_b)?;
    Ok(ForwardOutput { logits, stages })
}

/// Cross-entropy of one labeled image.
pub fn classification_loss<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    image: &Image,
    label: usize,
) -> Result<(Var, ForwardOutput)> {
    let out = classify(g, model, image)?;
    let loss = g.cross_entropy(out.logits, &[label])?;
    Ok((loss, out))
}

/// Axis-aligned square in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBox {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl PatchBox {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (x0, y0, s) = (self.x as f64, self.y as f64, self.size as f64);
        px >= x0 && px < x0 + s && py >= y0 && py < y0 + s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub image: Image,
    /// 0 = checkerboard, 1 = stripes.
    pub label: usize,
    pub patch: PatchBox,
}

pub const TOY_PATCH: usize = 4;
const TOY_BACKGROUND: f32 = 0.1;
const TOY_NOISE: f32 = 0.05;
const TOY_LOW: f32 = 0.7;
const TOY_HIGH: f32 = 1.0;

/// Grayscale images of low-amplitude noise with one 4x4 textured patch at a
/// uniformly random position. The label is the patch texture.
pub fn make_toy_dataset(seed: u64, n: usize, image_size: usize) -> Result<Vec<ToySample>> {
    if n < 2 {
        return Err(Error::TooFewTokens { needed: 2, got: n });
    }
    if image_size < 8 || !image_size.is_multiple_of(PATCH_STRIDE) {
        return Err(Error::InvalidArgument(
            "image size must be at least 8 and divisible by 4",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let label = usize::from(rng.gen_bool(0.5));
        let mut image = Image::filled(image_size, image_size, 1, 0.0);
        for v in image.data.iter_mut() {
            *v = TOY_BACKGROUND + rng.gen_range(-TOY_NOISE..TOY_NOISE);
        }
        let patch = PatchBox {
            x: rng.gen_range(0..=image_size - TOY_PATCH),
            y: rng.gen_range(0..=image_size - TOY_PATCH),
            size: TOY_PATCH,
        };
        for dy in 0..TOY_PATCH {
            for dx in 0..TOY_PATCH {
                let high = match label {
                    0 => (dx + dy) % 2 == 0,
                    _ => dy % 2 == 0,
                };
                let v = if high { TOY_HIGH } else { TOY_LOW };
                image.set(patch.y + dy, patch.x + dx, 0, v);
            }
        }
        out.push(ToySample { image, label, patch });
    }
    Ok(out)
}

/// Density of `positions` (stage-1 lattice units) inside `patch` relative to
/// the patch's share of the image area.
pub fn focus_ratio(positions: &[Point], patch: &PatchBox, image_height: usize, image_width: usize) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let s = PATCH_STRIDE as f64;
    let inside = positions.iter().filter(|p| patch.contains(p.x * s, p.y * s)).count();
    let fraction = inside as f64 / positions.len() as f64;
    let area = (patch.size * patch.size) as f64 / (image_height * image_width) as f64;
    fraction / area
}

/// The deepest stage that still holds more than one token; with a single
/// token left every image looks the same to the metric.
pub fn focus_stage(stages: &[StageRecord]) -> Option<&StageRecord> {
    stages.iter().rev().find(|s| s.positions.len() > 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss.
    pub loss: f64,
    /// Test accuracy.
    pub acc: f64,
    /// Mean test-set focus ratio.
    pub focus_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 2e-3,
            weight_decay: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub focus_ratio: f64,
}

pub fn evaluate<T: Real>(model: &Model<T>, samples: &[ToySample]) -> Result<Evaluation> {
    let mut correct = 0usize;
    let mut focus = 0.0;
    for s in samples {
        let mut g = Graph::new();
        let out = classify(&mut g, model, &s.image)?;
        let logits = g.value(out.logits);
        let pred = (0..logits.cols)
            .max_by(|&a, &b| {
                logits.data[a]
                    .partial_cmp(&logits.data[b])
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        correct += usize::from(pred == s.label);
        if let Some(stage) = focus_stage(&out.stages) {
            focus += focus_ratio(&stage.positions, &s.patch, s.image.height, s.image.width);
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        focus_ratio: focus / n,
    })
}

/// Mean loss and parameter gradients of a batch.
pub fn batch_gradients<T: Real>(model: &Model<T>, batch: &[&ToySample]) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut grads = model.store.zeros_like();
    let mut total = 0.0;
    for s in batch {
        let mut g = Graph::new();
        let (loss, _) = classification_loss(&mut g, model, &s.image, s.label)?;
        total += g.value(loss).scalar().to_f64();
        g.backward(loss)?.accumulate_params(&g, &mut grads);
    }
    let inv = T::one() / T::lit(batch.len() as f64);
    for t in grads.iter_mut() {
        t.data.iter_mut().for_each(|v| *v = *v * inv);
    }
    Ok((total / batch.len() as f64, grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<EpochMetrics>,
}

/// AdamW training on labeled images in 32-bit precision, evaluating on
/// `test` after every epoch. A config without input normalization gets the
/// training-set pixel statistics.
pub fn train_toy(
    config: &ModelConfig,
    train: &[ToySample],
    test: &[ToySample],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if train.is_empty() || opts.batch_size == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    let mut config = config.clone();
    if config.pixel_mean.is_empty() {
        let (mean, std) = pixel_stats(train.iter().map(|s| &s.image))?;
        config.pixel_mean = mean;
        config.pixel_std = std;
    }
    let mut model = Model::<f32>::new(config, opts.seed)?;
    let mut state = AdamWState::new(&model.store);
    let adamw = AdamW {
        lr: opts.lr,
        weight_decay: opts.weight_decay,
        ..AdamW::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&ToySample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            adamw_step(&mut model.store, &mut state, &grads, &adamw);
        }
        let eval = evaluate(&model, test)?;
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / train.len() as f64,
            acc: eval.accuracy,
            focus_ratio: eval.focus_ratio,
        };
        on_epoch(&metrics);
        log.push(metrics);
    }
    Ok(TrainOutcome { model, log })
}
