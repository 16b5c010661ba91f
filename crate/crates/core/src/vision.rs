//! Convolutional feature extractor and its weight regimes.
//!
//! The network is a stack of conv / batch-norm / ReLU / 2x2 max-pool blocks
//! followed by a global average pool. Pixels are standardised per channel
//! with statistics stored alongside the weights.

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::nn::{
    avg_pool_global, avg_pool_global_backward, join, relu, relu_backward, BatchNorm, BnCache, Checkpoint, Conv2d,
    MaxPool2, Module, PoolCache, Visitor,
};
use crate::rng::Rng;

/// Checkpoint prefix under which extractor tensors are stored.
pub const CHECKPOINT_PREFIX: &str = "extractor";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PretrainedFrozen,
    RandomFrozen,
    Learned,
    SsPretrainedFrozen,
    SsPretrainedFinetuned,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::PretrainedFrozen,
        Regime::RandomFrozen,
        Regime::Learned,
        Regime::SsPretrainedFrozen,
        Regime::SsPretrainedFinetuned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::PretrainedFrozen => "pretrained_frozen",
            Self::RandomFrozen => "random_frozen",
            Self::Learned => "learned",
            Self::SsPretrainedFrozen => "ss_pretrained_frozen",
            Self::SsPretrainedFinetuned => "ss_pretrained_finetuned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    pub fn needs_weights(self) -> bool {
        matches!(
            self,
            Self::PretrainedFrozen | Self::SsPretrainedFrozen | Self::SsPretrainedFinetuned
        )
    }

    /// Weights come from contrastive (label-free) pretraining.
    pub fn self_supervised(self) -> bool {
        matches!(self, Self::SsPretrainedFrozen | Self::SsPretrainedFinetuned)
    }

    /// Whether the extractor is frozen during 1-based `epoch`.
    pub fn frozen_at(self, epoch: usize, unfreeze_epoch: usize) -> bool {
        match self {
            Self::Learned => false,
            Self::SsPretrainedFinetuned => epoch <= unfreeze_epoch,
            _ => true,
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: bool,
    pub batch_norm: bool,
}

impl ConvBlock {
    pub fn standard(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride: 1,
            pool: true,
            batch_norm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub regime: Regime,
    pub blocks: Vec<ConvBlock>,
    pub feature_dim: usize,
    /// Last 1-based epoch with frozen weights for the fine-tuned regime.
    pub unfreeze_epoch: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self::with_channels(Regime::Learned, &[32, 64, 128, 256])
    }
}

impl ExtractorConfig {
    pub fn with_channels(regime: Regime, channels: &[usize]) -> Self {
        Self {
            regime,
            blocks: channels.iter().map(|&c| ConvBlock::standard(c)).collect(),
            feature_dim: channels.last().copied().unwrap_or(0),
            unfreeze_epoch: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::config("channels", "at least one conv block is required"));
        }
        for b in &self.blocks {
            if b.out_channels == 0 || b.stride == 0 || b.kernel % 2 == 0 {
                return Err(Error::config(
                    "channels",
                    "conv blocks need positive channels and stride and an odd kernel",
                ));
            }
        }
        if self.feature_dim == 0 || self.feature_dim != self.blocks.last().unwrap().out_channels {
            return Err(Error::config(
                "feature_dim",
                "must be positive and equal the last block's channel count",
            ));
        }
        Ok(())
    }
}

/// Per-channel standardisation constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PixelNorm {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl PixelNorm {
    /// Channel means and (population) standard deviations over `images`.
    pub fn fit(images: &[Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::input("cannot fit pixel statistics on an empty set"));
        }
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut count = 0.0;
        for img in images {
            let v = img.view();
            for c in 0..3 {
                let plane = v.index_axis(Axis(0), c);
                sum[c] += plane.sum();
                sq[c] += plane.iter().map(|x| x * x).sum::<f64>();
            }
            count += (img.height() * img.width()) as f64;
        }
        let mut out = Self::default();
        for c in 0..3 {
            let m = sum[c] / count;
            out.mean[c] = m;
            out.std[c] = (sq[c] / count - m * m).max(0.0).sqrt().max(1e-6);
        }
        Ok(out)
    }
}

/// Stack images into an `N x 3 x H x W` tensor.
pub fn images_to_tensor(images: &[&Image]) -> Result<Array4<f64>> {
    let first = images.first().ok_or_else(|| Error::input("empty image batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut out = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::input(format!(
                "image {i} is {}x{}, batch expects {h}x{w}",
                img.height(),
                img.width()
            )));
        }
        out.index_axis_mut(Axis(0), i).assign(&img.view());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv2d,
    bn: Option<BatchNorm>,
    pool: bool,
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: Array4<f64>,
    bn: Option<BnCache>,
    activated: Array4<f64>,
    pool: Option<PoolCache>,
}

/// Intermediate values of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ExtractorCache {
    blocks: Vec<BlockCache>,
    final_dim: (usize, usize, usize, usize),
}

#[derive(Clone, Debug)]
pub struct Extractor {
    config: ExtractorConfig,
    blocks: Vec<Block>,
    norm_mean: ArrayD<f64>,
    norm_std: ArrayD<f64>,
    frozen: bool,
}

impl Extractor {
    fn random(config: &ExtractorConfig, rng: &mut Rng) -> Self {
        let mut cin = 3;
        let blocks = config
            .blocks
            .iter()
            .map(|b| {
                let conv = Conv2d::new(cin, b.out_channels, b.kernel, b.stride, b.kernel / 2, !b.batch_norm, rng);
                cin = b.out_channels;
                Block {
                    conv,
                    bn: b.batch_norm.then(|| BatchNorm::new(b.out_channels)),
                    pool: b.pool,
                }
            })
            .collect();
        Self {
            config: config.clone(),
            blocks,
            norm_mean: Array1::zeros(3).into_dyn(),
            norm_std: Array1::ones(3).into_dyn(),
            frozen: config.regime.frozen_at(0, config.unfreeze_epoch),
        }
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn regime(&self) -> Regime {
        self.config.regime
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Apply the unfreeze schedule for 1-based `epoch`.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.frozen = self.config.regime.frozen_at(epoch, self.config.unfreeze_epoch);
    }

    /// Override the schedule (used by pretraining, which always trains).
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn pixel_norm(&self) -> PixelNorm {
        let mut n = PixelNorm::default();
        for c in 0..3 {
            n.mean[c] = self.norm_mean[[c]];
            n.std[c] = self.norm_std[[c]];
        }
        n
    }

    pub fn set_pixel_norm(&mut self, n: PixelNorm) {
        for c in 0..3 {
            self.norm_mean[[c]] = n.mean[c];
            self.norm_std[[c]] = n.std[c];
        }
    }

    /// Features for an `N x 3 x H x W` batch. Batch statistics and a cache
    /// for [`Extractor::backward`] are used only when `train` is set and the
    /// extractor is not frozen.
    pub fn forward(&mut self, x: ArrayView4<f64>, train: bool) -> Result<(Array2<f64>, Option<ExtractorCache>)> {
        if x.dim().1 != 3 || x.dim().0 == 0 {
            return Err(Error::input(format!("expected N x 3 x H x W input, got {:?}", x.dim())));
        }
        let train = train && !self.frozen;
        let mut h = x.to_owned();
        for c in 0..3 {
            let (m, s) = (self.norm_mean[[c]], self.norm_std[[c]]);
            h.index_axis_mut(Axis(1), c).mapv_inplace(|v| (v - m) / s);
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let (_, _, hh, ww) = h.dim();
            if hh < b.conv.weight.value.shape()[2] / 2 + 1 || ww == 0 {
                return Err(Error::input(format!("input too small for block {i}")));
            }
            let z = b.conv.forward(h.view());
            let (z, bn_cache) = match &mut b.bn {
                Some(bn) => {
                    let (y, c) = bn.forward_nchw(z.view(), train);
                    (y, Some(c))
                }
                None => (z, None),
            };
            let activated = relu(&z);
            let (out, pool_cache) = if b.pool {
                let (_, _, ah, aw) = activated.dim();
                if ah < 2 || aw < 2 {
                    return Err(Error::input(format!("input too small to pool at block {i}")));
                }
                let (p, c) = MaxPool2.forward(activated.view());
                (p, Some(c))
            } else {
                (activated.clone(), None)
            };
            if train {
                caches.push(BlockCache {
                    input: h,
                    bn: bn_cache,
                    activated,
                    pool: pool_cache,
                });
            }
            h = out;
        }
        let final_dim = h.dim();
        let feats = avg_pool_global(h.view());
        let cache = train.then_some(ExtractorCache {
            blocks: caches,
            final_dim,
        });
        Ok((feats, cache))
    }

    /// Accumulate parameter gradients from `dL/dfeatures`.
    pub fn backward(&mut self, cache: &ExtractorCache, d_features: ndarray::ArrayView2<f64>) {
        let mut d = avg_pool_global_backward(d_features, cache.final_dim);
        for (i, (b, c)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            if let Some(pc) = &c.pool {
                d = MaxPool2.backward(pc, d.view());
            }
            d = relu_backward(&c.activated, &d);
            if let (Some(bn), Some(bc)) = (&mut b.bn, &c.bn) {
                d = bn.backward_nchw(bc, d.view());
            }
            match b.conv.backward(c.input.view(), d.view(), i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

impl Module for Extractor {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv.visit(&join(&p, "conv"), v);
            if let Some(bn) = &mut b.bn {
                bn.visit(&join(&p, "bn"), v);
            }
        }
        v.buffer(&join(prefix, "norm_mean"), &mut self.norm_mean);
        v.buffer(&join(prefix, "norm_std"), &mut self.norm_std);
    }
}

/// Random initialisation from `rng`, then weights from `weights` (stored under
/// [`CHECKPOINT_PREFIX`]) when given. Pretrained regimes require weights.
pub fn build_extractor(config: &ExtractorConfig, rng: &mut Rng, weights: Option<&Checkpoint>) -> Result<Extractor> {
    config.validate()?;
    let mut e = Extractor::random(config, rng);
    match weights {
        Some(ck) => ck.restore(CHECKPOINT_PREFIX, &mut e)?,
        None if config.regime.needs_weights() => {
            return Err(Error::config(
                "regime",
                format!("regime `{}` needs a pretrained weights checkpoint", config.regime),
            ))
        }
        None => {}
    }
    Ok(e)
}

pub fn extract_features(extractor: &mut Extractor, images: &[&Image], train: bool) -> Result<Array2<f64>> {
    let x = images_to_tensor(images)?;
    Ok(extractor.forward(x.view(), train)?.0)
}

/// Cosine similarity of two rows.
pub fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let d = a.dot(&b);
    let n = (a.dot(&a) * b.dot(&b)).sqrt();
    if n == 0.0 {
        0.0
    } else {
        d / n
    }
}
