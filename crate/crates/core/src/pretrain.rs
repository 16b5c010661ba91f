//! Extractor pretraining: label-free contrastive learning on paired views,
//! and a supervised classification proxy for the pretrained-and-frozen
//! regime.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{baseline_augment, simclr_view, AugmentPlan, Image, SimclrParams};
use crate::error::{Error, Result};
use crate::harness::DatasetSplit;
use crate::nn::{join, relu, relu_backward, softmax_rows, Adam, AdamConfig, Linear, Module, Visitor};
use crate::par;
use crate::rng::{sub_rng, Rng, TAG_AUGMENT, TAG_INIT, TAG_PRETRAIN, TAG_SHUFFLE};
use crate::vision::{images_to_tensor, Extractor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub views: SimclrParams,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            projection_hidden: 256,
            projection_dim: 128,
            temperature: 0.5,
            batch_size: 64,
            epochs: 20,
            optimizer: AdamConfig::default(),
            views: SimclrParams::default(),
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("pretrain_temperature", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("pretrain_batch_size", "need at least two images per batch"));
        }
        if self.projection_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::config("pretrain_projection", "projection widths must be positive"));
        }
        Ok(())
    }
}

/// Two affine layers with a ReLU between them.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub l1: Linear,
    pub l2: Linear,
}

impl ProjectionHead {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Linear::new(input, hidden, true, rng),
            l2: Linear::new(hidden, output, true, rng),
        }
    }

    /// Returns the projection and the hidden activation needed by backward.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let a = relu(&self.l1.forward(x));
        (self.l2.forward(a.view()), a)
    }

    pub fn backward(&mut self, x: ArrayView2<f64>, hidden: &Array2<f64>, dz: ArrayView2<f64>) -> Array2<f64> {
        let da = self.l2.backward(hidden.view(), dz);
        let dpre = relu_backward(hidden, &da);
        self.l1.backward(x, dpre.view())
    }
}

impl Module for ProjectionHead {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.l1.visit(&join(prefix, "l1"), v);
        self.l2.visit(&join(prefix, "l2"), v);
    }
}

/// Normalised-temperature cross-entropy over `2N` embeddings where rows `i`
/// and `i + N` form the positive pairs. Averaged over all `2N` anchors.
pub fn contrastive_loss(z: ArrayView2<f64>, temperature: f64) -> Result<f64> {
    Ok(contrastive_loss_grad(z, temperature)?.0)
}

/// Loss from a `2N x 2N` cosine-similarity matrix, with its gradient
/// w.r.t. that matrix (diagonal ignored).
pub fn nt_xent(sim: ArrayView2<f64>, temperature: f64) -> (f64, Array2<f64>) {
    let m = sim.nrows();
    let n = m / 2;
    let s = &sim / temperature;
    let mut d_sim = Array2::<f64>::zeros((m, m));
    let mut loss = 0.0;
    for i in 0..m {
        let pos = (i + n) % m;
        let max = (0..m).filter(|&j| j != i).map(|j| s[[i, j]]).fold(f64::MIN, f64::max);
        let denom: f64 = (0..m).filter(|&j| j != i).map(|j| (s[[i, j]] - max).exp()).sum();
        loss += -(s[[i, pos]] - max) + denom.ln();
        for j in (0..m).filter(|&j| j != i) {
            d_sim[[i, j]] = (s[[i, j]] - max).exp() / denom / m as f64;
        }
        d_sim[[i, pos]] -= 1.0 / m as f64;
    }
    (loss / m as f64, d_sim / temperature)
}

/// [`contrastive_loss`] and its gradient w.r.t. `z`.
pub fn contrastive_loss_grad(z: ArrayView2<f64>, temperature: f64) -> Result<(f64, Array2<f64>)> {
    let m = z.nrows();
    if !m.is_multiple_of(2) || m < 4 {
        return Err(Error::input(format!(
            "contrastive loss needs 2N rows with N >= 2, got {m}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::input("contrastive temperature must be positive"));
    }
    let norms: Array1<f64> = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let u = &z / &norms.view().insert_axis(Axis(1));
    let sim = u.dot(&u.t());
    let (loss, d_sim) = nt_xent(sim.view(), temperature);
    let du = (&d_sim + &d_sim.t()).dot(&u);
    let proj = (&du * &u).sum_axis(Axis(1)).insert_axis(Axis(1));
    let dz = (&du - &(&u * &proj)) / norms.view().insert_axis(Axis(1));
    Ok((loss, dz))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Loss of the first batch before any update.
    pub initial_loss: Option<f64>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut sub_rng(seed, &[TAG_SHUFFLE, epoch as u64]));
    idx
}

fn check_finite(loss: f64, epoch: usize, batch: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            epoch,
            batch,
            detail: format!("{what} loss is {loss}"),
        })
    }
}

/// Train `extractor` and a throwaway projection head on pairs of
/// independent contrastive views. The extractor is trained regardless of its
/// freeze flag, which is restored afterwards.
pub fn pretrain_extractor(
    extractor: &mut Extractor,
    images: &[Image],
    config: &ContrastiveConfig,
    seed: u64,
) -> Result<PretrainReport> {
    config.validate()?;
    if images.len() < 2 {
        return Err(Error::input("contrastive pretraining needs at least two images"));
    }
    let seed = crate::rng::derive(seed, &[TAG_PRETRAIN]);
    let mut head = ProjectionHead::new(
        extractor.feature_dim(),
        config.projection_hidden,
        config.projection_dim,
        &mut sub_rng(seed, &[TAG_INIT]),
    );
    let mut opt = Adam::new(config.optimizer);
    let was_frozen = extractor.is_frozen();
    extractor.set_frozen(false);
    let bs = config.batch_size.min(images.len());
    let mut report = PretrainReport::default();
    let result = (|| -> Result<()> {
        for epoch in 1..=config.epochs {
            let order = shuffled(images.len(), seed, epoch);
            let mut total = 0.0;
            let mut batches = 0;
            for (bi, chunk) in order.chunks_exact(bs).enumerate() {
                let views = par::map_range(2 * bs, |k| {
                    let item = chunk[k % bs];
                    let mut rng = sub_rng(seed, &[TAG_AUGMENT, epoch as u64, item as u64, (k / bs) as u64]);
                    simclr_view(&images[item], &config.views, &mut rng)
                });
                let refs: Vec<&Image> = views.iter().collect();
                let x = images_to_tensor(&refs)?;
                let (feats, cache) = extractor.forward(x.view(), true)?;
                let (z, hidden) = head.forward(feats.view());
                let (loss, dz) = contrastive_loss_grad(z.view(), config.temperature)?;
                check_finite(loss, epoch, bi, "contrastive")?;
                if report.initial_loss.is_none() {
                    report.initial_loss = Some(loss);
                }
                let d_feats = head.backward(feats.view(), &hidden, dz.view());
                extractor.backward(cache.as_ref().expect("training pass"), d_feats.view());
                opt.step(&mut [("extractor", extractor), ("projection", &mut head)]);
                total += loss;
                batches += 1;
            }
            report.epoch_losses.push(total / batches.max(1) as f64);
        }
        Ok(())
    })();
    extractor.set_frozen(was_frozen);
    result.map(|_| report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisedReport {
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the held-out split, when one was given.
    pub eval_accuracy: Option<f64>,
}

/// Classifier on top of extractor features.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub linear: Linear,
}

impl Module for Classifier {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.linear.visit(&join(prefix, "linear"), v);
    }
}

/// Supervised proxy pretraining: train the extractor with a linear
/// classifier on class labels (baseline augmentation), then drop the
/// classifier. Reports held-out accuracy when `eval` is given.
pub fn pretrain_supervised(
    extractor: &mut Extractor,
    train: &DatasetSplit,
    eval: Option<&DatasetSplit>,
    config: &SupervisedConfig,
    seed: u64,
) -> Result<SupervisedReport> {
    if train.len() < 2 || config.batch_size < 2 {
        return Err(Error::input("supervised pretraining needs at least two images per batch"));
    }
    let seed = crate::rng::derive(seed, &[TAG_PRETRAIN, 1]);
    let n_classes = crate::harness::CLASSES;
    let mut clf = Classifier {
        linear: Linear::new(extractor.feature_dim(), n_classes, true, &mut sub_rng(seed, &[TAG_INIT])),
    };
    let mut opt = Adam::new(config.optimizer);
    let plan = AugmentPlan::default();
    let was_frozen = extractor.is_frozen();
    extractor.set_frozen(false);
    let bs = config.batch_size.min(train.len());
    let mut report = SupervisedReport::default();
    let result = (|| -> Result<()> {
        for epoch in 1..=config.epochs {
            let order = shuffled(train.len(), seed, epoch);
            let (mut total, mut batches) = (0.0, 0);
            for (bi, chunk) in order.chunks_exact(bs).enumerate() {
                let views = par::map_slice(chunk, |&i| {
                    let mut rng = sub_rng(seed, &[TAG_AUGMENT, epoch as u64, i as u64]);
                    baseline_augment(&train.images[i], &plan, &mut rng)
                });
                let refs: Vec<&Image> = views.iter().collect();
                let x = images_to_tensor(&refs)?;
                let (feats, cache) = extractor.forward(x.view(), true)?;
                let probs = softmax_rows(clf.linear.forward(feats.view()).view());
                let mut d = probs.clone();
                let mut loss = 0.0;
                for (r, &i) in chunk.iter().enumerate() {
                    let y = train.labels[i] as usize;
                    loss -= probs[[r, y]].max(1e-12).ln();
                    d[[r, y]] -= 1.0;
                }
                loss /= bs as f64;
                d /= bs as f64;
                check_finite(loss, epoch, bi, "classification")?;
                let d_feats = clf.linear.backward(feats.view(), d.view());
                extractor.backward(cache.as_ref().expect("training pass"), d_feats.view());
                opt.step(&mut [("extractor", extractor), ("classifier", &mut clf)]);
                total += loss;
                batches += 1;
            }
            report.epoch_losses.push(total / batches.max(1) as f64);
        }
        Ok(())
    })();
    extractor.set_frozen(was_frozen);
    result?;
    if let Some(ev) = eval {
        let mut correct = 0;
        for chunk in (0..ev.len()).collect::<Vec<_>>().chunks(256) {
            let refs: Vec<&Image> = chunk.iter().map(|&i| &ev.images[i]).collect();
            let (feats, _) = extractor.forward(images_to_tensor(&refs)?.view(), false)?;
            let logits = clf.linear.forward(feats.view());
            for (r, &i) in chunk.iter().enumerate() {
                if crate::channel::argmax(logits.row(r)) == ev.labels[i] as usize {
                    correct += 1;
                }
            }
        }
        report.eval_accuracy = Some(correct as f64 / ev.len().max(1) as f64);
    }
    Ok(report)
}
