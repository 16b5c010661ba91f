//! Game orchestration: per-variant views, batched games, the training and
//! evaluation loops, and whole experiments.
//!
//! A batch of `B` images plays `B` games: every image is the target once,
//! and all `B` images are the candidates of every game. The Sender runs once
//! per target (batched), candidate features are extracted once and shared.
//! Trailing items that do not fill a batch are dropped.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agents::{batch_game_loss, game_hinge_loss, score_matrix, AgentDims, Receiver, Sender};
use crate::augment::{add_gaussian_noise, baseline_augment, rotate_quarter, sample_rotation, simclr_view, AugmentPlan, Image, RotationLabel};
use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::harness::{self, DatasetSplit, RunLog, RunLogRow};
use crate::metrics::{GameOutcome, MetricsReport, RotationResult, RunMetrics};
use crate::nn::{Adam, AdamConfig, Checkpoint, Module};
use crate::par;
use crate::pretrain::{pretrain_extractor, pretrain_supervised, ContrastiveConfig, PretrainReport, SupervisedConfig, SupervisedReport};
use crate::rng::{derive, sub_rng, TAG_AUGMENT, TAG_EVAL, TAG_GUMBEL, TAG_INIT, TAG_SHUFFLE};
use crate::tasks::{combined_loss, predicted_rotations, rotation_loss, LossWeights, RotationHead, RotationTap};
use crate::vision::{build_extractor, images_to_tensor, Extractor, ExtractorConfig, PixelNorm, Regime, CHECKPOINT_PREFIX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    SenderNoise,
    SenderRotation,
    SenderNoiseRotation,
    SimclrViews,
    ReceiverPredictsRotation,
    SenderPredictsRotation,
    SenderPredictsRotationSimclr,
}

const CLASSIC_REGIMES: &[Regime] = &[Regime::PretrainedFrozen, Regime::RandomFrozen, Regime::Learned];
const SENDER_PREDICTS_REGIMES: &[Regime] = &[
    Regime::Learned,
    Regime::SsPretrainedFrozen,
    Regime::SsPretrainedFinetuned,
];

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::SenderNoise,
        Variant::SenderRotation,
        Variant::SenderNoiseRotation,
        Variant::SimclrViews,
        Variant::ReceiverPredictsRotation,
        Variant::SenderPredictsRotation,
        Variant::SenderPredictsRotationSimclr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::SenderNoise => "sender_noise",
            Self::SenderRotation => "sender_rotation",
            Self::SenderNoiseRotation => "sender_noise_rotation",
            Self::SimclrViews => "simclr_views",
            Self::ReceiverPredictsRotation => "receiver_predicts_rotation",
            Self::SenderPredictsRotation => "sender_predicts_rotation",
            Self::SenderPredictsRotationSimclr => "sender_predicts_rotation_simclr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn sender_noise(self) -> bool {
        matches!(
            self,
            Self::SenderNoise | Self::SenderNoiseRotation | Self::ReceiverPredictsRotation | Self::SenderPredictsRotation
        )
    }

    pub fn sender_rotation(self) -> bool {
        matches!(
            self,
            Self::SenderRotation
                | Self::SenderNoiseRotation
                | Self::ReceiverPredictsRotation
                | Self::SenderPredictsRotation
                | Self::SenderPredictsRotationSimclr
        )
    }

    /// Independent contrastive views for Sender and Receiver.
    pub fn simclr(self) -> bool {
        matches!(self, Self::SimclrViews | Self::SenderPredictsRotationSimclr)
    }

    /// Default tap of the rotation head, if the variant has one.
    pub fn rotation_task(self) -> Option<RotationTap> {
        match self {
            Self::ReceiverPredictsRotation => Some(RotationTap::ReceiverHidden),
            Self::SenderPredictsRotation | Self::SenderPredictsRotationSimclr => Some(RotationTap::SenderHidden),
            _ => None,
        }
    }

    pub fn allowed_regimes(self) -> &'static [Regime] {
        match self {
            Self::ReceiverPredictsRotation => &[Regime::Learned],
            Self::SenderPredictsRotation | Self::SenderPredictsRotationSimclr => SENDER_PREDICTS_REGIMES,
            _ => CLASSIC_REGIMES,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Every permitted `(variant, regime)` pair, one per line.
pub fn allowed_pairs() -> String {
    Variant::ALL
        .iter()
        .map(|v| {
            let rs: Vec<&str> = v.allowed_regimes().iter().map(|r| r.name()).collect();
            format!("{v}: {}", rs.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Self::Desk),
            "paper" => Some(Self::Paper),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub extractor: ExtractorConfig,
    pub agents: AgentDims,
    pub channel: ChannelConfig,
    pub augment: AugmentPlan,
    pub loss_weights: LossWeights,
    /// Overrides the variant's default rotation-head input.
    pub rotation_tap: Option<RotationTap>,
    pub rotation_hidden: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub eval_runs: usize,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: usize,
    /// Stratified subsample sizes; 0 keeps the whole split.
    pub train_size: usize,
    pub val_size: usize,
    pub contrastive: ContrastiveConfig,
    pub supervised: SupervisedConfig,
    /// Record per-epoch wall-clock seconds in the log (breaks byte-identical
    /// logs across runs).
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        let mut c = Self {
            variant: Variant::Baseline,
            extractor: ExtractorConfig::default(),
            agents: AgentDims::default(),
            channel: ChannelConfig {
                vocab_size: 20,
                ..ChannelConfig::default()
            },
            augment: AugmentPlan::default(),
            loss_weights: LossWeights::default(),
            rotation_tap: None,
            rotation_hidden: 200,
            batch_size: 32,
            epochs: 30,
            optimizer: AdamConfig::default(),
            seed: 0,
            eval_runs: 3,
            eval_every: 1,
            train_size: 5000,
            val_size: 1000,
            contrastive: ContrastiveConfig::default(),
            supervised: SupervisedConfig::default(),
            record_wall_time: false,
        };
        c.sync_variant_flags();
        c
    }

    pub fn paper() -> Self {
        Self {
            channel: ChannelConfig::default(),
            batch_size: 128,
            epochs: 200,
            eval_runs: 7,
            train_size: 0,
            val_size: 0,
            ..Self::desk()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Set the augmentation switches implied by the variant.
    pub fn sync_variant_flags(&mut self) {
        self.augment.noise_enabled = self.variant.sender_noise();
        self.augment.rotation_enabled = self.variant.sender_rotation();
        self.augment.simclr_enabled = self.variant.simclr();
    }

    pub fn rotation_tap(&self) -> Option<RotationTap> {
        self.variant.rotation_task().map(|d| self.rotation_tap.unwrap_or(d))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                "must be at least 2 (the target plus one distractor)",
            ));
        }
        self.channel.validate()?;
        self.agents.validate()?;
        self.extractor.validate()?;
        self.augment.validate()?;
        self.loss_weights.validate()?;
        self.contrastive.validate()?;
        if self.agents.feature_dim != self.extractor.feature_dim {
            return Err(Error::config("feature_dim", "agent and extractor feature widths differ"));
        }
        if !self.variant.allowed_regimes().contains(&self.extractor.regime) {
            return Err(Error::config(
                "regime",
                format!(
                    "`{}` cannot be combined with variant `{}`; allowed pairs:\n{}",
                    self.extractor.regime,
                    self.variant,
                    allowed_pairs()
                ),
            ));
        }
        let a = &self.augment;
        if (a.noise_enabled, a.rotation_enabled, a.simclr_enabled)
            != (self.variant.sender_noise(), self.variant.sender_rotation(), self.variant.simclr())
        {
            return Err(Error::config(
                "variant",
                "augmentation switches disagree with the variant",
            ));
        }
        if self.eval_runs == 0 {
            return Err(Error::config("eval_runs", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.rotation_hidden == 0 {
            return Err(Error::config("rotation_hidden", "must be positive"));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// All trainable networks of one experiment.
#[derive(Clone, Debug)]
pub struct Models {
    pub extractor: Extractor,
    pub sender: Sender,
    pub receiver: Receiver,
    pub rotation_head: Option<RotationHead>,
}

impl Models {
    /// Fresh agents (and rotation head when the variant has one) around
    /// `extractor`, initialised from the config seed.
    pub fn new(config: &ExperimentConfig, extractor: Extractor) -> Self {
        let mut rng = sub_rng(config.seed, &[TAG_INIT, 1]);
        let sender = Sender::new(&config.agents, &config.channel, &mut rng);
        let receiver = Receiver::new(&config.agents, &config.channel, &mut rng);
        let rotation_head = config.rotation_tap().map(|tap| {
            let dim = match tap {
                RotationTap::SenderHidden | RotationTap::ReceiverHidden => config.agents.hidden_dim,
                RotationTap::SenderFeatures | RotationTap::ReceiverProjection => config.agents.feature_dim,
            };
            RotationHead::new(dim, config.rotation_hidden, &mut sub_rng(config.seed, &[TAG_INIT, 2]))
        });
        Self {
            extractor,
            sender,
            receiver,
            rotation_head,
        }
    }

    pub fn checkpoint(&mut self, meta: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(meta);
        ck.capture(CHECKPOINT_PREFIX, &mut self.extractor);
        ck.capture("sender", &mut self.sender);
        ck.capture("receiver", &mut self.receiver);
        if let Some(h) = &mut self.rotation_head {
            ck.capture("rotation_head", h);
        }
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore(CHECKPOINT_PREFIX, &mut self.extractor)?;
        ck.restore("sender", &mut self.sender)?;
        ck.restore("receiver", &mut self.receiver)?;
        if let Some(h) = &mut self.rotation_head {
            ck.restore("rotation_head", h)?;
        }
        Ok(())
    }
}

/// Which random streams a batch draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Training epoch (1-based).
    Train { epoch: usize },
    /// Evaluation run (0-based).
    Eval { run: usize },
}

impl Phase {
    fn key(self) -> [u64; 2] {
        match self {
            Phase::Train { epoch } => [0, epoch as u64],
            Phase::Eval { run } => [TAG_EVAL, run as u64],
        }
    }

    pub fn is_train(self) -> bool {
        matches!(self, Phase::Train { .. })
    }
}

/// The images each side sees in one batch.
#[derive(Clone, Debug)]
pub struct BatchViews {
    pub sender: Vec<Image>,
    pub receiver: Vec<Image>,
    pub rotations: Vec<Option<RotationLabel>>,
    /// Sender and Receiver views are the same images.
    pub shared: bool,
}

/// Per-item views. Item `i` draws from a generator derived from the seed,
/// the phase and `ids[i]`, so views do not depend on batch composition or
/// thread scheduling. Training applies the baseline augmentation first;
/// evaluation skips it but keeps the variant's transforms.
pub fn make_views(images: &[&Image], ids: &[usize], config: &ExperimentConfig, phase: Phase) -> Result<BatchViews> {
    let v = config.variant;
    let plan = &config.augment;
    let key = phase.key();
    let items = par::map_range(images.len(), |i| -> Result<(Image, Image, Option<RotationLabel>)> {
        let mut rng = sub_rng(config.seed, &[TAG_AUGMENT, key[0], key[1], ids[i] as u64]);
        let img = images[i];
        let (mut s, r) = if v.simclr() {
            let s = simclr_view(img, &plan.simclr, &mut rng);
            (s, simclr_view(img, &plan.simclr, &mut rng))
        } else {
            let base = if phase.is_train() {
                baseline_augment(img, plan, &mut rng)
            } else {
                img.clone()
            };
            (base.clone(), base)
        };
        if v.sender_noise() {
            s = add_gaussian_noise(&s, plan.noise_variance, &mut rng);
        }
        let mut rot = None;
        if v.sender_rotation() {
            let k = sample_rotation(&mut rng);
            s = rotate_quarter(&s, k)?;
            rot = Some(k);
        }
        Ok((s, r, rot))
    });
    let mut out = BatchViews {
        sender: Vec::with_capacity(images.len()),
        receiver: Vec::with_capacity(images.len()),
        rotations: Vec::with_capacity(images.len()),
        shared: !(v.simclr() || v.sender_noise() || v.sender_rotation()),
    };
    for item in items {
        let (s, r, k) = item?;
        out.sender.push(s);
        out.receiver.push(r);
        out.rotations.push(k);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub outcome: GameOutcome,
    pub game_loss: f64,
    pub rotation_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub records: Vec<RoundRecord>,
    /// Weighted objective that was (or would be) differentiated.
    pub loss: f64,
    pub game_loss: f64,
    pub rotation_loss: Option<f64>,
}

/// Play the `B` games of one batch. In training mode gradients of the
/// weighted loss are accumulated into every trainable module (the optimiser
/// step is left to the caller); frozen extractors receive none.
pub fn play_batch(
    models: &mut Models,
    images: &[&Image],
    labels: &[u8],
    ids: &[usize],
    config: &ExperimentConfig,
    phase: Phase,
    batch_index: usize,
) -> Result<BatchResult> {
    let b = images.len();
    if b != config.batch_size || labels.len() != b || ids.len() != b {
        return Err(Error::input(format!(
            "batch holds {b} images, {} labels and {} ids; expected {}",
            labels.len(),
            ids.len(),
            config.batch_size
        )));
    }
    let train = phase.is_train();
    let views = make_views(images, ids, config, phase)?;
    let mut refs: Vec<&Image> = views.sender.iter().collect();
    if !views.shared {
        refs.extend(views.receiver.iter());
    }
    let x = images_to_tensor(&refs)?;
    let (feats, ext_cache) = models.extractor.forward(x.view(), train)?;
    let fs = feats.slice(s![..b, ..]).to_owned();
    let fr = if views.shared {
        fs.clone()
    } else {
        feats.slice(s![b.., ..]).to_owned()
    };

    let key = phase.key();
    let mut gumbel = sub_rng(config.seed, &[TAG_GUMBEL, key[0], key[1], batch_index as u64]);
    let spass = models.sender.forward(fs.view(), &config.channel, &mut gumbel, train)?;
    let lengths: Vec<usize> = spass.messages.iter().map(|m| m.effective_len()).collect();
    let rpass = models.receiver.forward(&spass.one_hots, &lengths, train)?;
    let scores = score_matrix(rpass.projected.view(), fr.view());
    let (game_loss, mut d_scores) = batch_game_loss(scores.view());

    let tap = config.rotation_tap();
    let rot_labels: Vec<RotationLabel> = views.rotations.iter().flatten().copied().collect();
    let mut head_state = None;
    if let (Some(head), Some(tap)) = (models.rotation_head.as_mut(), tap) {
        let input = match tap {
            RotationTap::SenderHidden => spass.hidden0.view(),
            RotationTap::SenderFeatures => fs.view(),
            RotationTap::ReceiverHidden => rpass.hidden.view(),
            RotationTap::ReceiverProjection => rpass.projected.view(),
        };
        if rot_labels.len() != b {
            return Err(Error::input("rotation task needs a rotation label per item"));
        }
        let hp = head.forward(input, train)?;
        let (l, d_logits) = rotation_loss(hp.probs.view(), &rot_labels);
        head_state = Some((hp, l, d_logits));
    }
    let rot_loss = head_state.as_ref().map(|h| h.1);
    let loss = match rot_loss {
        Some(l) => combined_loss(game_loss, l, &config.loss_weights),
        None => game_loss,
    };
    if !loss.is_finite() {
        let epoch = match phase {
            Phase::Train { epoch } => epoch,
            Phase::Eval { .. } => 0,
        };
        return Err(Error::NonFinite {
            epoch,
            batch: batch_index,
            detail: format!("game loss {game_loss}, rotation loss {rot_loss:?}"),
        });
    }

    if train {
        let w = config.loss_weights;
        let game_scale = if head_state.is_some() { w.lambda_game } else { 1.0 };
        d_scores *= game_scale;
        let mut d_projected = d_scores.dot(&fr);
        let d_fr = d_scores.t().dot(&rpass.projected);
        let mut d_tap = None;
        if let (Some(head), Some((hp, _, d_logits))) = (models.rotation_head.as_mut(), &head_state) {
            let scaled = d_logits * w.lambda_rot;
            d_tap = Some(head.backward(hp, scaled.view()));
        }
        let d_recv_hidden = match (tap, &d_tap) {
            (Some(RotationTap::ReceiverHidden), Some(d)) => Some(d.view()),
            _ => None,
        };
        if let (Some(RotationTap::ReceiverProjection), Some(d)) = (tap, &d_tap) {
            d_projected += d;
        }
        let d_one_hots = models.receiver.backward(&rpass, d_projected.view(), d_recv_hidden);
        let d_send_hidden = match (tap, &d_tap) {
            (Some(RotationTap::SenderHidden), Some(d)) => Some(d.view()),
            _ => None,
        };
        let mut d_fs = models.sender.backward(&spass, &d_one_hots, d_send_hidden);
        if let (Some(RotationTap::SenderFeatures), Some(d)) = (tap, &d_tap) {
            d_fs += d;
        }
        if let Some(cache) = &ext_cache {
            let d_feats = if views.shared {
                d_fs + d_fr
            } else {
                concatenate(Axis(0), &[d_fs.view(), d_fr.view()]).expect("equal widths")
            };
            models.extractor.backward(cache, d_feats.view());
        }
    }

    let predictions = head_state
        .as_ref()
        .map(|(hp, _, _)| predicted_rotations(hp.probs.view()));
    let per_game_rot: Option<Vec<f64>> = head_state.as_ref().map(|(hp, _, _)| {
        (0..b)
            .map(|i| crate::tasks::cross_entropy_loss(hp.probs.row(i), rot_labels[i]))
            .collect()
    });
    let mut records = Vec::with_capacity(b);
    for i in 0..b {
        let mut outcome = GameOutcome::from_scores(scores.row(i), labels.to_vec(), i, lengths[i])?;
        if let Some(p) = &predictions {
            outcome = outcome.with_rotation(RotationResult {
                label: rot_labels[i],
                predicted: p[i],
            });
        }
        records.push(RoundRecord {
            outcome,
            game_loss: game_hinge_loss(scores.row(i), i),
            rotation_loss: per_game_rot.as_ref().map(|r| r[i]),
        });
    }
    Ok(BatchResult {
        records,
        loss,
        game_loss,
        rotation_loss: rot_loss,
    })
}

pub struct TrainState {
    pub models: Models,
    pub optimizer: Adam,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(config: &ExperimentConfig, models: Models) -> Self {
        Self {
            models,
            optimizer: Adam::new(config.optimizer),
            epoch: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub batches: usize,
    pub mean_loss: f64,
    pub mean_game_loss: f64,
    pub mean_rotation_loss: Option<f64>,
    pub extractor_frozen: bool,
}

fn batch_order(n: usize, seed: u64, key: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut path = vec![TAG_SHUFFLE];
    path.extend_from_slice(key);
    idx.shuffle(&mut sub_rng(seed, &path));
    idx
}

/// One shuffled pass over `data` with an optimiser step per full batch.
pub fn train_epoch(state: &mut TrainState, data: &DatasetSplit, config: &ExperimentConfig) -> Result<EpochSummary> {
    let epoch = state.epoch + 1;
    state.models.extractor.set_epoch(epoch);
    let order = batch_order(data.len(), config.seed, &[epoch as u64]);
    let (mut loss, mut game, mut rot, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (bi, ids) in order.chunks_exact(config.batch_size).enumerate() {
        let images: Vec<&Image> = ids.iter().map(|&i| &data.images[i]).collect();
        let labels: Vec<u8> = ids.iter().map(|&i| data.labels[i]).collect();
        let r = play_batch(&mut state.models, &images, &labels, ids, config, Phase::Train { epoch }, bi)?;
        let m = &mut state.models;
        let mut modules: Vec<(&str, &mut dyn Module)> = vec![("sender", &mut m.sender), ("receiver", &mut m.receiver)];
        if let Some(h) = m.rotation_head.as_mut() {
            modules.push(("rotation_head", h));
        }
        if !m.extractor.is_frozen() {
            modules.push((CHECKPOINT_PREFIX, &mut m.extractor));
        }
        state.optimizer.step(&mut modules);
        loss += r.loss;
        game += r.game_loss;
        rot += r.rotation_loss.unwrap_or(0.0);
        n += 1;
    }
    state.epoch = epoch;
    let d = n.max(1) as f64;
    Ok(EpochSummary {
        epoch,
        batches: n,
        mean_loss: loss / d,
        mean_game_loss: game / d,
        mean_rotation_loss: config.rotation_tap().map(|_| rot / d),
        extractor_frozen: state.models.extractor.is_frozen(),
    })
}

fn evaluate_with<F>(data: &DatasetSplit, config: &ExperimentConfig, n_runs: usize, mut play: F) -> Result<MetricsReport>
where
    F: FnMut(usize, usize, &[usize]) -> Result<Vec<GameOutcome>>,
{
    let b = config.batch_size;
    if data.len() < b {
        return Err(Error::input(format!(
            "evaluation split has {} items, fewer than one batch of {b}",
            data.len()
        )));
    }
    let mut runs = Vec::with_capacity(n_runs);
    let mut games = 0;
    for run in 0..n_runs {
        let order = batch_order(data.len(), config.seed, &[TAG_EVAL, run as u64]);
        let mut outcomes = Vec::new();
        for (bi, ids) in order.chunks_exact(b).enumerate() {
            outcomes.extend(play(run, bi, ids)?);
        }
        games = outcomes.len();
        runs.push(RunMetrics::from_outcomes(&outcomes));
    }
    Ok(MetricsReport::aggregate(runs, games))
}

/// Greedy-decoding evaluation over `n_runs` differently shuffled passes.
/// Leaves every parameter and running statistic untouched.
pub fn evaluate(models: &mut Models, data: &DatasetSplit, config: &ExperimentConfig, n_runs: usize) -> Result<MetricsReport> {
    evaluate_with(data, config, n_runs, |run, bi, ids| {
        let images: Vec<&Image> = ids.iter().map(|&i| &data.images[i]).collect();
        let labels: Vec<u8> = ids.iter().map(|&i| data.labels[i]).collect();
        let r = play_batch(models, &images, &labels, ids, config, Phase::Eval { run }, bi)?;
        Ok(r.records.into_iter().map(|r| r.outcome).collect())
    })
}

/// Evaluation with an arbitrary scorer: `scorer(ids)` returns the `B x B`
/// score matrix whose row `i` is the game targeting `ids[i]`. Message
/// lengths are reported as the channel maximum.
pub fn evaluate_with_scorer<F>(data: &DatasetSplit, config: &ExperimentConfig, n_runs: usize, mut scorer: F) -> Result<MetricsReport>
where
    F: FnMut(&[usize]) -> Array2<f64>,
{
    evaluate_with(data, config, n_runs, |_, _, ids| {
        let scores = scorer(ids);
        let labels: Vec<u8> = ids.iter().map(|&i| data.labels[i]).collect();
        (0..ids.len())
            .map(|i| GameOutcome::from_scores(scores.row(i), labels.clone(), i, config.channel.max_len))
            .collect()
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub contrastive: Option<PretrainReport>,
    pub supervised: Option<SupervisedReport>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Artifacts (log CSV, JSON summary, checkpoints) go here when set.
    pub out_dir: Option<PathBuf>,
    /// Extractor weights to start from instead of pretraining.
    pub weights: Option<Checkpoint>,
    /// Called with every log row as it is produced.
    pub progress: Option<fn(&RunLogRow)>,
}

pub struct ExperimentOutput {
    pub log: RunLog,
    pub report: MetricsReport,
    pub epochs: Vec<EpochSummary>,
    pub pretrain: PretrainSummary,
    pub models: Models,
}

/// Subsample the splits as configured.
pub fn prepare_splits(config: &ExperimentConfig, train: &DatasetSplit, val: &DatasetSplit) -> Result<(DatasetSplit, DatasetSplit)> {
    let pick = |split: &DatasetSplit, n: usize, stream: u64| -> Result<DatasetSplit> {
        if n == 0 || n >= split.len() {
            Ok(split.clone())
        } else {
            harness::stratified_subsample(split, n, derive(config.seed, &[stream]))
        }
    };
    Ok((pick(train, config.train_size, 1)?, pick(val, config.val_size, 2)?))
}

/// Obtain the extractor for the configured regime: external weights when
/// given, otherwise pretraining on `train` when the regime needs it.
pub fn acquire_extractor(
    config: &ExperimentConfig,
    train: &DatasetSplit,
    val: &DatasetSplit,
    weights: Option<&Checkpoint>,
) -> Result<(Extractor, PretrainSummary, Option<Checkpoint>)> {
    let mut rng = sub_rng(config.seed, &[TAG_INIT, 0]);
    let norm = PixelNorm::fit(&train.images)?;
    let mut summary = PretrainSummary::default();
    if let Some(w) = weights {
        return Ok((build_extractor(&config.extractor, &mut rng, Some(w))?, summary, None));
    }
    if !config.extractor.regime.needs_weights() {
        let mut e = build_extractor(&config.extractor, &mut rng, None)?;
        e.set_pixel_norm(norm);
        return Ok((e, summary, None));
    }
    let fresh = ExtractorConfig {
        regime: Regime::Learned,
        ..config.extractor.clone()
    };
    let mut e = build_extractor(&fresh, &mut rng, None)?;
    e.set_pixel_norm(norm);
    if config.extractor.regime.self_supervised() {
        summary.contrastive = Some(pretrain_extractor(&mut e, &train.images, &config.contrastive, config.seed)?);
    } else {
        summary.supervised = Some(pretrain_supervised(&mut e, train, Some(val), &config.supervised, config.seed)?);
    }
    let mut ck = Checkpoint::new(serde_json::json!({ "kind": "extractor", "regime": config.extractor.regime }));
    ck.capture(CHECKPOINT_PREFIX, &mut e);
    let built = build_extractor(&config.extractor, &mut rng, Some(&ck))?;
    Ok((built, summary, Some(ck)))
}

fn log_row(epoch: usize, train_loss: f64, m: &MetricsReport, wall: Option<f64>, seed: u64) -> RunLogRow {
    RunLogRow {
        epoch,
        train_loss,
        comm_rate_top1: m.mean.comm_rate_top1,
        comm_rate_top5: m.mean.comm_rate_top5,
        target_class_in_top5: m.mean.target_class_in_top5,
        target_class_mean_rank: m.mean.target_class_mean_rank,
        message_length_mean: m.mean.message_length_mean,
        message_length_std: m.mean.message_length_std,
        rotation_accuracy: m.mean.rotation_accuracy,
        wall_time: wall,
        seed,
    }
}

/// Pretrain if needed, train with periodic evaluation, write artifacts.
/// Fully determined by the config and the data.
pub fn run_experiment(
    config: &ExperimentConfig,
    train: &DatasetSplit,
    val: &DatasetSplit,
    options: RunOptions,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let (train, val) = prepare_splits(config, train, val)?;
    if train.len() < config.batch_size {
        return Err(Error::config("train_size", "training split is smaller than one batch"));
    }
    let (extractor, pretrain, pre_ck) = acquire_extractor(config, &train, &val, options.weights.as_ref())?;
    let mut state = TrainState::new(config, Models::new(config, extractor));
    let mut log = RunLog {
        label: format!("{}-{}-seed{}", config.variant, config.extractor.regime, config.seed),
        ..RunLog::default()
    };
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut report = None;
    let start = Instant::now();
    for epoch in 1..=config.epochs {
        let summary = train_epoch(&mut state, &train, config)?;
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let r = evaluate(&mut state.models, &val, config, config.eval_runs)?;
            let wall = config.record_wall_time.then(|| start.elapsed().as_secs_f64());
            let row = log_row(epoch, summary.mean_loss, &r, wall, config.seed);
            if let Some(f) = options.progress {
                f(&row);
            }
            log.rows.push(row);
            report = Some(r);
        }
        epochs.push(summary);
    }
    let report = match report {
        Some(r) => r,
        None => evaluate(&mut state.models, &val, config, config.eval_runs)?,
    };
    log.report = Some(report.clone());
    log.config = Some(config.clone());
    log.pretrain = Some(pretrain.clone());
    if let Some(dir) = &options.out_dir {
        write_artifacts(dir, config, &log, &mut state.models, pre_ck.as_ref())?;
    }
    Ok(ExperimentOutput {
        log,
        report,
        epochs,
        pretrain,
        models: state.models,
    })
}

pub const LOG_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "metrics.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const PRETRAINED_FILE: &str = "pretrained_extractor.ckpt";

fn write_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    log: &RunLog,
    models: &mut Models,
    pretrained: Option<&Checkpoint>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    harness::write_metrics_log(log, &dir.join(LOG_FILE))?;
    let meta = serde_json::json!({ "kind": "models", "config": config });
    models.checkpoint(meta).save(&dir.join(MODEL_FILE))?;
    if let Some(ck) = pretrained {
        ck.save(&dir.join(PRETRAINED_FILE))?;
    }
    Ok(())
}

/// Rebuild models from a checkpoint written by [`run_experiment`].
pub fn load_models(config: &ExperimentConfig, ck: &Checkpoint) -> Result<Models> {
    let cfg = ExtractorConfig {
        regime: Regime::Learned,
        ..config.extractor.clone()
    };
    let mut extractor = build_extractor(&cfg, &mut sub_rng(config.seed, &[TAG_INIT, 0]), None)?;
    let mut models = {
        extractor.set_frozen(true);
        Models::new(config, extractor)
    };
    models.restore(ck)?;
    Ok(models)
}
