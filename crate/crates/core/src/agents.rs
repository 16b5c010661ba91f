//! Sender and Receiver networks and the ranking hinge loss.
//!
//! The Sender maps an image feature to an initial LSTM state (affine map
//! followed by batch norm), then unrolls up to `max_len` steps from a learned
//! start-of-sequence embedding, emitting one token per step. During training
//! each token is a straight-through Gumbel-Softmax sample; in evaluation it is
//! the greedy argmax. The hard one-hot is fed back as the next input.
//!
//! The Receiver embeds the one-hot tokens, runs its own LSTM over the first
//! `effective_len` positions, batch-normalises the final hidden state and
//! projects it into feature space. Candidates are scored by inner product.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Ix1};
use serde::{Deserialize, Serialize};

use crate::channel::{argmax, ChannelConfig, Message};
use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm, BnCache, Linear, LstmCell, LstmStep, Module, Param, Visitor};
use crate::rng::Rng;

/// Network widths. Vocabulary size and maximum length live in
/// [`ChannelConfig`], which both agents share.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

impl Default for AgentDims {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 128,
            feature_dim: 256,
        }
    }
}

impl AgentDims {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                return Err(Error::config(k, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Rows of a batch as hard one-hots, one matrix per time step.
pub fn one_hot_steps(messages: &[Message], vocab: usize) -> Vec<Array2<f64>> {
    let len = messages.first().map_or(0, |m| m.tokens().len());
    (0..len)
        .map(|t| {
            let mut m = Array2::zeros((messages.len(), vocab));
            for (b, msg) in messages.iter().enumerate() {
                m[[b, msg.tokens()[t]]] = 1.0;
            }
            m
        })
        .collect()
}

fn row_one_hot(scores: ArrayView2<f64>) -> (Array2<f64>, Vec<usize>) {
    let mut out = Array2::zeros(scores.raw_dim());
    let mut idx = Vec::with_capacity(scores.nrows());
    for (b, row) in scores.rows().into_iter().enumerate() {
        let k = argmax(row);
        out[[b, k]] = 1.0;
        idx.push(k);
    }
    (out, idx)
}

#[derive(Clone, Debug)]
pub struct Sender {
    pub feat_to_hidden: Linear,
    pub feat_bn: BatchNorm,
    pub cell: LstmCell,
    pub to_logits: Linear,
    /// `V x E`
    pub embedding: Param,
    /// Start-of-sequence input, outside the vocabulary.
    pub sos: Param,
}

#[derive(Clone, Debug)]
struct SenderCache {
    features: Array2<f64>,
    bn: BnCache,
    steps: Vec<LstmStep>,
    hiddens: Vec<Array2<f64>>,
    relaxed: Vec<Array2<f64>>,
    tau: f64,
}

/// Output of one batched Sender unroll.
#[derive(Clone, Debug)]
pub struct SenderPass {
    pub messages: Vec<Message>,
    /// Hard one-hot token per step, `B x V` each; what the Receiver reads.
    pub one_hots: Vec<Array2<f64>>,
    /// Batch-normalised feature-to-hidden representation (`B x H`).
    pub hidden0: Array2<f64>,
    cache: Option<SenderCache>,
}

impl Sender {
    pub fn new(dims: &AgentDims, channel: &ChannelConfig, rng: &mut Rng) -> Self {
        Self {
            feat_to_hidden: Linear::new(dims.feature_dim, dims.hidden_dim, true, rng),
            feat_bn: BatchNorm::new(dims.hidden_dim),
            cell: LstmCell::new(dims.embed_dim, dims.hidden_dim, rng),
            to_logits: Linear::new(dims.hidden_dim, channel.vocab_size, true, rng),
            embedding: Param::new(crate::nn::uniform_fan_in(
                ndarray::Ix2(channel.vocab_size, dims.embed_dim),
                1,
                rng,
            )),
            sos: Param::new(crate::nn::uniform_fan_in(Ix1(dims.embed_dim), 1, rng)),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feat_to_hidden.in_dim()
    }

    /// Generate one message per feature row. `train` selects stochastic
    /// straight-through sampling (and batch-statistics normalisation) over
    /// greedy decoding.
    pub fn forward(
        &mut self,
        features: ArrayView2<f64>,
        channel: &ChannelConfig,
        rng: &mut Rng,
        train: bool,
    ) -> Result<SenderPass> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::input(format!(
                "sender expects {}-dim features, got {}",
                self.feature_dim(),
                features.ncols()
            )));
        }
        let b = features.nrows();
        let pre_bn = self.feat_to_hidden.forward(features);
        let (hidden0, bn) = self.feat_bn.forward(pre_bn.view(), train);
        let mut x = Array2::from_shape_fn((b, self.sos.value.len()), |(_, j)| self.sos.value[[j]]);
        let mut h = hidden0.clone();
        let mut c = Array2::<f64>::zeros(h.raw_dim());
        let mut steps = Vec::with_capacity(channel.max_len);
        let mut hiddens = Vec::with_capacity(channel.max_len);
        let mut relaxed = Vec::with_capacity(channel.max_len);
        let mut one_hots = Vec::with_capacity(channel.max_len);
        let mut tokens = vec![Vec::with_capacity(channel.max_len); b];
        for _ in 0..channel.max_len {
            let (h2, c2, step) = self.cell.step(x.view(), h.view(), c.view());
            let logits = self.to_logits.forward(h2.view());
            let (hard, idx) = if train {
                let noise = crate::channel::sample_gumbel(&[b, channel.vocab_size], rng)
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                let soft = crate::nn::softmax_rows(((&logits + &noise) / channel.temperature).view());
                let out = row_one_hot(soft.view());
                relaxed.push(soft);
                out
            } else {
                row_one_hot(logits.view())
            };
            for (row, &k) in tokens.iter_mut().zip(&idx) {
                row.push(k);
            }
            x = hard.dot(&self.embedding.v2());
            one_hots.push(hard);
            steps.push(step);
            hiddens.push(h2.clone());
            h = h2;
            c = c2;
        }
        let messages = tokens
            .into_iter()
            .map(|t| Message::from_tokens(t, channel))
            .collect::<Result<Vec<_>>>()?;
        let cache = train.then(|| SenderCache {
            features: features.to_owned(),
            bn,
            steps,
            hiddens,
            relaxed,
            tau: channel.temperature,
        });
        Ok(SenderPass {
            messages,
            one_hots,
            hidden0,
            cache,
        })
    }

    /// Backpropagate gradients w.r.t. the emitted one-hots (and optionally
    /// w.r.t. `hidden0`) to the parameters; returns `dL/dfeatures`.
    ///
    /// The hard one-hot's gradient is handed to the relaxed sample unchanged
    /// (straight-through) and pulled back through the tempered softmax.
    pub fn backward(
        &mut self,
        pass: &SenderPass,
        d_one_hots: &[Array2<f64>],
        d_hidden0: Option<ArrayView2<f64>>,
    ) -> Array2<f64> {
        let cache = pass
            .cache
            .as_ref()
            .expect("Sender::backward needs a training-mode pass");
        let steps = cache.steps.len();
        let (b, hd) = pass.hidden0.dim();
        let mut dh = Array2::<f64>::zeros((b, hd));
        let mut dc = Array2::<f64>::zeros((b, hd));
        // gradient w.r.t. the input fed at the step after `t`
        let mut dx_next: Option<Array2<f64>> = None;
        for t in (0..steps).rev() {
            let mut d_hard = d_one_hots[t].clone();
            if let Some(dx) = &dx_next {
                d_hard += &dx.dot(&self.embedding.v2().t());
                let d_emb = pass.one_hots[t].t().dot(dx);
                let mut g = self.embedding.g2();
                g += &d_emb;
            }
            let soft = &cache.relaxed[t];
            let d_logits = crate::nn::softmax_rows_backward(soft.view(), d_hard.view()) / cache.tau;
            dh += &self.to_logits.backward(cache.hiddens[t].view(), d_logits.view());
            let (dx, dh_prev, dc_prev) = self.cell.step_backward(&cache.steps[t], dh.view(), dc.view());
            dx_next = Some(dx);
            dh = dh_prev;
            dc = dc_prev;
        }
        if let Some(dx0) = dx_next {
            let mut g = self.sos.g1();
            g += &dx0.sum_axis(Axis(0));
        }
        if let Some(extra) = d_hidden0 {
            dh += &extra;
        }
        let d_pre = self.feat_bn.backward(&cache.bn, dh.view());
        self.feat_to_hidden.backward(cache.features.view(), d_pre.view())
    }
}

impl Module for Sender {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.feat_to_hidden.visit(&join(prefix, "feat_to_hidden"), v);
        self.cell.visit(&join(prefix, "cell"), v);
        self.to_logits.visit(&join(prefix, "to_logits"), v);
        v.param(&join(prefix, "embedding"), &mut self.embedding);
        v.param(&join(prefix, "sos"), &mut self.sos);
        self.feat_bn.visit(&join(prefix, "feat_bn"), v);
    }
}

#[derive(Clone, Debug)]
pub struct Receiver {
    /// `V x E`, separate from the Sender's table.
    pub embedding: Param,
    pub cell: LstmCell,
    pub bn: BatchNorm,
    pub projection: Linear,
}

#[derive(Clone, Debug)]
struct ReceiverCache {
    one_hots: Vec<Array2<f64>>,
    lengths: Vec<usize>,
    steps: Vec<LstmStep>,
    bn: BnCache,
}

#[derive(Clone, Debug)]
pub struct ReceiverPass {
    /// Batch-normalised final hidden state (`B x H`).
    pub hidden: Array2<f64>,
    /// Projection into feature space (`B x D`).
    pub projected: Array2<f64>,
    cache: ReceiverCache,
    train: bool,
}

impl Receiver {
    pub fn new(dims: &AgentDims, channel: &ChannelConfig, rng: &mut Rng) -> Self {
        Self {
            embedding: Param::new(crate::nn::uniform_fan_in(
                ndarray::Ix2(channel.vocab_size, dims.embed_dim),
                1,
                rng,
            )),
            cell: LstmCell::new(dims.embed_dim, dims.hidden_dim, rng),
            bn: BatchNorm::new(dims.hidden_dim),
            projection: Linear::new(dims.hidden_dim, dims.feature_dim, true, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.out_dim()
    }

    /// Decode a batch of messages given as per-step one-hots. Only the first
    /// `lengths[b]` steps of row `b` update its recurrent state.
    pub fn forward(&mut self, one_hots: &[Array2<f64>], lengths: &[usize], train: bool) -> Result<ReceiverPass> {
        let b = lengths.len();
        let vocab = self.embedding.value.shape()[0];
        if one_hots.iter().any(|m| m.dim() != (b, vocab)) {
            return Err(Error::input("one-hot steps must be B x vocab"));
        }
        let hd = self.cell.hidden();
        let mut h = Array2::<f64>::zeros((b, hd));
        let mut c = Array2::<f64>::zeros((b, hd));
        let horizon = lengths.iter().copied().max().unwrap_or(0).min(one_hots.len());
        let mut steps = Vec::with_capacity(horizon);
        for (t, oh) in one_hots.iter().enumerate().take(horizon) {
            let x = oh.dot(&self.embedding.v2());
            let (h2, c2, step) = self.cell.step(x.view(), h.view(), c.view());
            for (row, &len) in lengths.iter().enumerate() {
                if t < len {
                    h.row_mut(row).assign(&h2.row(row));
                    c.row_mut(row).assign(&c2.row(row));
                }
            }
            steps.push(step);
        }
        let (hidden, bn) = self.bn.forward(h.view(), train);
        let projected = self.projection.forward(hidden.view());
        Ok(ReceiverPass {
            hidden,
            projected,
            cache: ReceiverCache {
                one_hots: one_hots.to_vec(),
                lengths: lengths.to_vec(),
                steps,
                bn,
            },
            train,
        })
    }

    pub fn forward_messages(&mut self, messages: &[Message], train: bool) -> Result<ReceiverPass> {
        let vocab = self.embedding.value.shape()[0];
        let lengths: Vec<usize> = messages.iter().map(Message::effective_len).collect();
        self.forward(&one_hot_steps(messages, vocab), &lengths, train)
    }

    /// Scores of one message against a candidate list (evaluation mode).
    pub fn score(&mut self, message: &Message, candidates: ArrayView2<f64>) -> Result<Array1<f64>> {
        if candidates.nrows() == 0 {
            return Err(Error::input("no candidates"));
        }
        if candidates.ncols() != self.feature_dim() {
            return Err(Error::input(format!(
                "candidates are {}-dim, receiver projects to {}",
                candidates.ncols(),
                self.feature_dim()
            )));
        }
        let pass = self.forward_messages(std::slice::from_ref(message), false)?;
        Ok(candidates.dot(&pass.projected.row(0)))
    }

    /// Returns gradients w.r.t. each step's one-hot input given `dL/dprojected`
    /// and optionally an extra `dL/dhidden`.
    pub fn backward(
        &mut self,
        pass: &ReceiverPass,
        d_projected: ArrayView2<f64>,
        d_hidden: Option<ArrayView2<f64>>,
    ) -> Vec<Array2<f64>> {
        assert!(pass.train, "Receiver::backward needs a training-mode pass");
        let cache = &pass.cache;
        let mut dr = self.projection.backward(pass.hidden.view(), d_projected);
        if let Some(extra) = d_hidden {
            dr += &extra;
        }
        let mut dh = self.bn.backward(&cache.bn, dr.view());
        let mut dc = Array2::<f64>::zeros(dh.raw_dim());
        let b = cache.lengths.len();
        let vocab = self.embedding.value.shape()[0];
        let mut d_one_hots = vec![Array2::<f64>::zeros((b, vocab)); cache.one_hots.len()];
        for t in (0..cache.steps.len()).rev() {
            let active: Vec<bool> = cache.lengths.iter().map(|&l| t < l).collect();
            let mut dh_in = dh.clone();
            let mut dc_in = dc.clone();
            for (row, &on) in active.iter().enumerate() {
                if !on {
                    dh_in.row_mut(row).fill(0.0);
                    dc_in.row_mut(row).fill(0.0);
                }
            }
            let (dx, dh_prev, dc_prev) = self.cell.step_backward(&cache.steps[t], dh_in.view(), dc_in.view());
            for (row, &on) in active.iter().enumerate() {
                if on {
                    dh.row_mut(row).assign(&dh_prev.row(row));
                    dc.row_mut(row).assign(&dc_prev.row(row));
                }
            }
            let d_emb = cache.one_hots[t].t().dot(&dx);
            {
                let mut g = self.embedding.g2();
                g += &d_emb;
            }
            d_one_hots[t] = dx.dot(&self.embedding.v2().t());
        }
        d_one_hots
    }
}

impl Module for Receiver {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "embedding"), &mut self.embedding);
        self.cell.visit(&join(prefix, "cell"), v);
        self.projection.visit(&join(prefix, "projection"), v);
        self.bn.visit(&join(prefix, "bn"), v);
    }
}

/// `scores[i, k] = <message_repr_i, candidate_k>`.
pub fn score_matrix(projected: ArrayView2<f64>, candidates: ArrayView2<f64>) -> Array2<f64> {
    projected.dot(&candidates.t())
}

/// Margin-1 ranking hinge: `sum_{d != target} max(0, 1 - s_target + s_d)`.
pub fn game_hinge_loss(scores: ArrayView1<f64>, target: usize) -> f64 {
    let st = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(d, _)| d != target)
        .map(|(_, &sd)| (1.0 - st + sd).max(0.0))
        .sum()
}

/// Subgradient of [`game_hinge_loss`] w.r.t. the scores.
pub fn game_hinge_grad(scores: ArrayView1<f64>, target: usize) -> Array1<f64> {
    let st = scores[target];
    let mut g = Array1::zeros(scores.len());
    for (d, &sd) in scores.iter().enumerate() {
        if d != target && 1.0 - st + sd > 0.0 {
            g[d] += 1.0;
            g[target] -= 1.0;
        }
    }
    g
}

/// Mean hinge over a square score matrix whose row `i` targets column `i`,
/// with its gradient.
pub fn batch_game_loss(scores: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let b = scores.nrows();
    let mut grad = Array2::zeros(scores.raw_dim());
    let mut total = 0.0;
    for i in 0..b {
        let row = scores.row(i);
        total += game_hinge_loss(row, i);
        grad.row_mut(i).assign(&(game_hinge_grad(row, i) / b as f64));
    }
    (total / b as f64, grad)
}
