//! Rotation-prediction head and the weighting of the game and rotation losses.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::RotationLabel;
use crate::error::{Error, Result};
use crate::nn::{join, relu, relu_backward, softmax_rows, BatchNorm, BnCache, Linear, Module, Visitor};
use crate::rng::Rng;

pub const ROTATION_CLASSES: usize = 4;

/// Which representation feeds the rotation head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationTap {
    /// Sender's normalised feature-to-hidden state.
    SenderHidden,
    /// Raw extractor features of the Sender's image.
    SenderFeatures,
    /// Receiver's normalised final recurrent state.
    ReceiverHidden,
    /// Receiver's message embedding in feature space.
    ReceiverProjection,
}

impl RotationTap {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sender_hidden" => Self::SenderHidden,
            "sender_features" => Self::SenderFeatures,
            "receiver_hidden" => Self::ReceiverHidden,
            "receiver_projection" => Self::ReceiverProjection,
            _ => return None,
        })
    }

    pub fn is_sender(self) -> bool {
        matches!(self, Self::SenderHidden | Self::SenderFeatures)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_game: f64,
    pub lambda_rot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_game: 1.0,
            lambda_rot: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("lambda_game", self.lambda_game), ("lambda_rot", self.lambda_rot)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "loss weight must be a finite non-negative number"));
            }
        }
        if self.lambda_game == 0.0 && self.lambda_rot == 0.0 {
            return Err(Error::config("lambda_game", "loss weights cannot both be zero"));
        }
        Ok(())
    }
}

pub fn combined_loss(l_game: f64, l_rot: f64, w: &LossWeights) -> f64 {
    w.lambda_game * l_game + w.lambda_rot * l_rot
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy_loss(probs: ArrayView1<f64>, label: RotationLabel) -> f64 {
    -probs[label.index()].max(1e-12).ln()
}

/// Mean cross-entropy over a batch of probability rows, with the gradient
/// w.r.t. the pre-softmax logits.
pub fn rotation_loss(probs: ArrayView2<f64>, labels: &[RotationLabel]) -> (f64, Array2<f64>) {
    let b = probs.nrows() as f64;
    let mut d = probs.to_owned();
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        total += cross_entropy_loss(probs.row(i), l);
        d[[i, l.index()]] -= 1.0;
    }
    (total / b, d / b)
}

/// Three affine layers, batch norm before the first two ReLUs, softmax out.
#[derive(Clone, Debug)]
pub struct RotationHead {
    pub l1: Linear,
    pub bn1: BatchNorm,
    pub l2: Linear,
    pub bn2: BatchNorm,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct HeadPass {
    pub probs: Array2<f64>,
    x: Array2<f64>,
    bn1: BnCache,
    a1: Array2<f64>,
    bn2: BnCache,
    a2: Array2<f64>,
}

impl RotationHead {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Linear::new(input_dim, hidden, true, rng),
            bn1: BatchNorm::new(hidden),
            l2: Linear::new(hidden, hidden, true, rng),
            bn2: BatchNorm::new(hidden),
            out: Linear::new(hidden, ROTATION_CLASSES, true, rng),
        }
    }

    /// All weights and biases zero; batch-norm affine parameters untouched.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            l1: Linear::zeros(input_dim, hidden, true),
            bn1: BatchNorm::new(hidden),
            l2: Linear::zeros(hidden, hidden, true),
            bn2: BatchNorm::new(hidden),
            out: Linear::zeros(hidden, ROTATION_CLASSES, true),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn forward(&mut self, x: ArrayView2<f64>, train: bool) -> Result<HeadPass> {
        if x.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "rotation head expects {}-dim input, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let (n1, bn1) = self.bn1.forward(self.l1.forward(x).view(), train);
        let a1 = relu(&n1);
        let (n2, bn2) = self.bn2.forward(self.l2.forward(a1.view()).view(), train);
        let a2 = relu(&n2);
        let probs = softmax_rows(self.out.forward(a2.view()).view());
        Ok(HeadPass {
            probs,
            x: x.to_owned(),
            bn1,
            a1,
            bn2,
            a2,
        })
    }

    /// Backward from logit gradients; returns the input gradient.
    pub fn backward(&mut self, pass: &HeadPass, d_logits: ArrayView2<f64>) -> Array2<f64> {
        let da2 = self.out.backward(pass.a2.view(), d_logits);
        let dn2 = relu_backward(&pass.a2, &da2);
        let dz2 = self.bn2.backward(&pass.bn2, dn2.view());
        let da1 = self.l2.backward(pass.a1.view(), dz2.view());
        let dn1 = relu_backward(&pass.a1, &da1);
        let dz1 = self.bn1.backward(&pass.bn1, dn1.view());
        self.l1.backward(pass.x.view(), dz1.view())
    }
}

impl Module for RotationHead {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.l1.visit(&join(prefix, "l1"), v);
        self.bn1.visit(&join(prefix, "bn1"), v);
        self.l2.visit(&join(prefix, "l2"), v);
        self.bn2.visit(&join(prefix, "bn2"), v);
        self.out.visit(&join(prefix, "out"), v);
    }
}

/// Eval-mode prediction for a single representation vector.
pub fn rotation_head_forward(head: &mut RotationHead, input: ArrayView1<f64>) -> Result<Array1<f64>> {
    let x = input.insert_axis(Axis(0));
    Ok(head.forward(x, false)?.probs.row(0).to_owned())
}

/// Index of the most probable rotation per row.
pub fn predicted_rotations(probs: ArrayView2<f64>) -> Vec<RotationLabel> {
    probs
        .rows()
        .into_iter()
        .map(|r| RotationLabel::new(crate::channel::argmax(r) as u8).expect("four classes"))
        .collect()
}
