//! Discrete communication primitives.
//!
//! Messages are produced one token at a time by perturbing logits with
//! Gumbel noise, relaxing the argmax with a tempered softmax, and then
//! snapping to a hard one-hot. The forward pass carries the hard one-hot;
//! the backward pass treats the snap as the identity, so gradients reach the
//! logits through the relaxed sample ([`relaxed_backward`]).

use ndarray::{Array1, ArrayD, ArrayView1, IxDyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Lower clamp applied to uniform draws before the double log.
pub const UNIFORM_EPS: f64 = 1e-20;
// 1 - 1e-20 rounds to 1.0 in f64, so the upper clamp is the largest float below 1.
const UNIFORM_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Vocabulary size including the EoS token.
    pub vocab_size: usize,
    pub max_len: usize,
    pub temperature: f64,
    pub eos_id: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 100,
            max_len: 5,
            temperature: 1.0,
            eos_id: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", "must be at least 2"));
        }
        if self.max_len < 1 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be a positive finite number"));
        }
        if self.eos_id >= self.vocab_size {
            return Err(Error::config("eos_id", "must be below vocab_size"));
        }
        Ok(())
    }
}

/// A fixed-length token sequence. Positions after the first EoS hold the
/// EoS id and carry no information.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    tokens: Vec<usize>,
    effective_len: usize,
}

impl Message {
    /// Build a message from raw decoder output, masking everything after the
    /// first EoS.
    pub fn from_tokens(mut tokens: Vec<usize>, cfg: &ChannelConfig) -> Result<Self> {
        if tokens.len() != cfg.max_len {
            return Err(Error::input(format!(
                "message has {} tokens, expected {}",
                tokens.len(),
                cfg.max_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::input(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let effective_len = effective_length(&tokens, cfg.eos_id);
        for t in &mut tokens[effective_len..] {
            *t = cfg.eos_id;
        }
        Ok(Self {
            tokens,
            effective_len,
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Number of informative tokens, counting the terminating EoS.
    pub fn effective_len(&self) -> usize {
        self.effective_len
    }
}

/// Index of the first EoS plus one (the EoS itself counts), or the full
/// length when no EoS is present.
pub fn effective_length(tokens: &[usize], eos_id: usize) -> usize {
    tokens
        .iter()
        .position(|&t| t == eos_id)
        .map_or(tokens.len(), |i| i + 1)
}

/// `-ln(-ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel_transform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, UNIFORM_MAX);
    -(-u.ln()).ln()
}

/// I.i.d. standard Gumbel noise of the given shape.
pub fn sample_gumbel(shape: &[usize], rng: &mut Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || gumbel_transform(rng.random::<f64>()))
}

fn check_finite(logits: ArrayView1<f64>) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::input("logits must be finite"))
    }
}

/// Tempered softmax of `(logits + noise) / tau` for a fixed noise draw.
pub fn relaxed_sample(
    logits: ArrayView1<f64>,
    noise: ArrayView1<f64>,
    tau: f64,
) -> Result<Array1<f64>> {
    check_finite(logits)?;
    if logits.len() != noise.len() {
        return Err(Error::input("logits and noise lengths differ"));
    }
    if !(tau > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }
    let z = (&logits + &noise) / tau;
    Ok(softmax(z.view()))
}

/// One relaxed categorical sample.
pub fn gumbel_softmax(logits: ArrayView1<f64>, tau: f64, rng: &mut Rng) -> Result<Array1<f64>> {
    check_finite(logits)?;
    let g = sample_gumbel(&[logits.len()], rng);
    let g = g.into_dimensionality::<ndarray::Ix1>().expect("1-d noise");
    relaxed_sample(logits, g.view(), tau)
}

pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Hard one-hot at the argmax of a relaxed sample.
pub fn straight_through_onehot(relaxed: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(relaxed.len());
    if !relaxed.is_empty() {
        out[argmax(relaxed)] = 1.0;
    }
    out
}

/// Gradient w.r.t. the logits given the gradient w.r.t. the (hard or
/// relaxed) sample. For the straight-through path the upstream gradient is
/// the one computed at the hard one-hot; it is passed to the relaxed sample
/// unchanged and pulled back through the tempered softmax:
/// `dl = y * (dy - <dy, y>) / tau`.
pub fn relaxed_backward(relaxed: ArrayView1<f64>, grad_sample: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let dot = relaxed.dot(&grad_sample);
    ndarray::Zip::from(&relaxed)
        .and(&grad_sample)
        .map_collect(|&y, &d| y * (d - dot) / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn gumbel_fixed_point_at_inverse_e() {
        assert_abs_diff_eq!(gumbel_transform((-1.0f64).exp()), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gumbel_clamp_avoids_infinities() {
        assert!(gumbel_transform(0.0).is_finite());
        assert!(gumbel_transform(1.0).is_finite());
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let mut rng = seeded(11);
        let g = sample_gumbel(&[1_000_000], &mut rng);
        let mean = g.mean().unwrap();
        assert!((mean - 0.577_215_664_9).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn gumbel_is_deterministic() {
        let a = sample_gumbel(&[3, 4], &mut seeded(5));
        let b = sample_gumbel(&[3, 4], &mut seeded(5));
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[3, 4]);
    }

    #[test]
    fn relaxed_closed_forms() {
        let y = relaxed_sample(array![0.0, 0.0].view(), array![0.0, 0.0].view(), 1.0).unwrap();
        assert!((&y - &array![0.5, 0.5]).iter().all(|d| d.abs() < 1e-15));
        let y = relaxed_sample(array![2f64.ln(), 0.0].view(), array![0.0, 0.0].view(), 1.0).unwrap();
        assert!((&y - &array![2.0 / 3.0, 1.0 / 3.0]).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn non_finite_logits_rejected() {
        let mut rng = seeded(0);
        assert!(gumbel_softmax(array![f64::NAN, 0.0].view(), 1.0, &mut rng).is_err());
        assert!(gumbel_softmax(array![f64::INFINITY, 0.0].view(), 1.0, &mut rng).is_err());
    }

    #[test]
    fn straight_through_examples() {
        assert_eq!(straight_through_onehot(array![0.7, 0.2, 0.1].view()), array![1.0, 0.0, 0.0]);
        assert_eq!(straight_through_onehot(array![0.5, 0.5].view()), array![1.0, 0.0]);
    }

    #[test]
    fn effective_length_examples() {
        assert_eq!(effective_length(&[5, 3, 0, 7, 2], 0), 3);
        assert_eq!(effective_length(&[0, 4, 4, 4, 4], 0), 1);
        assert_eq!(effective_length(&[1, 2, 3, 4, 5], 0), 5);
    }

    #[test]
    fn message_masks_after_eos() {
        let cfg = ChannelConfig {
            vocab_size: 10,
            max_len: 5,
            temperature: 1.0,
            eos_id: 0,
        };
        let m = Message::from_tokens(vec![5, 3, 0, 7, 2], &cfg).unwrap();
        assert_eq!(m.tokens(), &[5, 3, 0, 0, 0]);
        assert_eq!(m.effective_len(), 3);
        assert!(Message::from_tokens(vec![1, 2], &cfg).is_err());
        assert!(Message::from_tokens(vec![1, 2, 3, 4, 10], &cfg).is_err());
    }

    #[test]
    fn config_invariants() {
        let ok = ChannelConfig::default();
        assert!(ok.validate().is_ok());
        assert!(ChannelConfig { vocab_size: 1, ..ok }.validate().is_err());
        assert!(ChannelConfig { max_len: 0, ..ok }.validate().is_err());
        assert!(ChannelConfig { temperature: 0.0, ..ok }.validate().is_err());
        assert!(ChannelConfig { eos_id: 100, ..ok }.validate().is_err());
    }

    proptest! {
        #[test]
        fn relaxed_sample_is_a_distribution(
            logits in prop::collection::vec(-3.0f64..3.0, 2..12),
            tau in 0.5f64..5.0,
            seed in any::<u64>(),
        ) {
            let l = Array1::from(logits);
            let y = gumbel_softmax(l.view(), tau, &mut seeded(seed)).unwrap();
            prop_assert!((y.sum() - 1.0).abs() < 1e-6);
            prop_assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn argmax_invariant_to_temperature(
            logits in prop::collection::vec(-5.0f64..5.0, 2..10),
            t1 in 0.05f64..10.0,
            t2 in 0.05f64..10.0,
            seed in any::<u64>(),
        ) {
            let l = Array1::from(logits);
            let g = sample_gumbel(&[l.len()], &mut seeded(seed)).into_dimensionality::<ndarray::Ix1>().unwrap();
            let a = relaxed_sample(l.view(), g.view(), t1).unwrap();
            let b = relaxed_sample(l.view(), g.view(), t2).unwrap();
            prop_assert_eq!(argmax(a.view()), argmax(b.view()));
        }

        #[test]
        fn max_entry_grows_as_temperature_falls(
            logits in prop::collection::vec(-3.0f64..3.0, 2..8),
            seed in any::<u64>(),
        ) {
            let l = Array1::from(logits);
            let g = sample_gumbel(&[l.len()], &mut seeded(seed)).into_dimensionality::<ndarray::Ix1>().unwrap();
            let mut prev = 0.0;
            for tau in [4.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.01, 0.001] {
                let y = relaxed_sample(l.view(), g.view(), tau).unwrap();
                let m = y[argmax(y.view())];
                prop_assert!(m >= prev - 1e-12);
                prev = m;
            }
        }

        #[test]
        fn straight_through_is_one_hot(v in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let h = straight_through_onehot(Array1::from(v).view());
            prop_assert_eq!(h.iter().filter(|&&x| x == 1.0).count(), 1);
            prop_assert_eq!(h.iter().filter(|&&x| x == 0.0).count(), h.len() - 1);
        }
    }
}
