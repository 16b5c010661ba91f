//! Communication-success and class-structure measures over played games,
//! plus the analytic and simulated reference values they are read against.
//!
//! Ranks are 1-based. Candidates are ranked by descending score with ties
//! broken by lower candidate index. The target image counts as one of the
//! candidates sharing its class.

use ndarray::ArrayView1;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::RotationLabel;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::sub_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationResult {
    pub label: RotationLabel,
    pub predicted: RotationLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    /// Candidate indices, best first.
    ranking: Vec<usize>,
    labels: Vec<u8>,
    target: usize,
    message_len: usize,
    rotation: Option<RotationResult>,
}

/// Candidate order by descending score, ties to the lower index.
pub fn rank_candidates(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

impl GameOutcome {
    pub fn new(ranking: Vec<usize>, labels: Vec<u8>, target: usize, message_len: usize) -> Result<Self> {
        let n = labels.len();
        if ranking.len() != n || n == 0 {
            return Err(Error::input("ranking and labels must be non-empty and equally long"));
        }
        let mut seen = vec![false; n];
        for &r in &ranking {
            if r >= n || std::mem::replace(&mut seen[r], true) {
                return Err(Error::input("ranking is not a permutation of candidate indices"));
            }
        }
        if target >= n {
            return Err(Error::input(format!("target {target} out of {n} candidates")));
        }
        Ok(Self {
            ranking,
            labels,
            target,
            message_len,
            rotation: None,
        })
    }

    pub fn from_scores(scores: ArrayView1<f64>, labels: Vec<u8>, target: usize, message_len: usize) -> Result<Self> {
        Self::new(rank_candidates(scores), labels, target, message_len)
    }

    pub fn with_rotation(mut self, rotation: RotationResult) -> Self {
        self.rotation = Some(rotation);
        self
    }

    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_class(&self) -> u8 {
        self.labels[self.target]
    }

    pub fn candidates(&self) -> usize {
        self.ranking.len()
    }

    pub fn message_len(&self) -> usize {
        self.message_len
    }

    pub fn rotation(&self) -> Option<RotationResult> {
        self.rotation
    }

    /// 1-based rank of candidate `idx`.
    pub fn rank_of(&self, idx: usize) -> usize {
        self.ranking.iter().position(|&r| r == idx).expect("ranking is a permutation") + 1
    }
}

/// Fraction of games whose target is within the first `k` ranks.
pub fn topk_comm_rate(outcomes: &[GameOutcome], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    if outcomes.is_empty() {
        return 0.0;
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.ranking.iter().take(k).any(|&r| r == o.target))
        .count();
    hits as f64 / outcomes.len() as f64
}

/// Candidates among the first `k` ranks that share the target's class.
pub fn count_target_class_topk(outcome: &GameOutcome, k: usize) -> usize {
    let c = outcome.target_class();
    outcome
        .ranking
        .iter()
        .take(k)
        .filter(|&&r| outcome.labels[r] == c)
        .count()
}

/// Mean 1-based rank of all candidates sharing the target's class.
pub fn mean_rank_target_class(outcome: &GameOutcome) -> f64 {
    let c = outcome.target_class();
    let (sum, n) = outcome
        .ranking
        .iter()
        .enumerate()
        .filter(|&(_, &r)| outcome.labels[r] == c)
        .fold((0usize, 0usize), |(s, n), (pos, _)| (s + pos + 1, n + 1));
    sum as f64 / n as f64
}

/// Mean and population standard deviation of effective message lengths.
pub fn message_length_stats(outcomes: &[GameOutcome]) -> (f64, f64) {
    mean_std(outcomes.iter().map(|o| o.message_len as f64))
}

pub fn rotation_accuracy(outcomes: &[GameOutcome]) -> Option<f64> {
    let rs: Vec<_> = outcomes.iter().filter_map(|o| o.rotation).collect();
    if rs.is_empty() {
        return None;
    }
    Some(rs.iter().filter(|r| r.label == r.predicted).count() as f64 / rs.len() as f64)
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// All measures for one evaluation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub comm_rate_top1: f64,
    pub comm_rate_top5: f64,
    pub target_class_in_top5: f64,
    pub target_class_mean_rank: f64,
    pub message_length_mean: f64,
    pub message_length_std: f64,
    pub rotation_accuracy: Option<f64>,
}

impl RunMetrics {
    pub fn from_outcomes(outcomes: &[GameOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        let (lm, ls) = message_length_stats(outcomes);
        Self {
            comm_rate_top1: topk_comm_rate(outcomes, 1),
            comm_rate_top5: topk_comm_rate(outcomes, 5),
            target_class_in_top5: outcomes.iter().map(|o| count_target_class_topk(o, 5) as f64).sum::<f64>() / n,
            target_class_mean_rank: outcomes.iter().map(mean_rank_target_class).sum::<f64>() / n,
            message_length_mean: lm,
            message_length_std: ls,
            rotation_accuracy: rotation_accuracy(outcomes),
        }
    }
}

/// Means over evaluation runs with across-run (population) standard
/// deviations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean: RunMetrics,
    pub std: RunMetrics,
    pub runs: Vec<RunMetrics>,
    pub games_per_run: usize,
}

impl MetricsReport {
    pub fn aggregate(runs: Vec<RunMetrics>, games_per_run: usize) -> Self {
        let field = |f: fn(&RunMetrics) -> f64| mean_std(runs.iter().map(f));
        let (t1, t1s) = field(|r| r.comm_rate_top1);
        let (t5, t5s) = field(|r| r.comm_rate_top5);
        let (c5, c5s) = field(|r| r.target_class_in_top5);
        let (mr, mrs) = field(|r| r.target_class_mean_rank);
        let (lm, lms) = field(|r| r.message_length_mean);
        let (ls, lss) = field(|r| r.message_length_std);
        let rot: Vec<f64> = runs.iter().filter_map(|r| r.rotation_accuracy).collect();
        let (ra, ras) = if rot.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(rot.into_iter());
            (Some(m), Some(s))
        };
        Self {
            mean: RunMetrics {
                comm_rate_top1: t1,
                comm_rate_top5: t5,
                target_class_in_top5: c5,
                target_class_mean_rank: mr,
                message_length_mean: lm,
                message_length_std: ls,
                rotation_accuracy: ra,
            },
            std: RunMetrics {
                comm_rate_top1: t1s,
                comm_rate_top5: t5s,
                target_class_in_top5: c5s,
                target_class_mean_rank: mrs,
                message_length_mean: lms,
                message_length_std: lss,
                rotation_accuracy: ras,
            },
            runs,
            games_per_run,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub batch_size: usize,
    pub n_classes: usize,
    pub k: usize,
    /// Expected number of candidates sharing the target class, target included.
    pub expected_same_class: f64,
    pub class_only_top1: f64,
    pub class_only_topk: f64,
    pub ideal_mean_rank: f64,
    pub hashing_mean_rank: f64,
    pub hashing_topk_class_count: f64,
    pub hashing_games: usize,
}

pub const HASHING_GAMES: usize = 100_000;

/// Reference values for a batch of `b` candidates over `n_classes` balanced
/// classes. Class-only rates use the ratio of expectations `k / m`.
pub fn analytic_baselines(b: usize, n_classes: usize, k: usize) -> Result<Baselines> {
    if b < 2 {
        return Err(Error::config("batch_size", "need at least two candidates"));
    }
    if n_classes < 2 {
        return Err(Error::config("n_classes", "need at least two classes"));
    }
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    let m = 1.0 + (b - 1) as f64 / n_classes as f64;
    let (hashing_mean_rank, hashing_topk_class_count) = hashing_monte_carlo(b, n_classes, k, HASHING_GAMES, 0);
    Ok(Baselines {
        batch_size: b,
        n_classes,
        k,
        expected_same_class: m,
        class_only_top1: (1.0 / m).min(1.0),
        class_only_topk: (k as f64 / m).min(1.0),
        ideal_mean_rank: (m + 1.0) / 2.0,
        hashing_mean_rank,
        hashing_topk_class_count,
        hashing_games: HASHING_GAMES,
    })
}

/// Simulated hashing protocol: the target is ranked first and every other
/// rank holds a distractor whose class is uniform and independent. Returns
/// the mean target-class rank and mean top-`k` target-class count.
pub fn hashing_monte_carlo(b: usize, n_classes: usize, k: usize, games: usize, seed: u64) -> (f64, f64) {
    const CHUNK: usize = 1000;
    let chunks = games.div_ceil(CHUNK);
    let partial = par::map_range(chunks, |c| {
        let mut rng = sub_rng(seed, &[c as u64]);
        let n = CHUNK.min(games - c * CHUNK);
        let (mut rank_sum, mut count_sum) = (0.0, 0.0);
        for _ in 0..n {
            let (mut ranks, mut same, mut topk) = (1usize, 1usize, 1usize);
            for rank in 2..=b {
                if rng.random_range(0..n_classes) == 0 {
                    ranks += rank;
                    same += 1;
                    if rank <= k {
                        topk += 1;
                    }
                }
            }
            rank_sum += ranks as f64 / same as f64;
            count_sum += topk as f64;
        }
        (rank_sum, count_sum)
    });
    let (r, c) = partial.into_iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (r / games as f64, c / games as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn outcome(ranking: Vec<usize>, labels: Vec<u8>, target: usize) -> GameOutcome {
        GameOutcome::new(ranking, labels, target, 5).unwrap()
    }

    fn random_outcome(rng: &mut crate::rng::Rng) -> GameOutcome {
        let n = rng.random_range(2..40);
        let mut ranking: Vec<usize> = (0..n).collect();
        ranking.shuffle(rng);
        let labels = (0..n).map(|_| rng.random_range(0..4u8)).collect();
        let len = rng.random_range(1..=5);
        GameOutcome::new(ranking, labels, rng.random_range(0..n), len).unwrap()
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let s = ndarray::array![0.5, 2.0, 0.5, 2.0, -1.0];
        assert_eq!(rank_candidates(s.view()), vec![1, 3, 0, 2, 4]);
        let o = GameOutcome::from_scores(s.view(), vec![0; 5], 3, 2).unwrap();
        assert_eq!(o.rank_of(3), 2);
    }

    #[test]
    fn outcome_validation() {
        assert!(GameOutcome::new(vec![0, 0], vec![1, 1], 0, 1).is_err());
        assert!(GameOutcome::new(vec![0, 1], vec![1, 1], 2, 1).is_err());
        assert!(GameOutcome::new(vec![0, 1], vec![1], 0, 1).is_err());
    }

    #[test]
    fn spec_examples() {
        let perfect: Vec<_> = (0..4).map(|t| outcome(vec![t, (t + 1) % 4, (t + 2) % 4, (t + 3) % 4], vec![0; 4], t)).collect();
        assert_eq!(topk_comm_rate(&perfect, 1), 1.0);

        let ranking: Vec<usize> = (0..8).collect();
        let late = outcome(ranking.clone(), vec![0; 8], 5);
        assert_eq!(topk_comm_rate(std::slice::from_ref(&late), 5), 0.0);

        // top-5 labels [c, c, x, x, c]
        let o = outcome(ranking.clone(), vec![2, 2, 7, 7, 2, 7, 7, 7], 0);
        assert_eq!(count_target_class_topk(&o, 5), 3);

        let all_same = outcome(ranking.clone(), vec![1; 8], 0);
        assert_eq!(count_target_class_topk(&all_same, 5), 5);

        let mut labels = vec![9u8; 20];
        labels[..14].fill(3);
        let first14 = outcome((0..20).collect(), labels, 0);
        assert_eq!(mean_rank_target_class(&first14), 7.5);

        let mut labels = vec![1u8; 6];
        labels[4] = 0;
        let single = outcome(vec![2, 3, 4, 0, 1, 5], labels, 4);
        assert_eq!(mean_rank_target_class(&single), 3.0);
    }

    #[test]
    fn message_length_examples() {
        let mk = |l| GameOutcome::new(vec![0, 1], vec![0, 1], 0, l).unwrap();
        assert_eq!(message_length_stats(&[mk(5), mk(5), mk(5)]), (5.0, 0.0));
        assert_eq!(message_length_stats(&[mk(3), mk(5)]), (4.0, 1.0));
    }

    #[test]
    fn baselines_match_closed_forms() {
        let b = analytic_baselines(128, 10, 5).unwrap();
        assert!((b.expected_same_class - 13.7).abs() < 1e-12);
        assert!((b.class_only_top1 - 0.073).abs() < 5e-4);
        assert!((b.class_only_topk - 0.365).abs() < 5e-4);
        assert!((b.ideal_mean_rank - 7.35).abs() < 1e-12);
        assert!((b.hashing_mean_rank - 60.0).abs() < 1.0, "{}", b.hashing_mean_rank);
        assert!((b.hashing_topk_class_count - 1.4).abs() < 0.05);
        assert!(analytic_baselines(1, 10, 5).is_err());
        assert!(analytic_baselines(8, 1, 5).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic_across_schedulers() {
        let a = hashing_monte_carlo(32, 10, 5, 5000, 3);
        par::set_sequential(true);
        let b = hashing_monte_carlo(32, 10, 5, 5000, 3);
        par::set_sequential(false);
        assert_eq!(a, b);
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = seeded(11);
        let outcomes: Vec<_> = (0..1000).map(|_| random_outcome(&mut rng)).collect();
        for k in [1, 3, 5] {
            let mut hits = 0;
            for o in &outcomes {
                let mut in_top = false;
                for pos in 0..k.min(o.candidates()) {
                    if o.ranking()[pos] == o.target() {
                        in_top = true;
                    }
                }
                hits += in_top as usize;
            }
            assert_eq!(topk_comm_rate(&outcomes, k), hits as f64 / 1000.0);
        }
        for o in &outcomes {
            let mut ranks = Vec::new();
            for cand in 0..o.candidates() {
                if o.labels()[cand] == o.target_class() {
                    ranks.push(o.rank_of(cand));
                }
            }
            let top5 = ranks.iter().filter(|&&r| r <= 5).count();
            assert_eq!(count_target_class_topk(o, 5), top5);
            let mean = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
            assert_eq!(mean_rank_target_class(o), mean);
        }
    }

    #[test]
    fn report_aggregates_runs() {
        let r1 = RunMetrics {
            comm_rate_top1: 0.2,
            rotation_accuracy: Some(0.5),
            ..Default::default()
        };
        let r2 = RunMetrics {
            comm_rate_top1: 0.4,
            rotation_accuracy: Some(0.7),
            ..Default::default()
        };
        let rep = MetricsReport::aggregate(vec![r1, r2], 10);
        assert!((rep.mean.comm_rate_top1 - 0.3).abs() < 1e-15);
        assert!((rep.std.comm_rate_top1 - 0.1).abs() < 1e-15);
        assert!((rep.mean.rotation_accuracy.unwrap() - 0.6).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn aggregates_ignore_outcome_order(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let mut outcomes: Vec<_> = (0..30).map(|_| random_outcome(&mut rng)).collect();
            let a = RunMetrics::from_outcomes(&outcomes);
            outcomes.shuffle(&mut rng);
            let b = RunMetrics::from_outcomes(&outcomes);
            prop_assert!((a.comm_rate_top1 - b.comm_rate_top1).abs() < 1e-12);
            prop_assert!((a.target_class_mean_rank - b.target_class_mean_rank).abs() < 1e-9);
            prop_assert!((a.target_class_in_top5 - b.target_class_in_top5).abs() < 1e-12);
            prop_assert!((a.message_length_std - b.message_length_std).abs() < 1e-12);
        }

        #[test]
        fn topk_is_monotone_and_counts_target(seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let outcomes: Vec<_> = (0..20).map(|_| random_outcome(&mut rng)).collect();
            let mut prev = 0.0;
            for k in 1..=40 {
                let r = topk_comm_rate(&outcomes, k);
                prop_assert!(r >= prev);
                prev = r;
            }
            for o in &outcomes {
                if o.rank_of(o.target()) <= 5 {
                    prop_assert!(count_target_class_topk(o, 5) >= 1);
                }
                let mr = mean_rank_target_class(o);
                prop_assert!(mr >= 1.0 && mr <= o.candidates() as f64);
            }
        }
    }
}
