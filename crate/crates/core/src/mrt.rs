//! Minimum risk training loss.
//!
//! For each item, N candidates are sampled from the model at temperature τ,
//! scored with the composite reward R, and re-scored with teacher-forced
//! log-probabilities at temperature 1. With `Q = softmax(α·log p)` over the
//! candidates, the item loss is `Σ_i Q_i·(1 − R_i)` and the batch loss is the
//! mean over items. Rewards are constants; gradients flow through Q into the
//! decoder and the encoder.

use std::collections::HashMap;

use thiserror::Error;

use crate::reward::{
    compute_rewards_batch, Normalization, RewardBreakdown, RewardError, RewardWeights,
};
use crate::rng::StreamKey;
use crate::seqmodel::{Gradients, InputGrads, ModelParams, SeqModelError, TeacherForced, Vocab};
use crate::similarity::{Similarity, SimilarityKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MrtError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("{features} feature vectors but {truths} ground truths")]
    BatchMismatch { features: usize, truths: usize },
    #[error("invalid MRT configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Model(#[from] SeqModelError),
}

#[derive(Debug, Clone)]
pub struct MrtConfig {
    pub n_samples: usize,
    pub temperature: f64,
    /// Sharpness α of the candidate weights.
    pub alpha: f64,
    pub max_len: usize,
    pub similarity: Similarity,
    pub weights: RewardWeights,
}

impl Default for MrtConfig {
    fn default() -> Self {
        Self {
            n_samples: 32,
            temperature: 0.5,
            alpha: 1.0,
            max_len: 500,
            similarity: Similarity::from_kind(SimilarityKind::Edit),
            weights: RewardWeights::default(),
        }
    }
}

impl MrtConfig {
    pub fn validate(&self) -> Result<(), MrtError> {
        let bad = |m: &str| Err(MrtError::InvalidConfig(m.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// `softmax(α·logprobs)`, max-subtracted.
pub fn sharpen_weights(logprobs: &[f64], alpha: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logprobs.iter().map(|lp| alpha * lp).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Risk `Σ Q_i·c_i` of one item and its gradient with respect to each
/// candidate log-probability: `α·Q_i·(c_i − risk)`.
pub fn expected_risk(logprobs: &[f64], costs: &[f64], alpha: f64) -> (f64, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(logprobs.len(), costs.len());
    let q = sharpen_weights(logprobs, alpha);
    let risk: f64 = q.iter().zip(costs).map(|(q, c)| q * c).sum();
    let grad = q
        .iter()
        .zip(costs)
        .map(|(q, c)| alpha * q * (c - risk))
        .collect();
    (risk, q, grad)
}

/// Shannon entropy (nats) of a distribution.
pub fn entropy(q: &[f64]) -> f64 {
    -q.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Detokenized sample; special tokens appear as `<name>`.
    pub text: String,
    /// Token ids scored by teacher forcing: the sample plus EOS unless it
    /// was truncated.
    pub target: Vec<usize>,
    pub truncated: bool,
    /// Temperature-1 log-probability reported by the sampler.
    pub sample_logprob: f64,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemCandidates {
    pub truth: String,
    pub candidates: Vec<Candidate>,
}

/// Phase 1 and 2 output: sampled and rewarded candidates for each item.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub items: Vec<ItemCandidates>,
}

/// Per-item scoring detail.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemLoss {
    pub logprobs: Vec<f64>,
    pub weights: Vec<f64>,
    pub loss: f64,
}

/// Per-step summary for the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MrtDiagnostics {
    pub mean_reward: f64,
    pub validity_rate: f64,
    pub exact_rate: f64,
    pub mean_q_entropy: f64,
    /// Distinct candidates per item, averaged.
    pub mean_unique: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrtLoss {
    pub loss: f64,
    pub items: Vec<ItemLoss>,
    /// `d(scale·loss)/d features` per item; zero when no gradients were
    /// requested.
    pub dfeatures: Vec<Vec<f64>>,
    pub diagnostics: MrtDiagnostics,
}

/// Phases 1 and 2. Item `b` samples from `key.child(b)`; rewards are cached
/// per distinct string within an item.
pub fn sample_candidates<S: AsRef<str>>(
    params: &ModelParams,
    vocab: &Vocab,
    features: &[Vec<f64>],
    truths: &[S],
    config: &MrtConfig,
    key: StreamKey,
) -> Result<CandidateSet, MrtError> {
    Ok(sample(params, vocab, features, truths, config, key, false)?.0)
}

/// Forward passes of every candidate, per item, as sampled.
type Traces = Vec<Vec<TeacherForced>>;

fn sample<S: AsRef<str>>(
    params: &ModelParams,
    vocab: &Vocab,
    features: &[Vec<f64>],
    truths: &[S],
    config: &MrtConfig,
    key: StreamKey,
    traced: bool,
) -> Result<(CandidateSet, Traces), MrtError> {
    check_batch(features.len(), truths.len())?;
    config.validate()?;
    let decoder = params.decoder();
    let mut items = Vec::with_capacity(features.len());
    let mut traces = Vec::new();
    for (b, (f, truth)) in features.iter().zip(truths).enumerate() {
        let truth = truth.as_ref();
        let hidden = params.encode(f)?;
        let (n, tau, key) = (config.n_samples, config.temperature, key.child(b as u64));
        let d = if traced {
            let (d, t) = decoder.sample_decode_traced(&hidden, n, tau, config.max_len, key);
            traces.push(t);
            d
        } else {
            decoder.sample_decode(&hidden, n, tau, config.max_len, key)
        };
        let texts: Vec<Option<String>> = d
            .sequences
            .iter()
            .map(|s| vocab.detokenize(s).ok())
            .collect();
        let mut distinct: Vec<&str> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for t in texts.iter().flatten() {
            if !seen.contains_key(t.as_str()) {
                seen.insert(t, distinct.len());
                distinct.push(t);
            }
        }
        let rewards = compute_rewards_batch(
            &distinct,
            truth,
            &config.similarity,
            config.weights,
            Normalization::TRAINING,
        )?;
        let candidates = (0..config.n_samples)
            .map(|i| {
                let (text, reward) = match &texts[i] {
                    Some(t) => (t.clone(), rewards[seen[t.as_str()]]),
                    None => (vocab.detokenize_lossy(&d.sequences[i]), RewardBreakdown::INVALID),
                };
                Candidate {
                    text,
                    target: d.target(i),
                    truncated: d.truncated[i],
                    sample_logprob: d.logprobs[i],
                    reward,
                }
            })
            .collect();
        items.push(ItemCandidates {
            truth: truth.to_string(),
            candidates,
        });
    }
    Ok((CandidateSet { items }, traces))
}

/// Phases 3 and 4 on a fixed candidate set. When `grads` is given,
/// `scale · ∇loss` is accumulated into it (through the encoder as well).
///
/// Identical candidates within an item are scored once and their weight
/// gradients summed, which is algebraically the same as scoring each copy.
pub fn score_candidates(
    params: &ModelParams,
    features: &[Vec<f64>],
    set: &CandidateSet,
    alpha: f64,
    grads: Option<(&mut Gradients, f64)>,
) -> Result<MrtLoss, MrtError> {
    score(params, features, set, alpha, grads, None)
}

fn score(
    params: &ModelParams,
    features: &[Vec<f64>],
    set: &CandidateSet,
    alpha: f64,
    mut grads: Option<(&mut Gradients, f64)>,
    traces: Option<Traces>,
) -> Result<MrtLoss, MrtError> {
    check_batch(features.len(), set.items.len())?;
    let mut traces = traces.map(Vec::into_iter);
    let batch = features.len() as f64;
    let mut items = Vec::with_capacity(features.len());
    let mut dfeatures = Vec::with_capacity(features.len());
    let mut diag = MrtDiagnostics::default();
    let mut total = 0.0;
    let decoder = params.decoder();
    let mut inputs = grads.as_ref().map(|_| InputGrads::new(params));
    for (f, item) in features.iter().zip(&set.items) {
        if item.candidates.is_empty() {
            return Err(MrtError::InvalidConfig("item without candidates".into()));
        }
        let hidden = params.encode(f)?;
        // Index of the first candidate carrying each distinct target.
        let mut unique: Vec<usize> = Vec::new();
        let mut index: HashMap<&[usize], usize> = HashMap::new();
        let slot: Vec<usize> = item
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                *index.entry(&c.target).or_insert_with(|| {
                    unique.push(i);
                    unique.len() - 1
                })
            })
            .collect();
        let scored: Vec<TeacherForced> = match traces.as_mut().and_then(Iterator::next) {
            Some(item_traces) => {
                let mut item_traces: Vec<Option<TeacherForced>> = item_traces.into_iter().map(Some).collect();
                unique
                    .iter()
                    .map(|&i| item_traces[i].take().expect("one trace per candidate"))
                    .collect()
            }
            None => unique
                .iter()
                .map(|&i| decoder.teacher_forced(&hidden, &item.candidates[i].target))
                .collect::<Result<_, _>>()?,
        };
        let logprobs: Vec<f64> = slot.iter().map(|&u| scored[u].total).collect();
        let costs: Vec<f64> = item.candidates.iter().map(|c| 1.0 - c.reward.total).collect();
        let (loss, weights, dlp) = expected_risk(&logprobs, &costs, alpha);
        total += loss;

        let n = item.candidates.len() as f64;
        diag.mean_reward += item.candidates.iter().map(|c| c.reward.total).sum::<f64>() / n;
        diag.validity_rate += item.candidates.iter().filter(|c| c.reward.valid).count() as f64 / n;
        diag.exact_rate += item.candidates.iter().filter(|c| c.reward.exact).count() as f64 / n;
        diag.mean_q_entropy += entropy(&weights);
        diag.mean_unique += unique.len() as f64;

        match grads.as_mut() {
            Some((g, scale)) => {
                let mut coef = vec![0.0; unique.len()];
                for (&u, d) in slot.iter().zip(&dlp) {
                    coef[u] += d;
                }
                let mut dh = vec![0.0; hidden.len()];
                for (tf, c) in scored.iter().zip(&coef) {
                    let c = *scale * c / batch;
                    if c == 0.0 {
                        continue;
                    }
                    let d = params.backward_decoder_deferred(
                        &tf.trace,
                        &tf.trace.logprob_dlogits(c),
                        g,
                        inputs.as_mut().expect("allocated with grads"),
                    );
                    for (a, b) in dh.iter_mut().zip(&d) {
                        *a += b;
                    }
                }
                dfeatures.push(params.backward_encode(f, &hidden, &dh, g));
            }
            None => dfeatures.push(vec![0.0; f.len()]),
        }
        items.push(ItemLoss {
            logprobs,
            weights,
            loss,
        });
    }
    if let (Some((g, _)), Some(inputs)) = (grads.as_mut(), inputs.as_mut()) {
        inputs.flush(params, g);
    }
    diag.mean_reward /= batch;
    diag.validity_rate /= batch;
    diag.exact_rate /= batch;
    diag.mean_q_entropy /= batch;
    diag.mean_unique /= batch;
    Ok(MrtLoss {
        loss: total / batch,
        items,
        dfeatures,
        diagnostics: diag,
    })
}

/// Sample, reward and score one MRT batch; accumulates `scale · ∇loss` into
/// `grads` when given.
#[allow(clippy::too_many_arguments)]
pub fn compute_mrt_loss<S: AsRef<str>>(
    params: &ModelParams,
    vocab: &Vocab,
    features: &[Vec<f64>],
    truths: &[S],
    config: &MrtConfig,
    key: StreamKey,
    grads: Option<(&mut Gradients, f64)>,
) -> Result<(MrtLoss, CandidateSet), MrtError> {
    let (set, traces) = sample(params, vocab, features, truths, config, key, true)?;
    let loss = score(params, features, &set, config.alpha, grads, Some(traces))?;
    Ok((loss, set))
}

fn check_batch(features: usize, truths: usize) -> Result<(), MrtError> {
    if features == 0 {
        return Err(MrtError::EmptyBatch);
    }
    if features != truths {
        return Err(MrtError::BatchMismatch { features, truths });
    }
    Ok(())
}

/// Result of [`gradient_direction_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionReport {
    /// `log p(better) − log p(worse)` before the step.
    pub initial_gap: f64,
    /// `(step size, gap after one step along −∇loss)`.
    pub gaps: Vec<(f64, f64)>,
}

impl DirectionReport {
    /// Some step size strictly widened the gap.
    pub fn passed(&self) -> bool {
        self.gaps.iter().any(|&(_, g)| g > self.initial_gap)
    }
}

/// Take one plain gradient step on the MRT loss of a two-candidate world
/// and measure how the log-probability gap between the candidates moves.
/// `better` and `worse` are scored targets (EOS-terminated token ids).
#[allow(clippy::too_many_arguments)]
pub fn gradient_direction_check(
    params: &ModelParams,
    features: &[f64],
    better: (&[usize], f64),
    worse: (&[usize], f64),
    alpha: f64,
    steps: &[f64],
) -> Result<DirectionReport, MrtError> {
    let candidate = |target: &[usize], r: f64| Candidate {
        text: String::new(),
        target: target.to_vec(),
        truncated: false,
        sample_logprob: 0.0,
        reward: RewardBreakdown {
            valid: r > 0.0,
            exact: r >= 1.0,
            sim: r,
            total: r,
        },
    };
    let set = CandidateSet {
        items: vec![ItemCandidates {
            truth: String::new(),
            candidates: vec![candidate(better.0, better.1), candidate(worse.0, worse.1)],
        }],
    };
    let feats = vec![features.to_vec()];
    let gap = |p: &ModelParams| -> Result<f64, MrtError> {
        let h = p.encode(features)?;
        Ok(p.teacher_forced(&h, better.0)?.total - p.teacher_forced(&h, worse.0)?.total)
    };
    let mut g = Gradients::zeros(*params.config());
    score_candidates(params, &feats, &set, alpha, Some((&mut g, 1.0)))?;
    let initial_gap = gap(params)?;
    let mut gaps = Vec::with_capacity(steps.len());
    for &eta in steps {
        let mut p = params.clone();
        p.add_scaled(&g, -eta);
        gaps.push((eta, gap(&p)?));
    }
    Ok(DirectionReport { initial_gap, gaps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{ModelConfig, EOS};
    use rand::SeedableRng;

    #[test]
    fn sharpening_examples() {
        assert_eq!(sharpen_weights(&[-3.0; 4], 2.0), vec![0.25; 4]);
        assert_eq!(sharpen_weights(&[-1.0, -50.0, 0.0], 0.0), vec![1.0 / 3.0; 3]);
        let q = sharpen_weights(&[0.0, 2f64.ln()], 1.0);
        assert!((q[0] - 1.0 / 3.0).abs() < 1e-15 && (q[1] - 2.0 / 3.0).abs() < 1e-15);
        let q = sharpen_weights(&[-700.0, 700.0, -1e300], 1.0);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12 && q[1] == 1.0);
    }

    #[test]
    fn risk_arithmetic() {
        let (l, _, _) = expected_risk(&[-1.0, -2.0], &[0.0, 0.0], 1.0);
        assert_eq!(l, 0.0);
        let (l, _, _) = expected_risk(&[-1.0, -9.0, -3.0], &[1.0, 1.0, 1.0], 1.0);
        assert!((l - 1.0).abs() < 1e-15);
        let (l, q, g) = expected_risk(&[-2.0, -2.0], &[0.0, 1.0], 1.0);
        assert_eq!((l, q), (0.5, vec![0.5, 0.5]));
        assert_eq!(g, vec![-0.25, 0.25]);
    }

    #[test]
    fn higher_alpha_concentrates_on_likelier_candidate() {
        let lps = [-1.0, -2.0, -4.0];
        let mut prev = 0.0;
        for alpha in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let q = sharpen_weights(&lps, alpha);
            assert!(q[0] >= prev);
            prev = q[0];
        }
    }

    fn tiny() -> ModelParams {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        ModelParams::init(ModelConfig::new(6, 3, 4, 2), &mut rng)
    }

    #[test]
    fn descent_widens_gap_toward_better_candidate() {
        let p = tiny();
        let report = gradient_direction_check(
            &p,
            &[0.4, -0.2],
            (&[3, 4, EOS], 1.0),
            (&[4, 3, EOS], 0.0),
            1.0,
            &[1e-1, 1e-2, 1e-3],
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.gaps[2].1 > report.initial_gap);
    }

    #[test]
    fn equal_rewards_give_no_gradient() {
        let p = tiny();
        let report = gradient_direction_check(
            &p,
            &[0.4, -0.2],
            (&[3, 4, EOS], 0.6),
            (&[4, 3, EOS], 0.6),
            1.0,
            &[1e-1],
        )
        .unwrap();
        assert_eq!(report.gaps[0].1, report.initial_gap);
    }

    #[test]
    fn reused_sampler_passes_match_separate_phases() {
        let vocab = Vocab::from_corpus(&["CCO", "C=O", "CN"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(ModelConfig::new(vocab.len(), 3, 5, 2), &mut rng);
        let feats = vec![vec![0.3, -0.1], vec![-0.5, 0.8]];
        let truths = ["CCO", "CN"];
        let cfg = MrtConfig {
            n_samples: 6,
            max_len: 5,
            ..MrtConfig::default()
        };
        let mut g1 = Gradients::zeros(*p.config());
        let (joint, set) =
            compute_mrt_loss(&p, &vocab, &feats, &truths, &cfg, StreamKey(4), Some((&mut g1, 1.0))).unwrap();
        let set2 = sample_candidates(&p, &vocab, &feats, &truths, &cfg, StreamKey(4)).unwrap();
        assert_eq!(set, set2);
        let mut g2 = Gradients::zeros(*p.config());
        let split = score_candidates(&p, &feats, &set2, cfg.alpha, Some((&mut g2, 1.0))).unwrap();
        assert_eq!(joint, split);
        assert_eq!(g1.as_slice(), g2.as_slice());
    }

    #[test]
    fn config_validation() {
        assert!(MrtConfig::default().validate().is_ok());
        let bad = MrtConfig {
            temperature: 0.0,
            ..MrtConfig::default()
        };
        assert!(matches!(bad.validate(), Err(MrtError::InvalidConfig(_))));
    }
}
