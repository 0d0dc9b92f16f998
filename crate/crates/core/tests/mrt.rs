mod common;

use common::{central_difference, fixture, relative_error, rng};
use molrisk::mrt::{
    compute_mrt_loss, expected_risk, score_candidates, sharpen_weights, Candidate, CandidateSet,
    ItemCandidates, MrtConfig,
};
use molrisk::reward::{compute_reward, Normalization, RewardWeights};
use molrisk::rng::StreamKey;
use molrisk::seqmodel::{Gradients, ModelParams, Vocab, EOS};
use molrisk::similarity::{Similarity, SimilarityKind};
use proptest::prelude::*;
use rand::seq::index::sample;

fn mrt_loss(p: &ModelParams, set: &CandidateSet, alpha: f64) -> f64 {
    score_candidates(p, &fixture::features(), set, alpha, None).unwrap().loss
}

#[test]
fn mrt_gradient_matches_central_differences() {
    for seed in [1, 2] {
        let p = fixture::params(seed);
        let set = fixture::candidates(&p);
        let alpha = 1.0;
        let mut g = Gradients::zeros(*p.config());
        let out = score_candidates(&p, &fixture::features(), &set, alpha, Some((&mut g, 1.0))).unwrap();
        assert!(g.l2_norm() > 1e-3, "degenerate fixture");

        let coords = sample(&mut rng(seed), p.len(), 80);
        let mut worst: f64 = 0.0;
        for i in coords {
            let numeric = central_difference(&p, i, 1e-5, |q| mrt_loss(q, &set, alpha));
            let err = relative_error(g.as_slice()[i], numeric);
            worst = worst.max(err);
            assert!(err <= 1e-4, "coordinate {i} ({:?}): analytic {} numeric {numeric}", p.locate(i), g.as_slice()[i]);
        }

        // Feature gradients through the encoder.
        let feats = fixture::features();
        for (b, df) in out.dfeatures.iter().enumerate() {
            for k in 0..feats[b].len() {
                let f = |delta: f64| {
                    let mut fs = feats.clone();
                    fs[b][k] += delta;
                    score_candidates(&p, &fs, &set, alpha, None).unwrap().loss
                };
                let numeric = (f(1e-5) - f(-1e-5)) / 2e-5;
                assert!(relative_error(df[k], numeric) <= 1e-4, "feature {b},{k}");
            }
        }
        eprintln!("seed {seed}: worst relative error {worst:.2e}");
    }
}

/// Scores every copy separately, without merging duplicates: the reference
/// for the merged computation.
fn unmerged(p: &ModelParams, features: &[Vec<f64>], set: &CandidateSet, alpha: f64) -> (f64, Gradients) {
    let mut g = Gradients::zeros(*p.config());
    let batch = features.len() as f64;
    let mut total = 0.0;
    for (f, item) in features.iter().zip(&set.items) {
        let h = p.encode(f).unwrap();
        let scored: Vec<_> = item.candidates.iter().map(|c| p.teacher_forced(&h, &c.target).unwrap()).collect();
        let lp: Vec<f64> = scored.iter().map(|s| s.total).collect();
        let costs: Vec<f64> = item.candidates.iter().map(|c| 1.0 - c.reward.total).collect();
        // Softmax and risk written out directly.
        let m = lp.iter().map(|x| alpha * x).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = lp.iter().map(|x| (alpha * x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let risk: f64 = e.iter().zip(&costs).map(|(e, c)| e / z * c).sum();
        total += risk;
        let mut dh = vec![0.0; h.len()];
        for ((s, e), c) in scored.iter().zip(&e).zip(&costs) {
            let coef = alpha * e / z * (c - risk) / batch;
            let d = p.backward_decoder(&s.trace, &s.trace.logprob_dlogits(coef), &mut g);
            for (a, b) in dh.iter_mut().zip(d) {
                *a += b;
            }
        }
        p.backward_encode(f, &h, &dh, &mut g);
    }
    (total / batch, g)
}

fn candidate(target: Vec<usize>, reward: f64) -> Candidate {
    Candidate {
        text: String::new(),
        target,
        truncated: false,
        sample_logprob: 0.0,
        reward: molrisk::reward::RewardBreakdown {
            valid: true,
            exact: false,
            sim: reward,
            total: reward,
        },
    }
}

#[test]
fn duplicates_kept_equal_duplicates_merged() {
    let p = fixture::params(3);
    let v = fixture::vocab();
    let t = |s: &str| {
        let mut ids = v.tokenize(s).unwrap();
        ids.push(EOS);
        ids
    };
    let set = CandidateSet {
        items: vec![
            ItemCandidates {
                truth: "CCO".into(),
                candidates: vec![
                    candidate(t("CC"), 0.3),
                    candidate(t("CO"), 0.6),
                    candidate(t("CC"), 0.3),
                    candidate(t("CC"), 0.3),
                ],
            },
            ItemCandidates {
                truth: "CN".into(),
                candidates: vec![
                    candidate(t("N"), 0.1),
                    candidate(t("C=N"), 0.9),
                    candidate(t("N"), 0.1),
                    candidate(t("CN"), 1.0),
                ],
            },
        ],
    };
    let feats = fixture::features();
    for alpha in [0.5, 1.0, 3.0] {
        let mut g = Gradients::zeros(*p.config());
        let merged = score_candidates(&p, &feats, &set, alpha, Some((&mut g, 1.0))).unwrap();
        let (loss, g_ref) = unmerged(&p, &feats, &set, alpha);
        assert!((merged.loss - loss).abs() < 1e-12);
        for (a, b) in g.as_slice().iter().zip(g_ref.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }

        // Merged-weight identity: summing the Q of copies and scoring each
        // distinct candidate once gives the same risk.
        for (item, il) in set.items.iter().zip(&merged.items) {
            let mut distinct: Vec<(&[usize], f64, f64)> = Vec::new();
            for (c, (&lp, &q)) in item.candidates.iter().zip(il.logprobs.iter().zip(&il.weights)) {
                match distinct.iter_mut().find(|d| d.0 == c.target.as_slice()) {
                    Some(d) => {
                        assert_eq!(d.1, lp);
                        d.2 += q;
                    }
                    None => distinct.push((&c.target, lp, q)),
                }
            }
            let risk: f64 = distinct
                .iter()
                .map(|(target, _, q)| {
                    let c = item.candidates.iter().find(|c| c.target.as_slice() == *target).unwrap();
                    q * (1.0 - c.reward.total)
                })
                .sum();
            assert!((risk - il.loss).abs() < 1e-12);
        }
    }
}

fn real_reward_set(vocab: &Vocab, truth: &str, texts: &[&str], sim: &Similarity) -> CandidateSet {
    let candidates = texts
        .iter()
        .map(|s| {
            let mut target = vocab.tokenize(s).unwrap();
            target.push(EOS);
            Candidate {
                text: s.to_string(),
                target,
                truncated: false,
                sample_logprob: 0.0,
                reward: compute_reward(s, truth, sim, RewardWeights::default(), Normalization::TRAINING).unwrap(),
            }
        })
        .collect();
    CandidateSet {
        items: vec![ItemCandidates {
            truth: truth.into(),
            candidates,
        }],
    }
}

#[test]
fn all_exact_costs_zero_and_all_invalid_costs_one() {
    let p = fixture::params(4);
    let v = fixture::vocab();
    let f = vec![fixture::features()[0].clone()];
    // Isomorphic renderings have identical fingerprints, so every reward is 1.
    let tanimoto = Similarity::from_kind(SimilarityKind::Tanimoto);
    let exact = real_reward_set(&v, "CCO", &["CCO", "OCC", "C(O)C", "CCO"], &tanimoto);
    assert_eq!(score_candidates(&p, &f, &exact, 1.0, None).unwrap().loss, 0.0);
    let invalid = real_reward_set(&v, "CCO", &["C(", "((", "C1", ")"], &tanimoto);
    assert_eq!(score_candidates(&p, &f, &invalid, 1.0, None).unwrap().loss, 1.0);
}

#[test]
fn compute_mrt_loss_is_deterministic() {
    let p = fixture::params(5);
    let cfg = MrtConfig {
        n_samples: 8,
        max_len: 10,
        ..MrtConfig::default()
    };
    let run = || {
        let mut g = Gradients::zeros(*p.config());
        let (loss, set) = compute_mrt_loss(
            &p,
            &fixture::vocab(),
            &fixture::features(),
            &["CCO", "C#N"],
            &cfg,
            StreamKey::new(7, &[3]),
            Some((&mut g, 0.1)),
        )
        .unwrap();
        (loss.loss.to_bits(), set, g)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2.as_slice(), b.2.as_slice());
}

proptest! {
    #[test]
    fn sharpened_weights_are_a_distribution(
        lps in prop::collection::vec(-700.0..700.0f64, 1..40),
        extreme in prop::collection::vec(prop::sample::select(vec![-1e4, -700.0, 0.0, 700.0, 1e4]), 0..4),
        alpha in 0.0..5.0f64,
    ) {
        let all: Vec<f64> = lps.into_iter().chain(extreme).collect();
        let q = sharpen_weights(&all, alpha);
        prop_assert!(q.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn risk_is_a_convex_combination_of_costs(
        pairs in prop::collection::vec((-80.0..0.0f64, 0.0..=1.0f64), 1..40),
        alpha in 0.0..5.0f64,
    ) {
        let (lps, costs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (risk, q, grad) = expected_risk(&lps, &costs, alpha);
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&risk));
        let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(risk >= lo - 1e-12 && risk <= hi + 1e-12);
        // Shifting every logprob by a constant moves no weight.
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-9);
        prop_assert_eq!(q.len(), costs.len());
    }
}
