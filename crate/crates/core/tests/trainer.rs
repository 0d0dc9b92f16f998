mod common;

use common::{central_difference, fixture, relative_error, rng};
use molrisk::data::Example;
use molrisk::experiment::{prepare, Prepared};
use molrisk::mrt::{compute_mrt_loss, MrtConfig};
use molrisk::rng::StreamKey;
use molrisk::similarity::Similarity;
use molrisk::seqmodel::{Gradients, EOS, PAD};
use molrisk::trainer::{
    interleave_k, lr_at, mle_loss, train, AdamW, AuxObjective, Silent, StepKind, TrainConfig,
    TrainData, TrainOutcome, ADAM_EPS, BETA1, BETA2,
};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::Rng;

fn tiny_config(aux: AuxObjective) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        mle_batch: 4,
        mrt_batch: 2,
        aux,
        lr: 5e-3,
        n_samples: 3,
        max_len: 20,
        embed_dim: 4,
        hidden_dim: 8,
        ..TrainConfig::default()
    }
}

fn prepared() -> Prepared {
    prepare(&TrainConfig::default()).unwrap()
}

fn run(cfg: &TrainConfig, p: &Prepared, mle: &[Example], mrt: &[Example]) -> TrainOutcome {
    let data = TrainData {
        vocab: &p.vocab,
        mle,
        mrt,
        features: &p.features,
    };
    train(cfg, &Similarity::from_kind(cfg.sim), data, &mut Silent).unwrap()
}

#[test]
fn aux_steps_follow_the_interleave_schedule() {
    let p = prepared();
    for (n_mle, n_mrt, mle_batch, mrt_batch) in [(40, 10, 4, 2), (41, 10, 4, 2), (12, 30, 4, 3), (24, 5, 3, 5)] {
        let mut cfg = tiny_config(AuxObjective::Mle);
        cfg.mle_batch = mle_batch;
        cfg.mrt_batch = mrt_batch;
        let out = run(&cfg, &p, &p.mle[..n_mle], &p.mrt[..n_mrt]);

        // Reference schedule enumerated from the definition.
        let t_total = n_mle.div_ceil(mle_batch);
        let t_mrt = n_mrt.div_ceil(mrt_batch);
        let k = std::cmp::max(1, t_total / t_mrt);
        assert_eq!(interleave_k(n_mle, mle_batch, n_mrt, mrt_batch), k);
        let mut expected = Vec::new();
        for epoch in 1..=cfg.epochs {
            for t in 1..=t_total {
                let aux = epoch > cfg.warmup_epochs && t % k == 0;
                expected.push((epoch, t, if aux { StepKind::MleAux } else { StepKind::Mle }));
            }
        }
        let got: Vec<_> = out.log.records.iter().map(|r| (r.epoch, r.t, r.kind)).collect();
        assert_eq!(got, expected, "sizes {n_mle}/{n_mrt}");
        let steps: Vec<usize> = out.log.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, (1..=expected.len()).collect::<Vec<_>>());
    }
}

#[test]
fn training_is_deterministic() {
    let p = prepared();
    let cfg = tiny_config(AuxObjective::Mrt);
    let a = run(&cfg, &p, &p.mle[..24], &p.mrt[..8]);
    let b = run(&cfg, &p, &p.mle[..24], &p.mrt[..8]);
    assert!(a.log.count(StepKind::MleMrt) > 0);
    assert_eq!(a.log.to_text(), b.log.to_text());
    assert_eq!(a.model, b.model);
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(run(&other, &p, &p.mle[..24], &p.mrt[..8]).model, a.model);
}

#[test]
fn zero_weight_aux_matches_plain_mle() {
    let p = prepared();
    let base = run(&tiny_config(AuxObjective::None), &p, &p.mle[..24], &p.mrt[..8]);
    for aux in [AuxObjective::Mle, AuxObjective::Mrt] {
        let mut cfg = tiny_config(aux);
        cfg.lambda = 0.0;
        let out = run(&cfg, &p, &p.mle[..24], &p.mrt[..8]);
        assert_eq!(out.model.params.as_slice(), base.model.params.as_slice(), "{aux:?}");
        for (a, b) in out.log.records.iter().zip(&base.log.records) {
            assert_eq!(a.mle_loss.to_bits(), b.mle_loss.to_bits());
            assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
        }
    }
}

fn target(s: &[usize]) -> Vec<usize> {
    let mut t = s.to_vec();
    t.push(EOS);
    t
}

fn fixture_batch() -> Vec<(Vec<f64>, Vec<usize>)> {
    let f = fixture::features();
    vec![
        (f[0].clone(), target(&[3, 3, 5])),
        (f[1].clone(), target(&[4, 8, 3, 9, 3])),
        (vec![0.1, 0.9, -0.4], target(&[])),
    ]
}

fn as_refs(b: &[(Vec<f64>, Vec<usize>)]) -> Vec<(&[f64], &[usize])> {
    b.iter().map(|(f, t)| (f.as_slice(), t.as_slice())).collect()
}

#[test]
fn mle_gradient_matches_central_differences() {
    let p = fixture::params(11);
    let batch = fixture_batch();
    let refs = as_refs(&batch);
    for eps in [0.0, 0.1] {
        let mut g = Gradients::zeros(*p.config());
        mle_loss(&p, &refs, eps, Some((&mut g, 1.0))).unwrap();
        for i in sample(&mut rng(11), p.len(), 80) {
            let numeric = central_difference(&p, i, 1e-5, |q| mle_loss(q, &refs, eps, None).unwrap().loss);
            let err = relative_error(g.as_slice()[i], numeric);
            assert!(err <= 1e-4, "ε={eps} coordinate {i}: {} vs {numeric}", g.as_slice()[i]);
        }
    }
}

#[test]
fn batch_gradient_is_the_position_weighted_sum_of_items() {
    let p = fixture::params(12);
    let batch = fixture_batch();
    let refs = as_refs(&batch);
    let mut whole = Gradients::zeros(*p.config());
    let all = mle_loss(&p, &refs, 0.1, Some((&mut whole, 1.0))).unwrap();

    let mut summed = Gradients::zeros(*p.config());
    let mut loss = 0.0;
    for item in &refs {
        let n = item.1.len() as f64 / all.positions as f64;
        let one = mle_loss(&p, &[*item], 0.1, Some((&mut summed, n))).unwrap();
        loss += n * one.loss;
    }
    assert!((loss - all.loss).abs() < 1e-12);
    for (a, b) in whole.as_slice().iter().zip(summed.as_slice()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn accumulated_mle_and_mrt_gradients_equal_the_combined_objective() {
    let p = fixture::params(13);
    let batch = fixture_batch();
    let refs = as_refs(&batch);
    let cfg = MrtConfig {
        n_samples: 6,
        temperature: 1.0,
        max_len: 8,
        ..MrtConfig::default()
    };
    let feats = fixture::features();
    let truths = ["CCO", "c1ccc1"];
    let key = StreamKey(21);
    let lambda = 0.1;

    let mut acc = Gradients::zeros(*p.config());
    mle_loss(&p, &refs, 0.1, Some((&mut acc, 1.0))).unwrap();
    compute_mrt_loss(&p, &fixture::vocab(), &feats, &truths, &cfg, key, Some((&mut acc, lambda))).unwrap();

    let mut g_mle = Gradients::zeros(*p.config());
    mle_loss(&p, &refs, 0.1, Some((&mut g_mle, 1.0))).unwrap();
    let mut g_mrt = Gradients::zeros(*p.config());
    compute_mrt_loss(&p, &fixture::vocab(), &feats, &truths, &cfg, key, Some((&mut g_mrt, 1.0))).unwrap();
    for ((a, m), r) in acc.as_slice().iter().zip(g_mle.as_slice()).zip(g_mrt.as_slice()) {
        assert!((a - (m + lambda * r)).abs() < 1e-10);
    }
}

#[test]
fn padding_after_the_target_is_ignored() {
    let p = fixture::params(14);
    let batch = fixture_batch();
    let padded: Vec<(Vec<f64>, Vec<usize>)> = batch
        .iter()
        .map(|(f, t)| {
            let mut t = t.clone();
            t.extend([PAD, PAD, 5, PAD]);
            (f.clone(), t)
        })
        .collect();
    let (mut ga, mut gb) = (Gradients::zeros(*p.config()), Gradients::zeros(*p.config()));
    let a = mle_loss(&p, &as_refs(&batch), 0.1, Some((&mut ga, 1.0))).unwrap();
    let b = mle_loss(&p, &as_refs(&padded), 0.1, Some((&mut gb, 1.0))).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga.as_slice(), gb.as_slice());
}

#[test]
fn adamw_matches_a_scalar_reference() {
    let mut p = fixture::params(15);
    let mut opt = AdamW::new(&p);
    let mut r = rng(15);
    let n = p.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut theta = p.as_slice().to_vec();
    for step in 1..=5 {
        let mut g = Gradients::zeros(*p.config());
        for x in g.as_mut_slice() {
            *x = r.random_range(-1.0..1.0);
        }
        let (lr, wd) = (1e-2 * step as f64, 0.05);
        opt.step(&mut p, &g, lr, wd).unwrap();
        for i in 0..n {
            let gi = g.as_slice()[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let mhat = m[i] / (1.0 - BETA1.powi(step));
            let vhat = v[i] / (1.0 - BETA2.powi(step));
            theta[i] = theta[i] * (1.0 - lr * wd) - lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        for (a, b) in p.as_slice().iter().zip(&theta) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

proptest! {
    #[test]
    fn learning_rate_stays_within_bounds(
        total in 1usize..5000,
        frac in 0.0..0.5f64,
        base in 1e-5..1.0f64,
        cosine in any::<bool>(),
    ) {
        let warmup = (frac * total as f64).ceil() as usize;
        let mut prev_peak = 0.0;
        for step in 1..=total {
            let lr = lr_at(step, total, base, frac, cosine);
            prop_assert!((0.0..=base * (1.0 + 1e-12)).contains(&lr));
            if step < warmup {
                prop_assert!(lr >= prev_peak);
                prev_peak = lr;
            }
        }
        if cosine && total > warmup {
            prop_assert!(lr_at(total, total, base, frac, cosine) < 1e-12);
        }
    }
}
