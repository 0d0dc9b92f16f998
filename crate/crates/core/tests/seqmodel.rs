mod common;

use common::{fixture, rng};
use molrisk::mrt::{sample_candidates, MrtConfig};
use molrisk::rng::StreamKey;
use molrisk::seqmodel::{Checkpoint, SmilesModel, EOS};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_step_is_a_distribution(
        seed in 0u64..50,
        target in prop::collection::vec(3usize..12, 0..15),
        item in 0usize..2,
    ) {
        let p = fixture::params(seed);
        let h = p.encode(&fixture::features()[item]).unwrap();
        let mut target = target;
        target.push(EOS);
        let tf = p.teacher_forced(&h, &target).unwrap();
        prop_assert_eq!(tf.trace.steps(), target.len());
        let mut total = 0.0;
        for (t, &y) in target.iter().enumerate() {
            let probs = tf.trace.probs(t);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&x| x > 0.0));
            prop_assert!((probs[y].ln() - tf.token_logprobs[t]).abs() < 1e-12);
            total += tf.token_logprobs[t];
        }
        prop_assert!((total - tf.total).abs() < 1e-12);
    }

    #[test]
    fn sampled_logprob_is_the_temperature_one_score(
        seed in 0u64..50,
        tau in 0.2..2.0f64,
        key in any::<u64>(),
    ) {
        let p = fixture::params(seed);
        let h = p.encode(&fixture::features()[0]).unwrap();
        let d = p.sample_decode(&h, 6, tau, 12, StreamKey(key));
        for i in 0..6 {
            let tf = p.teacher_forced(&h, &d.target(i)).unwrap();
            prop_assert!((tf.total - d.logprobs[i]).abs() < 1e-12);
            prop_assert!(!d.sequences[i].contains(&EOS));
            prop_assert_eq!(d.truncated[i], d.sequences[i].len() == 12);
        }
    }
}

#[test]
fn sample_streams_do_not_depend_on_sample_count() {
    let p = fixture::params(3);
    let h = p.encode(&fixture::features()[1]).unwrap();
    let few = p.sample_decode(&h, 3, 0.7, 10, StreamKey(5));
    let many = p.sample_decode(&h, 9, 0.7, 10, StreamKey(5));
    assert_eq!(few.sequences[..], many.sequences[..3]);
    assert_eq!(few.logprobs[..], many.logprobs[..3]);
}

#[test]
fn candidates_do_not_depend_on_batch_composition() {
    let p = fixture::params(4);
    let cfg = MrtConfig {
        n_samples: 5,
        max_len: 10,
        ..MrtConfig::default()
    };
    let f = fixture::features();
    let both = sample_candidates(&p, &fixture::vocab(), &f, &["CCO", "CN"], &cfg, StreamKey(9)).unwrap();
    let first = sample_candidates(&p, &fixture::vocab(), &f[..1], &["CCO"], &cfg, StreamKey(9)).unwrap();
    assert_eq!(both.items[0], first.items[0]);
    // Replacing item 0 leaves item 1 untouched.
    let other = vec![vec![0.0, 0.0, -0.9], f[1].clone()];
    let swapped = sample_candidates(&p, &fixture::vocab(), &other, &["N", "CN"], &cfg, StreamKey(9)).unwrap();
    assert_ne!(swapped.items[0], both.items[0]);
    assert_eq!(swapped.items[1], both.items[1]);
}

#[test]
fn greedy_picks_the_most_likely_token_at_every_step() {
    for seed in 0..10 {
        let p = fixture::params(seed);
        let h = p.encode(&fixture::features()[(seed % 2) as usize]).unwrap();
        let (seq, truncated) = p.greedy_decode(&h, 20);
        let mut target = seq.clone();
        if !truncated {
            target.push(EOS);
        }
        let tf = p.teacher_forced(&h, &target).unwrap();
        for (t, &y) in target.iter().enumerate() {
            let probs = tf.trace.probs(t);
            let best = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(probs[y], best, "seed {seed} step {t}");
        }
    }
}

#[test]
fn checkpoint_round_trips_through_bytes() {
    let mut params = fixture::params(6);
    // Values exactly representable in f32 survive the round trip unchanged.
    let mut r = rng(6);
    for x in params.as_mut_slice() {
        *x = f64::from(r.random_range(-1.0f32..1.0));
    }
    let model = SmilesModel {
        vocab: fixture::vocab(),
        params,
    };
    let meta = vec![("note".to_string(), "a b\nc".to_string())];
    let ck = model.to_checkpoint(&meta);
    let mut bytes = Vec::new();
    ck.write_to(&mut bytes).unwrap();
    let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.meta("note"), Some("a b\nc"));
    assert_eq!(SmilesModel::from_checkpoint(&back).unwrap(), model);

    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(bytes, again);

    assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Checkpoint::read_from(bad.as_slice()).is_err());
}
