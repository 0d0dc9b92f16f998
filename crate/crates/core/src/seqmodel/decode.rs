use rand::Rng;

use super::gru::{softmax_in_place, Decoder, TeacherForced, Trace};
use super::params::ModelParams;
use super::vocab::{BOS, EOS};
use crate::rng::StreamKey;

/// Output of [`ModelParams::sample_decode`].
///
/// Sequences hold content tokens only: BOS is stripped and EOS is implied
/// unless the sequence is truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub sequences: Vec<Vec<usize>>,
    /// Σ log p of the emitted tokens (EOS included) at temperature 1.
    pub logprobs: Vec<f64>,
    /// The same sum under the tempered sampling distribution.
    pub tempered_logprobs: Vec<f64>,
    /// No EOS within `max_len` steps.
    pub truncated: Vec<bool>,
}

impl DecodeResult {
    /// Scoring target for sequence `i`: its tokens plus EOS if it ended.
    pub fn target(&self, i: usize) -> Vec<usize> {
        let mut t = self.sequences[i].clone();
        if !self.truncated[i] {
            t.push(EOS);
        }
        t
    }
}

/// Reusable per-step buffers.
struct Cursor {
    h: Vec<f64>,
    next: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    logits: Vec<f64>,
}

impl Cursor {
    fn new(params: &ModelParams, hidden: &[f64]) -> Self {
        let hd = params.config().hidden_dim;
        Self {
            h: hidden.to_vec(),
            next: vec![0.0; hd],
            z: vec![0.0; hd],
            r: vec![0.0; hd],
            n: vec![0.0; hd],
            rh: vec![0.0; hd],
            logits: vec![0.0; params.config().vocab_size],
        }
    }

    fn advance(&mut self, dec: &Decoder<'_>, token: usize) -> &[f64] {
        dec.step(
            &self.h,
            token,
            &mut self.z,
            &mut self.r,
            &mut self.n,
            &mut self.next,
            &mut self.rh,
            &mut self.logits,
        );
        std::mem::swap(&mut self.h, &mut self.next);
        &self.logits
    }
}

/// Lowest index among the maxima.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ModelParams {
    /// See [`Decoder::sample_decode`].
    pub fn sample_decode(
        &self,
        hidden: &[f64],
        n_samples: usize,
        temperature: f64,
        max_len: usize,
        key: StreamKey,
    ) -> DecodeResult {
        self.decoder()
            .sample_decode(hidden, n_samples, temperature, max_len, key)
    }

    /// See [`Decoder::greedy_decode`].
    pub fn greedy_decode(&self, hidden: &[f64], max_len: usize) -> (Vec<usize>, bool) {
        self.decoder().greedy_decode(hidden, max_len)
    }
}

impl Decoder<'_> {
    /// Draw `n_samples` sequences from softmax(ℓ/τ). Sample `i` uses the
    /// stream `key.child(i)`, so results do not depend on how calls are
    /// scheduled.
    pub fn sample_decode(
        &self,
        hidden: &[f64],
        n_samples: usize,
        temperature: f64,
        max_len: usize,
        key: StreamKey,
    ) -> DecodeResult {
        self.sample(hidden, n_samples, temperature, max_len, key, None)
    }

    /// [`Decoder::sample_decode`] that also returns, for every sample, the
    /// teacher-forced pass over [`DecodeResult::target`]. These are the
    /// values [`Decoder::teacher_forced`] would compute, without a second
    /// forward pass.
    pub fn sample_decode_traced(
        &self,
        hidden: &[f64],
        n_samples: usize,
        temperature: f64,
        max_len: usize,
        key: StreamKey,
    ) -> (DecodeResult, Vec<TeacherForced>) {
        let mut traces = Vec::with_capacity(n_samples);
        let out = self.sample(hidden, n_samples, temperature, max_len, key, Some(&mut traces));
        (out, traces)
    }

    fn sample(
        &self,
        hidden: &[f64],
        n_samples: usize,
        temperature: f64,
        max_len: usize,
        key: StreamKey,
        mut traces: Option<&mut Vec<TeacherForced>>,
    ) -> DecodeResult {
        assert!(temperature > 0.0, "temperature must be positive");
        let params = self.params();
        let mut out = DecodeResult {
            sequences: Vec::with_capacity(n_samples),
            logprobs: Vec::with_capacity(n_samples),
            tempered_logprobs: Vec::with_capacity(n_samples),
            truncated: Vec::with_capacity(n_samples),
        };
        let v = params.config().vocab_size;
        let (mut probs, mut probs1) = (vec![0.0; v], vec![0.0; v]);
        for i in 0..n_samples {
            let mut rng = key.child(i as u64).rng();
            let mut cursor = Cursor::new(params, hidden);
            let mut trace = traces.as_ref().map(|_| Trace::start(hidden));
            let mut token_logprobs = Vec::new();
            let mut seq = Vec::new();
            let (mut lp, mut lp_tau) = (0.0, 0.0);
            let mut token = BOS;
            let mut ended = false;
            for _ in 0..max_len {
                let logits = cursor.advance(self, token);
                probs1.copy_from_slice(logits);
                let lse = softmax_in_place(&mut probs1);
                for (p, l) in probs.iter_mut().zip(logits) {
                    *p = l / temperature;
                }
                let lse_tau = softmax_in_place(&mut probs);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = argmax(&probs);
                for (k, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                let token_lp = logits[pick] - lse;
                lp += token_lp;
                lp_tau += logits[pick] / temperature - lse_tau;
                if let Some(trace) = trace.as_mut() {
                    trace.push(pick, &cursor.z, &cursor.r, &cursor.n, &cursor.h, &probs1);
                    token_logprobs.push(token_lp);
                }
                if pick == EOS {
                    ended = true;
                    break;
                }
                seq.push(pick);
                token = pick;
            }
            if let (Some(traces), Some(trace)) = (traces.as_mut(), trace) {
                traces.push(TeacherForced {
                    total: lp,
                    token_logprobs,
                    trace,
                });
            }
            out.sequences.push(seq);
            out.logprobs.push(lp);
            out.tempered_logprobs.push(lp_tau);
            out.truncated.push(!ended);
        }
        out
    }

    /// Argmax decoding, ties to the lowest token id. Returns content tokens
    /// (no EOS) and whether `max_len` was reached without EOS.
    pub fn greedy_decode(&self, hidden: &[f64], max_len: usize) -> (Vec<usize>, bool) {
        let mut cursor = Cursor::new(self.params(), hidden);
        let mut seq = Vec::new();
        let mut token = BOS;
        for _ in 0..max_len {
            let pick = argmax(cursor.advance(self, token));
            if pick == EOS {
                return (seq, false);
            }
            seq.push(pick);
            token = pick;
        }
        (seq, true)
    }
}
