//! Forward and reverse passes of the encoder and the gated recurrent
//! decoder.
//!
//! ```text
//! h₀  = tanh(enc_w·f + enc_b)
//! z   = σ(w_z·x + u_z·h + b_z)
//! r   = σ(w_r·x + u_r·h + b_r)
//! n   = tanh(w_n·x + u_n·(r⊙h) + b_n)
//! h'  = (1 − z)⊙n + z⊙h
//! ℓ   = out_w·h' + out_b
//! ```
//!
//! `x` is the embedding of the previous token (BOS at the first step).

use super::params::{Gradients, ModelParams, Tensor};
use super::vocab::BOS;
use super::SeqModelError;

/// `out += W·x` for row-major `W` with `x.len()` columns.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// Dot product with four independent partial sums, which lets the compiler
/// vectorize it.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            s[k] += x[k] * y[k];
        }
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// `dx += Wᵀ·dy`.
#[inline]
fn matvec_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (row, &g) in w.chunks_exact(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy·xᵀ`.
#[inline]
fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &g) in dw.chunks_exact_mut(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, b) in row.iter_mut().zip(x) {
            *d += g * b;
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place softmax with max subtraction; returns log Σ exp(original).
pub(crate) fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

impl ModelParams {
    /// Initial decoder state from a feature vector.
    pub fn encode(&self, features: &[f64]) -> Result<Vec<f64>, SeqModelError> {
        let cfg = self.config();
        if features.len() != cfg.feature_dim {
            return Err(SeqModelError::ShapeMismatch {
                what: "feature vector",
                expected: cfg.feature_dim,
                got: features.len(),
            });
        }
        let mut h = self.tensor(Tensor::EncB).to_vec();
        matvec_acc(self.tensor(Tensor::EncW), features, &mut h);
        for x in &mut h {
            *x = x.tanh();
        }
        Ok(h)
    }

    /// Accumulate encoder gradients given `dL/dh₀`; returns `dL/dfeatures`.
    pub fn backward_encode(
        &self,
        features: &[f64],
        hidden: &[f64],
        dhidden: &[f64],
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let dpre: Vec<f64> = hidden
            .iter()
            .zip(dhidden)
            .map(|(h, d)| d * (1.0 - h * h))
            .collect();
        let mut t = grads.tensors_mut();
        outer_acc(t.0[Tensor::EncW as usize], &dpre, features);
        for (g, d) in t.0[Tensor::EncB as usize].iter_mut().zip(&dpre) {
            *g += d;
        }
        let mut dfeat = vec![0.0; features.len()];
        matvec_t_acc(self.tensor(Tensor::EncW), &dpre, &mut dfeat);
        dfeat
    }

    /// Decoder with the per-token input projections precomputed. Worth
    /// building once per batch.
    pub fn decoder(&self) -> Decoder<'_> {
        let cfg = *self.config();
        let (hd, e) = (cfg.hidden_dim, cfg.embed_dim);
        let emb = self.tensor(Tensor::Embedding);
        let mut table = vec![0.0; cfg.vocab_size * 3 * hd];
        for (tok, row) in table.chunks_exact_mut(3 * hd).enumerate() {
            let x = &emb[tok * e..(tok + 1) * e];
            for (k, (w, b)) in [(Tensor::Wz, Tensor::Bz), (Tensor::Wr, Tensor::Br), (Tensor::Wn, Tensor::Bn)]
                .into_iter()
                .enumerate()
            {
                let out = &mut row[k * hd..(k + 1) * hd];
                out.copy_from_slice(self.tensor(b));
                matvec_acc(self.tensor(w), x, out);
            }
        }
        Decoder {
            params: self,
            table,
        }
    }

    /// Teacher-forced scoring of `targets` from initial state `hidden`.
    pub fn teacher_forced(
        &self,
        hidden: &[f64],
        targets: &[usize],
    ) -> Result<TeacherForced, SeqModelError> {
        self.decoder().teacher_forced(hidden, targets)
    }

    /// Reverse pass through the decoder. `dlogits` holds `dL/dℓ_t` for every
    /// step (row-major, steps × vocab). Gradients are accumulated into
    /// `grads`; the return value is `dL/dh₀`.
    pub fn backward_decoder(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let mut inputs = InputGrads::new(self);
        let dh = self.backward_decoder_deferred(trace, dlogits, grads, &mut inputs);
        inputs.flush(self, grads);
        dh
    }

    /// Like [`ModelParams::backward_decoder`], but the gradients of the
    /// input projections and embeddings are summed per token in `inputs`
    /// and only written to `grads` by [`InputGrads::flush`]. Sharing one
    /// accumulator across many sequences saves most of that work.
    pub fn backward_decoder_deferred(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        grads: &mut Gradients,
        inputs: &mut InputGrads,
    ) -> Vec<f64> {
        let cfg = *self.config();
        let (hd, v) = (cfg.hidden_dim, cfg.vocab_size);
        let steps = trace.targets.len();
        assert_eq!(dlogits.len(), steps * v, "dlogits must cover every step");
        let mut g = grads.tensors_mut();
        let mut dh_next = vec![0.0; hd];
        let mut dh = vec![0.0; hd];
        let mut da_z = vec![0.0; hd];
        let mut da_r = vec![0.0; hd];
        let mut da_n = vec![0.0; hd];
        let mut drh = vec![0.0; hd];
        let mut rh = vec![0.0; hd];

        for t in (0..steps).rev() {
            let dl = &dlogits[t * v..(t + 1) * v];
            let h_t = &trace.h[t * hd..(t + 1) * hd];
            let h_prev = if t == 0 {
                &trace.h0[..]
            } else {
                &trace.h[(t - 1) * hd..t * hd]
            };
            let z = &trace.z[t * hd..(t + 1) * hd];
            let r = &trace.r[t * hd..(t + 1) * hd];
            let n = &trace.n[t * hd..(t + 1) * hd];
            let input = if t == 0 { BOS } else { trace.targets[t - 1] };

            dh.copy_from_slice(&dh_next);
            matvec_t_acc(self.tensor(Tensor::OutW), dl, &mut dh);
            outer_acc(g.0[Tensor::OutW as usize], dl, h_t);
            for (gb, d) in g.0[Tensor::OutB as usize].iter_mut().zip(dl) {
                *gb += d;
            }

            for i in 0..hd {
                let dn = dh[i] * (1.0 - z[i]);
                let dz = dh[i] * (h_prev[i] - n[i]);
                dh_next[i] = dh[i] * z[i];
                da_n[i] = dn * (1.0 - n[i] * n[i]);
                da_z[i] = dz * z[i] * (1.0 - z[i]);
                rh[i] = r[i] * h_prev[i];
            }
            drh.fill(0.0);
            matvec_t_acc(self.tensor(Tensor::Un), &da_n, &mut drh);
            for i in 0..hd {
                let dr = drh[i] * h_prev[i];
                dh_next[i] += drh[i] * r[i];
                da_r[i] = dr * r[i] * (1.0 - r[i]);
            }

            let acc = inputs.row(input);
            for (k, (u, b, da, hin)) in [
                (Tensor::Uz, Tensor::Bz, &da_z, h_prev),
                (Tensor::Ur, Tensor::Br, &da_r, h_prev),
                (Tensor::Un, Tensor::Bn, &da_n, &rh[..]),
            ]
            .into_iter()
            .enumerate()
            {
                outer_acc(g.0[u as usize], da, hin);
                for (gb, d) in g.0[b as usize].iter_mut().zip(da.iter()) {
                    *gb += d;
                }
                for (a, d) in acc[k * hd..(k + 1) * hd].iter_mut().zip(da.iter()) {
                    *a += d;
                }
            }
            matvec_t_acc(self.tensor(Tensor::Uz), &da_z, &mut dh_next);
            matvec_t_acc(self.tensor(Tensor::Ur), &da_r, &mut dh_next);
        }
        dh_next
    }
}

/// Per-token sums of the gate pre-activation gradients, pending
/// conversion into input-projection and embedding gradients.
#[derive(Debug, Clone)]
pub struct InputGrads {
    hidden_dim: usize,
    acc: Vec<f64>,
    used: Vec<bool>,
}

impl InputGrads {
    pub fn new(params: &ModelParams) -> Self {
        let cfg = params.config();
        Self {
            hidden_dim: cfg.hidden_dim,
            acc: vec![0.0; cfg.vocab_size * 3 * cfg.hidden_dim],
            used: vec![false; cfg.vocab_size],
        }
    }

    fn row(&mut self, token: usize) -> &mut [f64] {
        self.used[token] = true;
        let w = 3 * self.hidden_dim;
        &mut self.acc[token * w..(token + 1) * w]
    }

    /// Add the pending gradients to `grads` and reset.
    pub fn flush(&mut self, params: &ModelParams, grads: &mut Gradients) {
        let e = params.config().embed_dim;
        let hd = self.hidden_dim;
        let emb = params.tensor(Tensor::Embedding);
        let mut g = grads.tensors_mut();
        let mut dx = vec![0.0; e];
        for tok in 0..self.used.len() {
            if !std::mem::take(&mut self.used[tok]) {
                continue;
            }
            let x = &emb[tok * e..(tok + 1) * e];
            let row = &mut self.acc[tok * 3 * hd..(tok + 1) * 3 * hd];
            dx.fill(0.0);
            for (k, w) in [Tensor::Wz, Tensor::Wr, Tensor::Wn].into_iter().enumerate() {
                let da = &row[k * hd..(k + 1) * hd];
                outer_acc(g.0[w as usize], da, x);
                matvec_t_acc(params.tensor(w), da, &mut dx);
            }
            let ge = &mut g.0[Tensor::Embedding as usize][tok * e..(tok + 1) * e];
            for (a, d) in ge.iter_mut().zip(&dx) {
                *a += d;
            }
            row.fill(0.0);
        }
    }
}

/// Parameters plus a table of `b + W·x` for every token and gate.
pub struct Decoder<'a> {
    params: &'a ModelParams,
    table: Vec<f64>,
}

impl<'a> Decoder<'a> {
    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    /// One recurrent step from `h_prev` with input `token`. Writes the gate
    /// activations, the new state `h` and the output scores `logits`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step(
        &self,
        h_prev: &[f64],
        token: usize,
        z: &mut [f64],
        r: &mut [f64],
        n: &mut [f64],
        h: &mut [f64],
        rh: &mut [f64],
        logits: &mut [f64],
    ) {
        let p = self.params;
        let hd = h_prev.len();
        let row = &self.table[token * 3 * hd..(token + 1) * 3 * hd];

        z.copy_from_slice(&row[..hd]);
        matvec_acc(p.tensor(Tensor::Uz), h_prev, z);
        r.copy_from_slice(&row[hd..2 * hd]);
        matvec_acc(p.tensor(Tensor::Ur), h_prev, r);
        for (zi, ri) in z.iter_mut().zip(r.iter_mut()) {
            *zi = sigmoid(*zi);
            *ri = sigmoid(*ri);
        }
        for ((o, ri), hi) in rh.iter_mut().zip(r.iter()).zip(h_prev) {
            *o = ri * hi;
        }
        n.copy_from_slice(&row[2 * hd..]);
        matvec_acc(p.tensor(Tensor::Un), rh, n);
        for i in 0..n.len() {
            n[i] = n[i].tanh();
            h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
        }
        logits.copy_from_slice(p.tensor(Tensor::OutB));
        matvec_acc(p.tensor(Tensor::OutW), h, logits);
    }

    /// Teacher-forced scoring of `targets` from initial state `hidden`.
    /// Targets are normally EOS-terminated; truncated samples are scored as
    /// they are.
    pub fn teacher_forced(
        &self,
        hidden: &[f64],
        targets: &[usize],
    ) -> Result<TeacherForced, SeqModelError> {
        let cfg = *self.params.config();
        let (hd, v) = (cfg.hidden_dim, cfg.vocab_size);
        if hidden.len() != hd {
            return Err(SeqModelError::ShapeMismatch {
                what: "hidden state",
                expected: hd,
                got: hidden.len(),
            });
        }
        if targets.is_empty() {
            return Err(SeqModelError::EmptySequence);
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(SeqModelError::InvalidTokenId(bad));
        }
        let steps = targets.len();
        let mut trace = Trace {
            h0: hidden.to_vec(),
            targets: targets.to_vec(),
            z: vec![0.0; steps * hd],
            r: vec![0.0; steps * hd],
            n: vec![0.0; steps * hd],
            h: vec![0.0; steps * hd],
            probs: vec![0.0; steps * v],
        };
        let mut rh = vec![0.0; hd];
        let mut token_logprobs = Vec::with_capacity(steps);
        let mut total = 0.0;
        for t in 0..steps {
            let input = if t == 0 { BOS } else { targets[t - 1] };
            let (h_before, h_rest) = trace.h.split_at_mut(t * hd);
            let h_prev: &[f64] = if t == 0 {
                &trace.h0
            } else {
                &h_before[(t - 1) * hd..]
            };
            let span = t * hd..(t + 1) * hd;
            let probs = &mut trace.probs[t * v..(t + 1) * v];
            self.step(
                h_prev,
                input,
                &mut trace.z[span.clone()],
                &mut trace.r[span.clone()],
                &mut trace.n[span],
                &mut h_rest[..hd],
                &mut rh,
                probs,
            );
            let target_logit = probs[targets[t]];
            let lse = softmax_in_place(probs);
            let lp = target_logit - lse;
            token_logprobs.push(lp);
            total += lp;
        }
        Ok(TeacherForced {
            total,
            token_logprobs,
            trace,
        })
    }
}

/// Saved activations of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct Trace {
    h0: Vec<f64>,
    targets: Vec<usize>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

impl Trace {
    pub(super) fn start(h0: &[f64]) -> Self {
        Self {
            h0: h0.to_vec(),
            targets: Vec::new(),
            z: Vec::new(),
            r: Vec::new(),
            n: Vec::new(),
            h: Vec::new(),
            probs: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn push(&mut self, target: usize, z: &[f64], r: &[f64], n: &[f64], h: &[f64], probs: &[f64]) {
        self.targets.push(target);
        self.z.extend_from_slice(z);
        self.r.extend_from_slice(r);
        self.n.extend_from_slice(n);
        self.h.extend_from_slice(h);
        self.probs.extend_from_slice(probs);
    }

    pub fn steps(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Output distribution at step `t`.
    pub fn probs(&self, t: usize) -> &[f64] {
        let v = self.probs.len() / self.targets.len();
        &self.probs[t * v..(t + 1) * v]
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len() / self.targets.len()
    }

    /// `dlogits` for the loss `scale · Σ_t log p(y_t)`:
    /// `scale · (onehot(y_t) − p_t)` at every step.
    pub fn logprob_dlogits(&self, scale: f64) -> Vec<f64> {
        let mut d: Vec<f64> = self.probs.iter().map(|p| -scale * p).collect();
        let v = self.vocab_size();
        for (t, &y) in self.targets.iter().enumerate() {
            d[t * v + y] += scale;
        }
        d
    }
}

#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// Σ_t log p(y_t | y_<t, h₀).
    pub total: f64,
    pub token_logprobs: Vec<f64>,
    pub trace: Trace,
}
