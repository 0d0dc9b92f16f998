use crate::seqmodel::{Gradients, InputGrads, ModelParams, SeqModelError, PAD};

use super::TrainError;

/// Label-smoothed cross-entropy summed over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleLoss {
    /// Mean over non-PAD positions.
    pub loss: f64,
    pub positions: usize,
}

/// Smoothed targets put `1 − ε` on the gold token and `ε/(V − 1)` on every
/// other token. Each target sequence is cut at its first PAD. When `grads`
/// is given, `scale · ∇loss` is accumulated into it.
pub fn mle_loss(
    params: &ModelParams,
    batch: &[(&[f64], &[usize])],
    epsilon: f64,
    mut grads: Option<(&mut Gradients, f64)>,
) -> Result<MleLoss, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let v = params.config().vocab_size;
    let off = if v > 1 { epsilon / (v - 1) as f64 } else { 0.0 };
    let gold = 1.0 - epsilon;
    let targets: Vec<&[usize]> = batch
        .iter()
        .map(|(_, t)| &t[..t.iter().position(|&x| x == PAD).unwrap_or(t.len())])
        .collect();
    let positions: usize = targets.iter().map(|t| t.len()).sum();
    if positions == 0 {
        return Err(SeqModelError::EmptySequence.into());
    }
    let norm = positions as f64;
    let mut total = 0.0;
    let decoder = params.decoder();
    let mut inputs = InputGrads::new(params);
    for ((features, _), target) in batch.iter().zip(&targets) {
        let hidden = params.encode(features)?;
        let tf = decoder.teacher_forced(&hidden, target)?;
        let trace = &tf.trace;
        for t in 0..trace.steps() {
            let y = target[t];
            let probs = trace.probs(t);
            let mut ce = 0.0;
            for (k, &p) in probs.iter().enumerate() {
                let q = if k == y { gold } else { off };
                if q != 0.0 {
                    ce -= q * p.max(f64::MIN_POSITIVE).ln();
                }
            }
            total += ce;
        }
        if let Some((g, scale)) = grads.as_mut() {
            // dCE/dℓ = p − q at every step.
            let s = *scale / norm;
            let mut dlogits = Vec::with_capacity(trace.steps() * v);
            for t in 0..trace.steps() {
                let y = target[t];
                for (k, &p) in trace.probs(t).iter().enumerate() {
                    let q = if k == y { gold } else { off };
                    dlogits.push(s * (p - q));
                }
            }
            let dh = params.backward_decoder_deferred(trace, &dlogits, g, &mut inputs);
            params.backward_encode(features, &hidden, &dh, g);
        }
    }
    if let Some((g, _)) = grads {
        inputs.flush(params, g);
    }
    Ok(MleLoss {
        loss: total / norm,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{ModelConfig, Tensor, EOS};
    use rand::SeedableRng;

    fn model() -> ModelParams {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        ModelParams::init(ModelConfig::new(9, 3, 4, 2), &mut rng)
    }

    #[test]
    fn uniform_model_costs_ln_v_with_or_without_smoothing() {
        let mut p = model();
        p.tensor_mut(Tensor::OutW).fill(0.0);
        p.tensor_mut(Tensor::OutB).fill(0.0);
        let f = [0.2, 0.1];
        let t = [4, 5, EOS];
        for eps in [0.0, 0.1] {
            let l = mle_loss(&p, &[(&f, &t)], eps, None).unwrap();
            assert!((l.loss - 9f64.ln()).abs() < 1e-12);
            assert_eq!(l.positions, 3);
        }
    }

    #[test]
    fn confident_correct_model_costs_nothing_without_smoothing() {
        let mut p = model();
        p.tensor_mut(Tensor::OutW).fill(0.0);
        let b = p.tensor_mut(Tensor::OutB);
        b.fill(-50.0);
        b[EOS] = 50.0;
        let l = mle_loss(&p, &[(&[0.0, 0.0], &[EOS])], 0.0, None).unwrap();
        assert!(l.loss < 1e-30);
    }

    #[test]
    fn padding_is_masked() {
        let p = model();
        let f = [0.3, -0.4];
        let mut g1 = Gradients::zeros(*p.config());
        let mut g2 = Gradients::zeros(*p.config());
        let a = mle_loss(&p, &[(&f, &[4, 6, EOS])], 0.1, Some((&mut g1, 1.0))).unwrap();
        let b = mle_loss(&p, &[(&f, &[4, 6, EOS, PAD, PAD, 7])], 0.1, Some((&mut g2, 1.0))).unwrap();
        assert_eq!(a, b);
        assert_eq!(g1, g2);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(mle_loss(&model(), &[], 0.1, None), Err(TrainError::EmptyBatch)));
    }
}
