use std::f64::consts::PI;

use crate::seqmodel::{Gradients, ModelParams, ParamBuffer, SeqModelError};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate at `step` of `total_steps`: linear ramp from 0 over
/// `⌈warmup_fraction·total_steps⌉` steps, then cosine decay to 0 at
/// `total_steps` (or constant when `cosine` is false).
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64, cosine: bool) -> f64 {
    let warmup = (warmup_fraction * total_steps as f64).ceil() as usize;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if !cosine || total_steps <= warmup {
        return base_lr;
    }
    let progress = ((step - warmup) as f64 / (total_steps - warmup) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Scale `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> Result<f64, SeqModelError> {
    grads.check_finite()?;
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: ParamBuffer,
    v: ParamBuffer,
    steps: u64,
}

impl AdamW {
    pub fn new(like: &ModelParams) -> Self {
        Self {
            m: ParamBuffer::zeros(*like.config()),
            v: ParamBuffer::zeros(*like.config()),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &ParamBuffer {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamBuffer {
        &self.v
    }

    /// `θ ← θ·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &Gradients,
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), SeqModelError> {
        for (what, len) in [("gradients", grads.len()), ("optimizer state", self.m.len())] {
            if len != params.len() {
                return Err(SeqModelError::ShapeMismatch {
                    what,
                    expected: params.len(),
                    got: len,
                });
            }
        }
        self.steps += 1;
        let bc1 = 1.0 - BETA1.powi(self.steps as i32);
        let bc2 = 1.0 - BETA2.powi(self.steps as i32);
        let decay = 1.0 - lr * weight_decay;
        let p = params.as_mut_slice();
        let (m, v) = (self.m.as_mut_slice(), self.v.as_mut_slice());
        for (i, &g) in grads.as_slice().iter().enumerate() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            p[i] = p[i] * decay - lr * update;
        }
        Ok(())
    }
}
