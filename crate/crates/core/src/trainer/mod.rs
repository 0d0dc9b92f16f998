//! Interleaved MLE + MRT training.
//!
//! Every step runs label-smoothed MLE on the next MLE batch. After the
//! warmup epochs, every K-th step also adds λ times an auxiliary loss on the
//! next MRT batch, `K = max(1, ⌊T/T_MRT⌋)`, so the MRT split is visited about
//! once per epoch. Both gradients are accumulated before a single clipped
//! AdamW step.

mod config;
mod loss;
mod optim;

use std::fmt;
use std::io;

use thiserror::Error;

pub use config::{AuxObjective, ConfigError, TrainConfig};
pub use loss::{mle_loss, MleLoss};
pub use optim::{clip_gradients, lr_at, AdamW, ADAM_EPS, BETA1, BETA2};

use crate::data::{Example, FeatureSpec};
use crate::mrt::{compute_mrt_loss, MrtConfig, MrtError};
use crate::rng::{tag, StreamKey};
use crate::seqmodel::{Gradients, ModelConfig, ModelParams, SeqModelError, SmilesModel, Vocab, EOS};
use crate::similarity::Similarity;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("the {0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] SeqModelError),
    #[error(transparent)]
    Mrt(#[from] MrtError),
    #[error("training diverged at epoch {epoch}, step {step} (mle_loss={mle_loss}, aux_loss={aux_loss:?}, lr={lr}): {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        mle_loss: f64,
        aux_loss: Option<f64>,
        lr: f64,
        source: SeqModelError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// MLE steps per epoch `T`, MRT batches per epoch `T_MRT`, and the
/// interleave period `K = max(1, ⌊T/T_MRT⌋)`.
pub fn interleave_k(mle_size: usize, mle_batch: usize, mrt_size: usize, mrt_batch: usize) -> usize {
    let t = mle_size.div_ceil(mle_batch);
    let t_mrt = mrt_size.div_ceil(mrt_batch);
    (t / t_mrt.max(1)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Mle,
    /// MLE plus minimum risk training on an MRT batch.
    MleMrt,
    /// MLE plus extra MLE on an MRT batch.
    MleAux,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Mle => "mle",
            StepKind::MleMrt => "mle+mrt",
            StepKind::MleAux => "mle+mle",
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global optimizer step, from 1.
    pub step: usize,
    /// Step within the epoch, from 1.
    pub t: usize,
    pub kind: StepKind,
    pub mle_loss: f64,
    /// Unweighted auxiliary loss when one was computed.
    pub aux_loss: Option<f64>,
    pub mean_reward: Option<f64>,
    pub valid_rate: Option<f64>,
    pub exact_rate: Option<f64>,
    pub q_entropy: Option<f64>,
    pub lr: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let aux_key = if self.kind == StepKind::MleAux { "aux_loss" } else { "mrt_loss" };
        write!(
            f,
            "epoch={} step={} t={} kind={} mle_loss={} {aux_key}={} mean_reward={} valid_rate={} exact_rate={} q_entropy={} lr={} grad_norm={}",
            self.epoch,
            self.step,
            self.t,
            self.kind.name(),
            self.mle_loss,
            opt(self.aux_loss),
            opt(self.mean_reward),
            opt(self.valid_rate),
            opt(self.exact_rate),
            opt(self.q_entropy),
            self.lr,
            self.grad_norm
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }

    pub fn count(&self, kind: StepKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }
}

/// Callbacks for streaming the log and writing checkpoints.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> io::Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _epoch: usize, _model: &SmilesModel) -> io::Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

pub struct TrainData<'a> {
    pub vocab: &'a Vocab,
    pub mle: &'a [Example],
    pub mrt: &'a [Example],
    pub features: &'a FeatureSpec,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SmilesModel,
    pub log: TrainLog,
}

/// Shuffled pass over a dataset that persists across epochs and reshuffles
/// when exhausted.
struct Cursor {
    order: Vec<usize>,
    pos: usize,
    pass: u64,
    seed: u64,
}

impl Cursor {
    fn new(n: usize, seed: u64) -> Self {
        let mut c = Self {
            order: (0..n).collect(),
            pos: 0,
            pass: 0,
            seed,
        };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.sort_unstable();
        self.order
            .shuffle(&mut StreamKey::new(self.seed, &[tag::MRT_ORDER, self.pass]).rng());
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.pass += 1;
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn tokenized(vocab: &Vocab, examples: &[Example]) -> Result<Vec<Vec<usize>>, SeqModelError> {
    examples
        .iter()
        .map(|e| {
            let mut t = vocab.tokenize(&e.smiles)?;
            t.push(EOS);
            Ok(t)
        })
        .collect()
}

/// Run the full schedule. Deterministic given `config.seed`.
pub fn train(
    config: &TrainConfig,
    similarity: &Similarity,
    data: TrainData<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.mle.is_empty() {
        return Err(TrainError::EmptyDataset("MLE"));
    }
    let use_aux = config.aux != AuxObjective::None;
    if use_aux && data.mrt.is_empty() {
        return Err(TrainError::EmptyDataset("MRT"));
    }
    let feature_dim = data.mle[0].base_features.len();
    let model_cfg = ModelConfig::new(data.vocab.len(), config.embed_dim, config.hidden_dim, feature_dim);
    let mut params = ModelParams::init(model_cfg, &mut StreamKey::new(config.seed, &[tag::INIT]).rng());
    let mle_targets = tokenized(data.vocab, data.mle)?;
    let mrt_targets = tokenized(data.vocab, data.mrt)?;
    let mrt_config = MrtConfig {
        n_samples: config.n_samples,
        temperature: config.temperature,
        alpha: config.alpha,
        max_len: config.max_len,
        similarity: similarity.clone(),
        weights: config.weights,
    };
    mrt_config.validate()?;

    let seed = config.seed;
    let steps_per_epoch = data.mle.len().div_ceil(config.mle_batch);
    let k = interleave_k(data.mle.len(), config.mle_batch, data.mrt.len().max(1), config.mrt_batch);
    let total_steps = steps_per_epoch * config.epochs;
    let mut optimizer = AdamW::new(&params);
    let mut grads = Gradients::zeros(model_cfg);
    let mut mrt_cursor = Cursor::new(data.mrt.len(), seed);
    let mut log = TrainLog::default();
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.mle.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut StreamKey::new(seed, &[tag::DATA_ORDER, epoch as u64]).rng());
        }
        for (t0, chunk) in order.chunks(config.mle_batch).enumerate() {
            let t = t0 + 1;
            step += 1;
            grads.fill(0.0);

            let feats: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| data.mle[i].noisy(data.features, StreamKey::new(seed, &[tag::NOISE, 0, epoch as u64, i as u64])))
                .collect();
            let batch: Vec<(&[f64], &[usize])> = chunk
                .iter()
                .zip(&feats)
                .map(|(&i, f)| (f.as_slice(), mle_targets[i].as_slice()))
                .collect();
            let mle = mle_loss(&params, &batch, config.label_smoothing, Some((&mut grads, 1.0)))?;

            let mut record = StepRecord {
                epoch,
                step,
                t,
                kind: StepKind::Mle,
                mle_loss: mle.loss,
                aux_loss: None,
                mean_reward: None,
                valid_rate: None,
                exact_rate: None,
                q_entropy: None,
                lr: 0.0,
                grad_norm: 0.0,
            };

            if use_aux && epoch > config.warmup_epochs && t % k == 0 {
                let idx = mrt_cursor.next_batch(config.mrt_batch);
                let feats: Vec<Vec<f64>> = idx
                    .iter()
                    .map(|&i| data.mrt[i].noisy(data.features, StreamKey::new(seed, &[tag::NOISE, 1, step as u64, i as u64])))
                    .collect();
                // A zero weight contributes no gradient; skip the reverse pass.
                let aux_grads = (config.lambda != 0.0).then_some((&mut grads, config.lambda));
                match config.aux {
                    AuxObjective::Mrt => {
                        let truths: Vec<&str> = idx.iter().map(|&i| data.mrt[i].smiles.as_str()).collect();
                        let key = StreamKey::new(seed, &[tag::SAMPLING, step as u64]);
                        let (loss, _) = compute_mrt_loss(&params, data.vocab, &feats, &truths, &mrt_config, key, aux_grads)?;
                        let d = loss.diagnostics;
                        record.kind = StepKind::MleMrt;
                        record.aux_loss = Some(loss.loss);
                        record.mean_reward = Some(d.mean_reward);
                        record.valid_rate = Some(d.validity_rate);
                        record.exact_rate = Some(d.exact_rate);
                        record.q_entropy = Some(d.mean_q_entropy);
                    }
                    AuxObjective::Mle => {
                        let batch: Vec<(&[f64], &[usize])> = idx
                            .iter()
                            .zip(&feats)
                            .map(|(&i, f)| (f.as_slice(), mrt_targets[i].as_slice()))
                            .collect();
                        let aux = mle_loss(&params, &batch, config.label_smoothing, aux_grads)?;
                        record.kind = StepKind::MleAux;
                        record.aux_loss = Some(aux.loss);
                    }
                    AuxObjective::None => unreachable!(),
                }
            }

            let lr = lr_at(step, total_steps, config.lr, config.warmup_fraction, config.cosine);
            let norm = clip_gradients(&mut grads, config.clip_norm).map_err(|source| TrainError::Diverged {
                epoch,
                step,
                mle_loss: record.mle_loss,
                aux_loss: record.aux_loss,
                lr,
                source,
            })?;
            optimizer.step(&mut params, &grads, lr, config.weight_decay)?;
            record.lr = lr;
            record.grad_norm = norm;
            observer.on_step(&record)?;
            log.records.push(record);
        }
        let model = SmilesModel {
            vocab: data.vocab.clone(),
            params: params.clone(),
        };
        observer.on_epoch(epoch, &model)?;
    }
    Ok(TrainOutcome {
        model: SmilesModel {
            vocab: data.vocab.clone(),
            params,
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_formula() {
        assert_eq!(interleave_k(64000, 64, 1600, 16), 10);
        assert_eq!(interleave_k(100, 10, 1000, 10), 1);
        assert_eq!(interleave_k(1000, 10, 16, 16), 100);
        assert_eq!(interleave_k(33, 32, 8, 8), 2);
    }

    #[test]
    fn cursor_visits_everything_once_per_pass() {
        let mut c = Cursor::new(10, 4);
        let mut first: Vec<usize> = c.next_batch(4);
        first.extend(c.next_batch(4));
        first.extend(c.next_batch(2));
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        let wrap = c.next_batch(3);
        assert_eq!(c.pass, 1);
        assert_eq!(wrap.len(), 3);
    }
}
