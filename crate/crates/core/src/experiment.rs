//! End-to-end wiring: corpus, splits and features from a [`TrainConfig`],
//! training, and greedy evaluation on a split.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::data::{
    bundled_corpus, eval_features, examples, load_corpus, make_splits, Corpus, DataError, Example,
    FeatureSpec, SplitName, Splits,
};
use crate::eval::{evaluate, EvalError, EvalOptions, EvalReport};
use crate::seqmodel::{Checkpoint, CheckpointError, SmilesModel, Vocab};
use crate::similarity::{CanonicalSketch, Similarity, SimilarityKind, SubprocessProvider};
use crate::trainer::{train, ConfigError, TrainConfig, TrainData, TrainError, TrainObserver, TrainOutcome};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot start embedding provider: {0}")]
    Provider(String),
    #[error("checkpoint does not match this configuration: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("configuration stored in checkpoint: {0}")]
    Config(#[from] ConfigError),
}

/// Everything derived from the data part of a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub vocab: Vocab,
    pub splits: Splits,
    pub features: FeatureSpec,
    pub mle: Vec<Example>,
    pub mrt: Vec<Example>,
    pub eval: Vec<Example>,
}

impl Prepared {
    pub fn split(&self, name: SplitName) -> &[Example] {
        match name {
            SplitName::MleTrain => &self.mle,
            SplitName::MrtTrain => &self.mrt,
            SplitName::Eval => &self.eval,
        }
    }
}

/// Load the corpus, fit the feature standardization on it and split it.
/// Depends only on `corpus`, `noise_sigma`, `split_*` keys.
pub fn prepare(config: &TrainConfig) -> Result<Prepared, ExperimentError> {
    let corpus = match &config.corpus {
        Some(path) => load_corpus(path)?,
        None => bundled_corpus(),
    };
    let vocab = Vocab::from_corpus(&corpus.canonical());
    let features = FeatureSpec::fitted(&corpus, config.noise_sigma);
    let splits = make_splits(corpus.len(), config.split, config.split_seed)?;
    let mle = examples(&corpus, &splits.mle_train, &features);
    let mrt = examples(&corpus, &splits.mrt_train, &features);
    let eval = examples(&corpus, &splits.eval, &features);
    Ok(Prepared {
        corpus,
        vocab,
        splits,
        features,
        mle,
        mrt,
        eval,
    })
}

/// The configured similarity; `visual` uses the external provider when one
/// is configured and the built-in stub otherwise.
pub fn similarity_for(config: &TrainConfig) -> Result<Similarity, ExperimentError> {
    match (config.sim, &config.visual_provider) {
        (SimilarityKind::Visual, Some(command)) => {
            let mut parts = command.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| ExperimentError::Provider("empty command".into()))?;
            let args: Vec<String> = parts.map(str::to_string).collect();
            let provider = SubprocessProvider::spawn(program, &args)
                .map_err(|e| ExperimentError::Provider(e.to_string()))?;
            Ok(Similarity::Visual {
                provider: Arc::new(provider),
                renderer: Arc::new(CanonicalSketch),
            })
        }
        (kind, _) => Ok(Similarity::from_kind(kind)),
    }
}

pub fn run_training(
    config: &TrainConfig,
    prepared: &Prepared,
    similarity: &Similarity,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, ExperimentError> {
    let data = TrainData {
        vocab: &prepared.vocab,
        mle: &prepared.mle,
        mrt: &prepared.mrt,
        features: &prepared.features,
    };
    Ok(train(config, similarity, data, observer)?)
}

/// Greedy predictions for `examples` under the fixed evaluation noise of
/// `split_seed`. Special tokens are kept as `<name>` so they never parse.
pub fn predict(
    model: &SmilesModel,
    examples: &[Example],
    features: &FeatureSpec,
    split_seed: u64,
    max_len: usize,
) -> Result<Vec<String>, ExperimentError> {
    eval_features(examples, features, split_seed)
        .iter()
        .map(|f| {
            let hidden = model
                .params
                .encode(f)
                .map_err(|e| ExperimentError::Mismatch(e.to_string()))?;
            let (tokens, _) = model.params.greedy_decode(&hidden, max_len);
            Ok(model.vocab.detokenize_lossy(&tokens))
        })
        .collect()
}

/// Greedy-decode a split and score it.
pub fn evaluate_model(
    model: &SmilesModel,
    prepared: &Prepared,
    split: SplitName,
    config: &TrainConfig,
    similarity: &Similarity,
    opts: EvalOptions,
) -> Result<EvalReport, ExperimentError> {
    if model.vocab != prepared.vocab {
        return Err(ExperimentError::Mismatch("vocabulary differs from the corpus".into()));
    }
    let examples = prepared.split(split);
    let preds = predict(model, examples, &prepared.features, config.split_seed, config.eval_max_len)?;
    let pairs: Vec<(&str, &str)> = preds
        .iter()
        .zip(examples)
        .map(|(p, e)| (p.as_str(), e.smiles.as_str()))
        .collect();
    Ok(evaluate(&pairs, opts, similarity, config.weights)?)
}

/// Checkpoint metadata: the config, so evaluation can rebuild the data
/// pipeline, plus the epoch. The output directory is left out so that
/// identical runs written to different places produce identical files.
pub fn checkpoint_metadata(config: &TrainConfig, epoch: usize) -> Vec<(String, String)> {
    let mut stored = config.clone();
    stored.output_dir = TrainConfig::default().output_dir;
    vec![
        ("config".to_string(), stored.to_text()),
        ("epoch".to_string(), epoch.to_string()),
    ]
}

/// A checkpoint's model and the config it was trained with.
pub fn load_model(path: impl AsRef<Path>) -> Result<(SmilesModel, TrainConfig), ExperimentError> {
    let ck = Checkpoint::load(path)?;
    let model = SmilesModel::from_checkpoint(&ck)?;
    let config = TrainConfig::parse(ck.require_meta("config")?, Path::new("."))?;
    Ok((model, config))
}
