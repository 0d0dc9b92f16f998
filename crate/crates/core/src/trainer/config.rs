//! Training configuration and its flat `key = value` file format.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown and repeated keys
//! are errors. Paths are taken relative to the config file's directory.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `epochs` | 20 | total epochs E |
//! | `warmup_epochs` | 5 | MLE-only epochs E_w |
//! | `mle_batch` | 32 | MLE batch size B |
//! | `mrt_batch` | 8 | MRT batch size B′ |
//! | `lambda` | 0.1 | weight of the auxiliary loss |
//! | `aux` | `mrt` | auxiliary objective on the MRT split: `mrt`, `mle` or `none` |
//! | `label_smoothing` | 0.1 | ε of the MLE loss |
//! | `lr` | 4e-4 | peak learning rate |
//! | `weight_decay` | 1e-6 | decoupled weight decay |
//! | `warmup_fraction` | 0.02 | fraction of steps with linear lr warmup |
//! | `cosine` | true | cosine decay after warmup |
//! | `clip_norm` | 1.0 | global gradient norm limit |
//! | `seed` | 0 | initialization, data order, noise and sampling |
//! | `n_samples` | 32 | MRT candidates per item N |
//! | `temperature` | 0.5 | MRT sampling temperature τ |
//! | `alpha` | 1.0 | sharpness α |
//! | `max_len` | 500 | MRT decoding limit |
//! | `sim` | `edit` | similarity: `edit`, `tanimoto` or `visual` |
//! | `visual_provider` | (stub) | command of an external embedding provider |
//! | `w_v`, `w_s`, `w_e` | 0.1, 0.5, 0.4 | reward weights |
//! | `embed_dim` | 64 | token embedding size |
//! | `hidden_dim` | 128 | recurrent state size |
//! | `noise_sigma` | 0.3 | feature noise after standardization |
//! | `corpus` | (bundled) | SMILES corpus file |
//! | `split_seed` | 0 | seed of the dataset split and evaluation noise |
//! | `split_mle`, `split_mrt`, `split_eval` | 0.6, 0.2, 0.2 | split ratios |
//! | `eval_max_len` | 200 | greedy decoding limit at evaluation |
//! | `output_dir` | `runs` | checkpoints and metrics |

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data::{SplitRatios, DEFAULT_NOISE};
use crate::reward::RewardWeights;
use crate::similarity::SimilarityKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// What the trainer does with the MRT split after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuxObjective {
    /// Ignore it.
    None,
    /// λ-weighted label-smoothed MLE on the same interleaved schedule.
    Mle,
    /// λ-weighted minimum risk training.
    Mrt,
}

impl AuxObjective {
    pub fn name(self) -> &'static str {
        match self {
            AuxObjective::None => "none",
            AuxObjective::Mle => "mle",
            AuxObjective::Mrt => "mrt",
        }
    }
}

impl FromStr for AuxObjective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AuxObjective::None),
            "mle" => Ok(AuxObjective::Mle),
            "mrt" => Ok(AuxObjective::Mrt),
            _ => Err(format!("unknown aux objective '{s}' (expected none, mle or mrt)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub mle_batch: usize,
    pub mrt_batch: usize,
    pub lambda: f64,
    pub aux: AuxObjective,
    pub label_smoothing: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub cosine: bool,
    pub clip_norm: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub max_len: usize,
    pub sim: SimilarityKind,
    pub visual_provider: Option<String>,
    pub weights: RewardWeights,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub noise_sigma: f64,
    pub corpus: Option<PathBuf>,
    pub split_seed: u64,
    pub split: SplitRatios,
    pub eval_max_len: usize,
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            warmup_epochs: 5,
            mle_batch: 32,
            mrt_batch: 8,
            lambda: 0.1,
            aux: AuxObjective::Mrt,
            label_smoothing: 0.1,
            lr: 4e-4,
            weight_decay: 1e-6,
            warmup_fraction: 0.02,
            cosine: true,
            clip_norm: 1.0,
            seed: 0,
            n_samples: 32,
            temperature: 0.5,
            alpha: 1.0,
            max_len: 500,
            sim: SimilarityKind::Edit,
            visual_provider: None,
            weights: RewardWeights::default(),
            embed_dim: 64,
            hidden_dim: 128,
            noise_sigma: DEFAULT_NOISE,
            corpus: None,
            split_seed: 0,
            split: SplitRatios::default(),
            eval_max_len: 200,
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value {value:?} for '{key}': {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("bad value {value:?} for '{key}': expected true or false")),
    }
}

impl TrainConfig {
    /// Set one key. Relative paths are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse_value(key, value)?,
            "mle_batch" => self.mle_batch = parse_value(key, value)?,
            "mrt_batch" => self.mrt_batch = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "aux" => self.aux = value.parse()?,
            "label_smoothing" => self.label_smoothing = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse_value(key, value)?,
            "cosine" => self.cosine = parse_bool(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "n_samples" => self.n_samples = parse_value(key, value)?,
            "temperature" => self.temperature = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "sim" => self.sim = parse_value(key, value)?,
            "visual_provider" => self.visual_provider = Some(value.to_string()),
            "w_v" => self.weights.w_v = parse_value(key, value)?,
            "w_s" => self.weights.w_s = parse_value(key, value)?,
            "w_e" => self.weights.w_e = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, value)?,
            "corpus" => self.corpus = Some(base.join(value)),
            "split_seed" => self.split_seed = parse_value(key, value)?,
            "split_mle" => self.split.mle_train = parse_value(key, value)?,
            "split_mrt" => self.split.mrt_train = parse_value(key, value)?,
            "split_eval" => self.split.eval = parse_value(key, value)?,
            "eval_max_len" => self.eval_max_len = parse_value(key, value)?,
            "output_dir" => self.output_dir = base.join(value),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Parse config text on top of the defaults and validate the result.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Syntax { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("key '{key}' given twice")));
            }
            cfg.set(key, value, base).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad(format!(
                "need 0 <= warmup_epochs < epochs (got {} and {})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.mle_batch == 0 || self.mrt_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative (got {})", self.lambda));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must lie in [0, 1) (got {})", self.label_smoothing));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive (got {})", self.clip_norm));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]".into());
        }
        if self.n_samples == 0 || self.max_len == 0 || self.eval_max_len == 0 {
            return bad("n_samples, max_len and eval_max_len must be at least 1".into());
        }
        if !(self.temperature > 0.0) || !(self.alpha >= 0.0) {
            return bad("temperature must be positive and alpha non-negative".into());
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("model dimensions must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        self.weights
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Every key in file syntax; `parse(to_text())` gives back `self`
    /// (with absolute paths).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("epochs", &self.epochs);
        kv("warmup_epochs", &self.warmup_epochs);
        kv("mle_batch", &self.mle_batch);
        kv("mrt_batch", &self.mrt_batch);
        kv("lambda", &self.lambda);
        kv("aux", &self.aux.name());
        kv("label_smoothing", &self.label_smoothing);
        kv("lr", &self.lr);
        kv("weight_decay", &self.weight_decay);
        kv("warmup_fraction", &self.warmup_fraction);
        kv("cosine", &self.cosine);
        kv("clip_norm", &self.clip_norm);
        kv("seed", &self.seed);
        kv("n_samples", &self.n_samples);
        kv("temperature", &self.temperature);
        kv("alpha", &self.alpha);
        kv("max_len", &self.max_len);
        kv("sim", &self.sim.name());
        if let Some(p) = &self.visual_provider {
            kv("visual_provider", p);
        }
        kv("w_v", &self.weights.w_v);
        kv("w_s", &self.weights.w_s);
        kv("w_e", &self.weights.w_e);
        kv("embed_dim", &self.embed_dim);
        kv("hidden_dim", &self.hidden_dim);
        kv("noise_sigma", &self.noise_sigma);
        if let Some(p) = &self.corpus {
            kv("corpus", &p.display());
        }
        kv("split_seed", &self.split_seed);
        kv("split_mle", &self.split.mle_train);
        kv("split_mrt", &self.split.mrt_train);
        kv("split_eval", &self.split.eval);
        kv("eval_max_len", &self.eval_max_len);
        kv("output_dir", &self.output_dir.display());
        s
    }
}
