//! Corpus loading, the synthetic recognition features and dataset splits.
//!
//! The "image" of a molecule is a short vector of structural counts with
//! Gaussian noise. Isomers share their counts, so the decoder has to pick
//! among several plausible structures for one input.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::molgraph::{
    canonical_smiles, canonicalize, hydrogen_counts, parse_smiles, BondOrder, Element, MolGraph,
    StereoMode,
};
use crate::rng::{tag, StreamKey};

/// Feature slots: 12 element counts (including hydrogens and wildcards),
/// single/double/triple/aromatic bond counts, ring count and the length of
/// the canonical SMILES.
pub const FEATURE_DIM: usize = 18;
pub const DEFAULT_NOISE: f64 = 0.3;

const BOND_SLOT: usize = 12;
const RING_SLOT: usize = 16;
const LENGTH_SLOT: usize = 17;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "H", "*", "single", "double", "triple",
    "aromatic", "rings", "length",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub raw: String,
    pub canonical: String,
    pub graph: MolGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {:?}: {}", self.line, self.text, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub source: PathBuf,
    pub rejections: Vec<Rejection>,
    /// Lines dropped because their canonical form was already present.
    pub merged: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse corpus text: the first whitespace-separated field of each line
    /// is the SMILES, anything after it is ignored. Lines starting with `#`
    /// and blank lines are skipped. Bad lines are reported, never fatal.
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Self {
        let mut corpus = Corpus {
            source: source.into(),
            ..Corpus::default()
        };
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let content = line.split_whitespace().next().unwrap_or("");
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let reject = |reason: String| Rejection {
                line: i + 1,
                text: content.to_string(),
                reason,
            };
            let graph = match parse_smiles(content) {
                Ok(g) => g,
                Err(e) => {
                    corpus.rejections.push(reject(e.to_string()));
                    continue;
                }
            };
            match canonicalize(&graph, StereoMode::PreserveTetrahedral) {
                Ok(canonical) => {
                    if seen.insert(canonical.clone()) {
                        corpus.entries.push(CorpusEntry {
                            raw: content.to_string(),
                            canonical,
                            graph,
                        });
                    } else {
                        corpus.merged += 1;
                    }
                }
                Err(e) => corpus.rejections.push(reject(e.to_string())),
            }
        }
        corpus
    }

    pub fn canonical(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.canonical.as_str()).collect()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Corpus::parse(&text, path))
}

/// The bundled corpus of about 1000 drug-like molecules.
pub fn bundled_corpus() -> Corpus {
    Corpus::parse(include_str!("../data/corpus.smi"), "<bundled corpus.smi>")
}

/// Noiseless structural counts. The molecule must be valid.
pub fn structural_counts(g: &MolGraph) -> [f64; FEATURE_DIM] {
    let mut f = [0.0; FEATURE_DIM];
    for a in g.atoms() {
        f[a.element.ordinal()] += 1.0;
    }
    let h: u32 = hydrogen_counts(g).iter().sum();
    f[Element::H.ordinal()] += f64::from(h);
    for b in g.bonds() {
        let slot = match b.order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        f[BOND_SLOT + slot] += 1.0;
    }
    f[RING_SLOT] = g.ring_count() as f64;
    f[LENGTH_SLOT] = canonicalize(g, StereoMode::PreserveTetrahedral)
        .map(|s| s.chars().count() as f64)
        .unwrap_or(0.0);
    f
}

/// Per-slot affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

impl Standardizer {
    /// Mean and population standard deviation over `rows`; constant slots
    /// get unit scale.
    pub fn fit(rows: &[[f64; FEATURE_DIM]]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; FEATURE_DIM];
        let mut std = [0.0; FEATURE_DIM];
        for r in rows {
            for k in 0..FEATURE_DIM {
                mean[k] += r[k] / n;
            }
        }
        for r in rows {
            for k in 0..FEATURE_DIM {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, raw: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|k| (raw[k] - self.mean[k]) / self.std[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    /// Noise standard deviation, in standardized units when a standardizer
    /// is set.
    pub sigma: f64,
    pub standardizer: Option<Standardizer>,
}

impl FeatureSpec {
    /// Raw counts, no noise.
    pub fn raw() -> Self {
        Self {
            sigma: 0.0,
            standardizer: None,
        }
    }

    /// Standardized over `corpus`, with noise `sigma`.
    pub fn fitted(corpus: &Corpus, sigma: f64) -> Self {
        let rows: Vec<_> = corpus.entries.iter().map(|e| structural_counts(&e.graph)).collect();
        Self {
            sigma,
            standardizer: Some(Standardizer::fit(&rows)),
        }
    }

    /// Noiseless (possibly standardized) features.
    pub fn base(&self, g: &MolGraph) -> Vec<f64> {
        let raw = structural_counts(g);
        match &self.standardizer {
            Some(s) => s.apply(&raw).to_vec(),
            None => raw.to_vec(),
        }
    }

    /// Add `N(0, σ²)` to every slot of `base`.
    pub fn add_noise<R: Rng + ?Sized>(&self, base: &[f64], rng: &mut R) -> Vec<f64> {
        if self.sigma == 0.0 {
            return base.to_vec();
        }
        let normal = Normal::new(0.0, self.sigma).expect("finite sigma");
        base.iter().map(|x| x + normal.sample(rng)).collect()
    }
}

pub fn featurize<R: Rng + ?Sized>(g: &MolGraph, spec: &FeatureSpec, rng: &mut R) -> Vec<f64> {
    spec.add_noise(&spec.base(g), rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub mle_train: Vec<usize>,
    pub mrt_train: Vec<usize>,
    pub eval: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub mle_train: f64,
    pub mrt_train: f64,
    pub eval: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            mle_train: 0.6,
            mrt_train: 0.2,
            eval: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    MleTrain,
    MrtTrain,
    Eval,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::MleTrain => "mle_train",
            SplitName::MrtTrain => "mrt_train",
            SplitName::Eval => "eval",
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mle_train" | "mle" => Ok(SplitName::MleTrain),
            "mrt_train" | "mrt" => Ok(SplitName::MrtTrain),
            "eval" => Ok(SplitName::Eval),
            _ => Err(format!("unknown split '{s}' (expected mle_train, mrt_train or eval)")),
        }
    }
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::MleTrain => &self.mle_train,
            SplitName::MrtTrain => &self.mrt_train,
            SplitName::Eval => &self.eval,
        }
    }

    /// One index per line.
    pub fn manifest(&self, name: SplitName) -> String {
        self.get(name).iter().map(|i| format!("{i}\n")).collect()
    }
}

/// Fisher–Yates shuffle of `0..n` from the split stream, then contiguous
/// partition with sizes `round(r·n)`; the eval split takes the remainder.
pub fn make_splits(n: usize, ratios: SplitRatios, seed: u64) -> Result<Splits, DataError> {
    let r = [ratios.mle_train, ratios.mrt_train, ratios.eval];
    if r.iter().any(|x| !(x.is_finite() && *x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(format!(
            "({}, {}, {}) must be positive and sum to 1",
            r[0], r[1], r[2]
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut StreamKey::new(seed, &[tag::SPLIT]).rng());
    let a = (r[0] * n as f64).round() as usize;
    let b = ((r[1] * n as f64).round() as usize).min(n.saturating_sub(a));
    let (mle, rest) = order.split_at(a.min(n));
    let (mrt, eval) = rest.split_at(b);
    if mle.is_empty() || mrt.is_empty() || eval.is_empty() {
        return Err(DataError::InsufficientData(format!(
            "{n} items cannot fill three non-empty splits with ratios ({}, {}, {})",
            r[0], r[1], r[2]
        )));
    }
    Ok(Splits {
        mle_train: mle.to_vec(),
        mrt_train: mrt.to_vec(),
        eval: eval.to_vec(),
        seed,
    })
}

/// One training or evaluation example: the target string and its noiseless
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub smiles: String,
    pub base_features: Vec<f64>,
}

impl Example {
    /// Features with noise drawn from the stream for this (purpose, round,
    /// item) triple.
    pub fn noisy(&self, spec: &FeatureSpec, key: StreamKey) -> Vec<f64> {
        spec.add_noise(&self.base_features, &mut key.rng())
    }
}

pub fn examples(corpus: &Corpus, indices: &[usize], spec: &FeatureSpec) -> Vec<Example> {
    indices
        .iter()
        .map(|&i| {
            let e = &corpus.entries[i];
            Example {
                smiles: e.canonical.clone(),
                base_features: spec.base(&e.graph),
            }
        })
        .collect()
}

/// Noisy features for an evaluation pass: fixed per (seed, item), so every
/// model is evaluated on the same inputs.
pub fn eval_features(examples: &[Example], spec: &FeatureSpec, seed: u64) -> Vec<Vec<f64>> {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| e.noisy(spec, StreamKey::new(seed, &[tag::EVAL_NOISE, i as u64])))
        .collect()
}

/// Canonical form of a SMILES string, or `None` if it is not a valid
/// molecule.
pub fn canonical_or_none(s: &str) -> Option<String> {
    canonical_smiles(s, StereoMode::PreserveTetrahedral).ok()
}
