//! Composite reward of a predicted SMILES string against a reference:
//!
//! `R = w_v·[valid] + w_s·sim·[valid] + w_e·[exact]`
//!
//! With non-negative weights summing to at most 1 and `sim ∈ [0, 1]`, R lies
//! in [0, 1].

use std::fmt;

use thiserror::Error;

use crate::molgraph::{
    canonicalize, check_valence, parse_smiles, CanonError, CorruptGroundTruth, MolGraph,
    SmilesError, StereoMode,
};
use crate::similarity::{Similarity, SimilarityError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error(transparent)]
    CorruptGroundTruth(#[from] CorruptGroundTruth),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("reward weights must be finite, non-negative and sum to at most 1 (got {0})")]
    InvalidWeights(RewardWeights),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_s: f64,
    pub w_e: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_v: 0.1,
            w_s: 0.5,
            w_e: 0.4,
        }
    }
}

impl fmt::Display for RewardWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w_v={} w_s={} w_e={}", self.w_v, self.w_s, self.w_e)
    }
}

impl RewardWeights {
    pub fn new(w_v: f64, w_s: f64, w_e: f64) -> Result<Self, RewardError> {
        let w = Self { w_v, w_s, w_e };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let parts = [self.w_v, self.w_s, self.w_e];
        let ok = parts.iter().all(|w| w.is_finite() && *w >= 0.0)
            && parts.iter().sum::<f64>() <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(RewardError::InvalidWeights(*self))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub valid: bool,
    pub exact: bool,
    pub sim: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const INVALID: RewardBreakdown = RewardBreakdown {
        valid: false,
        exact: false,
        sim: 0.0,
        total: 0.0,
    };
}

impl fmt::Display for RewardBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "valid={} exact={} sim={:.6} total={:.6}",
            self.valid, self.exact, self.sim, self.total
        )
    }
}

/// How both sides are normalized before the exact-match comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalization {
    pub stereo: StereoMode,
    /// Drop R-group labels so `[1*]` and `*` compare equal.
    pub wildcard_rgroups: bool,
}

impl Normalization {
    /// Used for training rewards: canonical form only.
    pub const TRAINING: Normalization = Normalization {
        stereo: StereoMode::PreserveTetrahedral,
        wildcard_rgroups: false,
    };

    /// Default evaluation protocol.
    pub const EVALUATION: Normalization = Normalization {
        stereo: StereoMode::PreserveTetrahedral,
        wildcard_rgroups: true,
    };
}

impl Default for Normalization {
    fn default() -> Self {
        Self::TRAINING
    }
}

fn normalize_graph(g: &MolGraph, norm: Normalization) -> Result<String, CanonError> {
    if norm.wildcard_rgroups {
        canonicalize(&g.without_rgroup_labels(), norm.stereo)
    } else {
        canonicalize(g, norm.stereo)
    }
}

/// Parse, optionally clear R-group labels, check valence and canonicalize.
pub fn normalize_smiles(s: &str, norm: Normalization) -> Result<String, SmilesError> {
    let g = parse_smiles(s)?;
    Ok(normalize_graph(&g, norm)?)
}

/// Reward of one prediction. `truth` must be a valid molecule; it is
/// normalized here, so any spelling works.
pub fn compute_reward(
    pred: &str,
    truth: &str,
    sim: &Similarity,
    weights: RewardWeights,
    norm: Normalization,
) -> Result<RewardBreakdown, RewardError> {
    let truth_norm = normalize_truth(truth, norm)?;
    score(pred, truth, &truth_norm, sim, weights, norm)
}

/// Element-wise [`compute_reward`]; the truth is normalized once.
pub fn compute_rewards_batch<S: AsRef<str>>(
    preds: &[S],
    truth: &str,
    sim: &Similarity,
    weights: RewardWeights,
    norm: Normalization,
) -> Result<Vec<RewardBreakdown>, RewardError> {
    let truth_norm = normalize_truth(truth, norm)?;
    preds
        .iter()
        .map(|p| score(p.as_ref(), truth, &truth_norm, sim, weights, norm))
        .collect()
}

fn normalize_truth(truth: &str, norm: Normalization) -> Result<String, CorruptGroundTruth> {
    normalize_smiles(truth, norm).map_err(|source| CorruptGroundTruth {
        text: truth.to_string(),
        source,
    })
}

fn score(
    pred: &str,
    truth: &str,
    truth_norm: &str,
    sim: &Similarity,
    weights: RewardWeights,
    norm: Normalization,
) -> Result<RewardBreakdown, RewardError> {
    let Ok(g) = parse_smiles(pred) else {
        return Ok(RewardBreakdown::INVALID);
    };
    if !check_valence(&g).valid {
        return Ok(RewardBreakdown::INVALID);
    }
    let exact = normalize_graph(&g, norm).is_ok_and(|p| p == truth_norm);
    let sim = match sim.evaluate(pred, truth) {
        Ok(v) => v.clamp(0.0, 1.0),
        // The truth is known to be valid, so this is a prediction-side
        // failure the checks above do not catch.
        Err(SimilarityError::InvalidMolecule(_)) => 0.0,
        Err(e) => return Err(e.into()),
    };
    let total = weights.w_v + weights.w_s * sim + if exact { weights.w_e } else { 0.0 };
    Ok(RewardBreakdown {
        valid: true,
        exact,
        sim,
        total,
    })
}
