//! Evaluation protocol: normalized exact match, validity, similarity and
//! mean composite reward over (prediction, truth) pairs.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::molgraph::{check_valence, parse_smiles, SmilesError, StereoMode};
use crate::reward::{compute_reward, normalize_smiles, Normalization, RewardError, RewardWeights};
use crate::similarity::Similarity;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("ground truth on line {line} ({text:?}) is not a valid molecule: {source}")]
    CorruptGroundTruth {
        line: usize,
        text: String,
        source: SmilesError,
    },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub stereo: StereoMode,
    /// Map `[n*]` R-group atoms to plain `*`.
    pub rgroup_wildcarding: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            stereo: StereoMode::PreserveTetrahedral,
            rgroup_wildcarding: true,
        }
    }
}

impl EvalOptions {
    pub fn normalization(self) -> Normalization {
        Normalization {
            stereo: self.stereo,
            wildcard_rgroups: self.rgroup_wildcarding,
        }
    }
}

/// Canonical form under the evaluation options, or `None` when `s` is not
/// a valid molecule. Cis–trans bond markers are always ignored.
pub fn normalize_for_eval(s: &str, opts: EvalOptions) -> Option<String> {
    normalize_smiles(s, opts.normalization()).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub prediction: String,
    pub truth: String,
    pub parsed: bool,
    pub valid: bool,
    pub exact: bool,
    pub sim: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_total: usize,
    pub n_parsed: usize,
    pub n_valid: usize,
    pub n_exact: usize,
    pub exact_match: f64,
    pub validity: f64,
    pub mean_similarity: f64,
    pub mean_reward: f64,
    pub sim_kind: String,
    pub records: Vec<EvalRecord>,
}

/// Score every pair. Prediction-side failures score zero on every metric;
/// a truth that does not normalize is an error naming its (1-based) line.
pub fn evaluate<P: AsRef<str>, T: AsRef<str>>(
    pairs: &[(P, T)],
    opts: EvalOptions,
    sim: &Similarity,
    weights: RewardWeights,
) -> Result<EvalReport, EvalError> {
    let norm = opts.normalization();
    let mut records = Vec::with_capacity(pairs.len());
    for (i, (pred, truth)) in pairs.iter().enumerate() {
        let (pred, truth) = (pred.as_ref(), truth.as_ref());
        let truth_norm =
            normalize_smiles(truth, norm).map_err(|source| EvalError::CorruptGroundTruth {
                line: i + 1,
                text: truth.to_string(),
                source,
            })?;
        let graph = parse_smiles(pred).ok();
        let parsed = graph.is_some();
        let valid = graph.is_some_and(|g| check_valence(&g).valid);
        let exact = normalize_for_eval(pred, opts).is_some_and(|p| p == truth_norm);
        let r = compute_reward(pred, truth, sim, weights, norm)?;
        records.push(EvalRecord {
            prediction: pred.to_string(),
            truth: truth.to_string(),
            parsed,
            valid,
            exact,
            sim: r.sim,
            reward: r.total,
        });
    }
    Ok(EvalReport::from_records(records, sim.kind().name()))
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>, sim_kind: &str) -> Self {
        let n = records.len();
        let count = |f: fn(&EvalRecord) -> bool| records.iter().filter(|r| f(r)).count();
        let (n_parsed, n_valid, n_exact) = (count(|r| r.parsed), count(|r| r.valid), count(|r| r.exact));
        let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let mean = |f: fn(&EvalRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n_total: n,
            n_parsed,
            n_valid,
            n_exact,
            exact_match: rate(n_exact),
            validity: rate(n_valid),
            mean_similarity: mean(|r| r.sim),
            mean_reward: mean(|r| r.reward),
            sim_kind: sim_kind.to_string(),
            records,
        }
    }

    /// Machine-readable report: a summary line, then one line per pair.
    pub fn to_records_text(&self) -> String {
        let mut s = format!(
            "# summary n_total={} n_parsed={} n_valid={} n_exact={} exact_match={} validity={} mean_similarity={} mean_reward={} sim={}\n",
            self.n_total,
            self.n_parsed,
            self.n_valid,
            self.n_exact,
            self.exact_match,
            self.validity,
            self.mean_similarity,
            self.mean_reward,
            self.sim_kind
        );
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(
                s,
                "index={i} parsed={} valid={} exact={} sim={} reward={} prediction={:?} truth={:?}",
                r.parsed, r.valid, r.exact, r.sim, r.reward, r.prediction, r.truth
            );
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("pairs", self.n_total.to_string()),
            ("parsed", self.n_parsed.to_string()),
            ("valid", self.n_valid.to_string()),
            ("exact", self.n_exact.to_string()),
            ("exact match", format!("{:.4}", self.exact_match)),
            ("validity", format!("{:.4}", self.validity)),
            (
                "mean similarity",
                format!("{:.4} ({})", self.mean_similarity, self.sim_kind),
            ),
            ("mean reward", format!("{:.4}", self.mean_reward)),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<16} {v}")?;
        }
        Ok(())
    }
}
