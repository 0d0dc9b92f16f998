//! Similarity between a predicted and a reference SMILES string: raw edit
//! similarity, fingerprint Tanimoto, and embedding cosine. All three map
//! into [0, 1] and score 1 for identical molecules.

mod edit;
mod fingerprint;
mod visual;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::molgraph::parse_smiles;

pub use edit::{edit_similarity, levenshtein};
pub use fingerprint::{morgan_fingerprint, tanimoto, Fingerprint, DEFAULT_RADIUS, DEFAULT_WIDTH};
pub use visual::{
    cosine_clamped, serve_stub, visual_similarity, CanonicalSketch, EmbeddingProvider, Renderer,
    StubProvider, SubprocessProvider, EMBED_DIM,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("invalid molecule: {0}")]
    InvalidMolecule(String),
    #[error("fingerprint widths differ ({left} vs {right})")]
    WidthMismatch { left: usize, right: usize },
    #[error("fingerprint width {0} is not a power of two")]
    BadWidth(usize),
    #[error("embedding provider failed: {0}")]
    ProviderFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilarityKind {
    Edit,
    Tanimoto,
    Visual,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 3] = [
        SimilarityKind::Edit,
        SimilarityKind::Tanimoto,
        SimilarityKind::Visual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Edit => "edit",
            SimilarityKind::Tanimoto => "tanimoto",
            SimilarityKind::Visual => "visual",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown similarity kind '{0}' (expected edit, tanimoto or visual)")]
pub struct UnknownSimilarityKind(pub String);

impl FromStr for SimilarityKind {
    type Err = UnknownSimilarityKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "edit" | "edit_distance" | "edit-distance" | "levenshtein" => Ok(SimilarityKind::Edit),
            "tanimoto" => Ok(SimilarityKind::Tanimoto),
            "visual" => Ok(SimilarityKind::Visual),
            _ => Err(UnknownSimilarityKind(s.to_string())),
        }
    }
}

/// A configured similarity function.
#[derive(Clone)]
pub enum Similarity {
    Edit,
    Tanimoto {
        radius: usize,
        width: usize,
    },
    Visual {
        provider: Arc<dyn EmbeddingProvider>,
        renderer: Arc<dyn Renderer>,
    },
}

impl fmt::Debug for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Similarity::Edit => f.write_str("Edit"),
            Similarity::Tanimoto { radius, width } => f
                .debug_struct("Tanimoto")
                .field("radius", radius)
                .field("width", width)
                .finish(),
            Similarity::Visual { provider, .. } => f
                .debug_struct("Visual")
                .field("dim", &provider.dim())
                .finish_non_exhaustive(),
        }
    }
}

impl Similarity {
    /// Default configuration for a kind; visual uses the bundled stub.
    pub fn from_kind(kind: SimilarityKind) -> Self {
        match kind {
            SimilarityKind::Edit => Similarity::Edit,
            SimilarityKind::Tanimoto => Similarity::Tanimoto {
                radius: DEFAULT_RADIUS,
                width: DEFAULT_WIDTH,
            },
            SimilarityKind::Visual => Similarity::Visual {
                provider: Arc::new(StubProvider::default()),
                renderer: Arc::new(CanonicalSketch),
            },
        }
    }

    pub fn kind(&self) -> SimilarityKind {
        match self {
            Similarity::Edit => SimilarityKind::Edit,
            Similarity::Tanimoto { .. } => SimilarityKind::Tanimoto,
            Similarity::Visual { .. } => SimilarityKind::Visual,
        }
    }

    /// Similarity of `pred` to `truth` in [0, 1]. Edit similarity works on
    /// the raw strings; the molecular kinds need both to be valid molecules.
    pub fn evaluate(&self, pred: &str, truth: &str) -> Result<f64, SimilarityError> {
        match self {
            Similarity::Edit => Ok(edit_similarity(pred, truth)),
            Similarity::Tanimoto { radius, width } => {
                let fp = |s: &str| {
                    let g = parse_smiles(s)
                        .map_err(|e| SimilarityError::InvalidMolecule(e.to_string()))?;
                    morgan_fingerprint(&g, *radius, *width)
                };
                tanimoto(&fp(pred)?, &fp(truth)?)
            }
            Similarity::Visual { provider, renderer } => {
                visual_similarity(pred, truth, provider.as_ref(), renderer.as_ref())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in SimilarityKind::ALL {
            assert_eq!(k.name().parse::<SimilarityKind>().unwrap(), k);
        }
        assert_eq!("edit_distance".parse::<SimilarityKind>().unwrap(), SimilarityKind::Edit);
        assert!("cosine".parse::<SimilarityKind>().is_err());
    }

    #[test]
    fn self_similarity_is_one_for_every_kind() {
        for k in SimilarityKind::ALL {
            let sim = Similarity::from_kind(k);
            let v = sim.evaluate("c1ccccc1O", "Oc1ccccc1").unwrap();
            if k == SimilarityKind::Edit {
                assert!(v < 1.0);
            } else {
                assert!((v - 1.0).abs() < 1e-9, "{k}: {v}");
            }
            assert!((sim.evaluate("CCO", "CCO").unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
