use thiserror::Error;

use super::write::{TooManyRings, WriteContext};
use super::{check_valence, parse_smiles, MolGraph, ParseError, ValidityReport};

/// Past this many leaves the search stops branching and follows the first
/// member of each tied class.
const LEAF_BUDGET: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StereoMode {
    Strip,
    #[default]
    PreserveTetrahedral,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonError {
    #[error("invalid molecule: {0}")]
    InvalidMolecule(ValidityReport),
    #[error("more than 99 ring closures would be open at once")]
    TooManyRingClosures,
}

impl From<TooManyRings> for CanonError {
    fn from(_: TooManyRings) -> Self {
        CanonError::TooManyRingClosures
    }
}

/// Parse or canonicalization failure for a SMILES string.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Canon(#[from] CanonError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ground truth {text:?} is not a valid molecule: {source}")]
pub struct CorruptGroundTruth {
    pub text: String,
    pub source: SmilesError,
}

/// Canonical SMILES of a valid graph.
pub fn canonicalize(g: &MolGraph, mode: StereoMode) -> Result<String, CanonError> {
    let report = check_valence(g);
    if !report.valid {
        return Err(CanonError::InvalidMolecule(report));
    }
    canonicalize_unchecked(g, mode)
}

/// Canonical SMILES without the valence precondition.
///
/// Atoms are first partitioned by refining local invariants over neighbor
/// classes until stable. Remaining ties are resolved by trying each member
/// of the first tied class as the distinguished atom and refining again;
/// every fully split leaf is written out and the lexicographically smallest
/// string wins, so the result does not depend on the input atom order.
pub fn canonicalize_unchecked(g: &MolGraph, mode: StereoMode) -> Result<String, CanonError> {
    if g.atom_count() == 0 {
        return Ok(String::new());
    }
    let stereo = mode == StereoMode::PreserveTetrahedral;
    let writer = WriteContext::new(g, stereo);
    let mut search = Search {
        neighbors: (0..g.atom_count())
            .map(|i| {
                g.neighbors(i)
                    .iter()
                    .map(|&(v, k)| (v, g.bonds()[k].order.code()))
                    .collect()
            })
            .collect(),
        writer,
        best: None,
        leaves: 0,
    };
    let mut classes = initial_classes(g, &search.writer.hydrogens, stereo);
    search.refine(&mut classes);
    search.run(classes)?;
    Ok(search.best.expect("a non-empty graph yields at least one leaf"))
}

/// Parse and canonicalize in one step, including the valence check.
pub fn canonical_smiles(text: &str, mode: StereoMode) -> Result<String, SmilesError> {
    let g = parse_smiles(text)?;
    Ok(canonicalize(&g, mode)?)
}

/// Whether `pred` and `truth` denote the same molecule. Any failure on the
/// prediction side is a mismatch; a bad `truth` is an error.
pub fn exact_match(pred: &str, truth: &str, mode: StereoMode) -> Result<bool, CorruptGroundTruth> {
    let truth_canon = canonical_smiles(truth, mode).map_err(|source| CorruptGroundTruth {
        text: truth.to_string(),
        source,
    })?;
    Ok(canonical_smiles(pred, mode).is_ok_and(|p| p == truth_canon))
}

fn initial_classes(g: &MolGraph, hydrogens: &[u32], stereo: bool) -> Vec<u32> {
    let ring = g.ring_atoms();
    let keys: Vec<_> = g
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            (
                g.degree(i),
                a.element.ordinal(),
                a.aromatic,
                a.charge,
                a.isotope,
                hydrogens[i],
                ring[i],
                a.rgroup,
                stereo && a.stereo.is_some(),
            )
        })
        .collect();
    dense_ranks(&keys)
}

/// Rank of each key among the distinct keys, in sorted order.
fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<u32> {
    let mut distinct = keys.to_vec();
    distinct.sort();
    distinct.dedup();
    keys.iter()
        .map(|k| distinct.binary_search(k).expect("key is present") as u32)
        .collect()
}

fn class_count(classes: &[u32]) -> usize {
    classes.iter().max().map_or(0, |&m| m as usize + 1)
}

struct Search<'a> {
    neighbors: Vec<Vec<(usize, u8)>>,
    writer: WriteContext<'a>,
    best: Option<String>,
    leaves: usize,
}

impl Search<'_> {
    /// Split classes by the multiset of (bond code, neighbor class) until the
    /// partition is stable. Existing class order is preserved.
    fn refine(&self, classes: &mut Vec<u32>) {
        let mut count = class_count(classes);
        loop {
            let keys: Vec<(u32, Vec<(u8, u32)>)> = (0..classes.len())
                .map(|i| {
                    let mut env: Vec<(u8, u32)> = self.neighbors[i]
                        .iter()
                        .map(|&(v, code)| (code, classes[v]))
                        .collect();
                    env.sort_unstable();
                    (classes[i], env)
                })
                .collect();
            let next = dense_ranks(&keys);
            let next_count = class_count(&next);
            *classes = next;
            if next_count == count {
                return;
            }
            count = next_count;
        }
    }

    fn run(&mut self, classes: Vec<u32>) -> Result<(), CanonError> {
        let n = classes.len();
        if class_count(&classes) == n {
            let s = self.writer.write(&classes)?;
            self.leaves += 1;
            if self.best.as_ref().is_none_or(|b| s < *b) {
                self.best = Some(s);
            }
            return Ok(());
        }
        let mut sizes = vec![0usize; n];
        for &c in &classes {
            sizes[c as usize] += 1;
        }
        let target = sizes.iter().position(|&s| s > 1).expect("some class is tied") as u32;
        let members: Vec<usize> = (0..n).filter(|&i| classes[i] == target).collect();
        let explore = if self.leaves >= LEAF_BUDGET {
            &members[..1]
        } else {
            &members[..]
        };
        for &chosen in explore {
            let mut next: Vec<u32> = classes
                .iter()
                .enumerate()
                .map(|(i, &c)| 2 * c + u32::from(c == target && i != chosen))
                .collect();
            next = dense_ranks(&next);
            self.refine(&mut next);
            self.run(next)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon(s: &str) -> String {
        canonical_smiles(s, StereoMode::PreserveTetrahedral).unwrap()
    }

    #[test]
    fn equivalent_spellings_agree() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("C1=CC=CC=C1"), canon("C=1C=CC=CC=1"));
        assert_eq!(canon("c1ccc2ccccc2c1"), canon("c1cccc2c1cccc2"));
        assert_eq!(canon("OC(=O)C"), canon("CC(O)=O"));
        assert_ne!(canon("CCO"), canon("CCN"));
        assert_ne!(canon("CC=O"), canon("CCO"));
    }

    #[test]
    fn output_is_a_fixed_point() {
        for s in ["CC(=O)Nc1ccc(O)cc1", "N[C@@H](C)C(=O)O", "C1CC2CCC1C2", "[NH4+].[Cl-]"] {
            let Ok(c) = canonical_smiles(s, StereoMode::PreserveTetrahedral) else {
                continue;
            };
            assert_eq!(canon(&c), c);
        }
    }

    #[test]
    fn chirality_survives_and_distinguishes_enantiomers() {
        let l = canon("N[C@@H](C)C(=O)O");
        let d = canon("N[C@H](C)C(=O)O");
        assert_ne!(l, d);
        assert_eq!(l, canon("C[C@H](N)C(=O)O"));
        assert_eq!(l, canon("OC(=O)[C@H](C)N"));
        let strip = |s| canonical_smiles(s, StereoMode::Strip).unwrap();
        assert_eq!(strip("N[C@@H](C)C(=O)O"), strip("N[C@H](C)C(=O)O"));
        assert!(!strip("N[C@@H](C)C(=O)O").contains('@'));
    }

    #[test]
    fn invalid_molecule_is_rejected() {
        let g = parse_smiles("C(C)(C)(C)(C)C").unwrap();
        assert!(matches!(
            canonicalize(&g, StereoMode::Strip),
            Err(CanonError::InvalidMolecule(_))
        ));
    }

    #[test]
    fn exact_match_cases() {
        let m = StereoMode::PreserveTetrahedral;
        assert!(exact_match("CCO", "OCC", m).unwrap());
        assert!(!exact_match("CCO", "CCN", m).unwrap());
        assert!(!exact_match("C(", "CCO", m).unwrap());
        assert!(exact_match("CCO", "C(", m).is_err());
    }
}
