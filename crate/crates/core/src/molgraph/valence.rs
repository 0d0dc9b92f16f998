use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

use super::{parse_smiles, Element, MolGraph, ParseErrorKind};

const DEFAULT_TABLE: &str = include_str!("../../data/valence.txt");

#[derive(Debug, Error)]
pub enum ValenceTableError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("element {0} is listed twice")]
    Duplicate(Element),
    #[error("no entry for element {0}")]
    Missing(Element),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Allowed valences per element, lowest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValenceTable {
    allowed: HashMap<Element, Vec<u32>>,
}

impl ValenceTable {
    /// Parse the `SYMBOL v[,v...]` format. Blank lines and `#` comments are
    /// skipped. Every element except the wildcard must appear.
    pub fn parse(text: &str) -> Result<Self, ValenceTableError> {
        let mut allowed = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |reason: &str| ValenceTableError::Syntax {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut parts = line.split_whitespace();
            let symbol = parts.next().ok_or_else(|| syntax("missing symbol"))?;
            let values = parts.next().ok_or_else(|| syntax("missing valences"))?;
            if parts.next().is_some() {
                return Err(syntax("trailing fields"));
            }
            let element = Element::from_symbol(symbol)
                .filter(|e| *e != Element::Wildcard)
                .ok_or_else(|| syntax(&format!("unsupported element '{symbol}'")))?;
            let mut list = values
                .split(',')
                .map(|v| v.trim().parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| syntax("valences must be non-negative integers"))?;
            list.sort_unstable();
            list.dedup();
            if allowed.insert(element, list).is_some() {
                return Err(ValenceTableError::Duplicate(element));
            }
        }
        for e in Element::ALL {
            if e != Element::Wildcard && !allowed.contains_key(&e) {
                return Err(ValenceTableError::Missing(e));
            }
        }
        Ok(Self { allowed })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ValenceTableError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The bundled table.
    pub fn standard() -> &'static ValenceTable {
        static TABLE: OnceLock<ValenceTable> = OnceLock::new();
        TABLE.get_or_init(|| ValenceTable::parse(DEFAULT_TABLE).expect("bundled valence table"))
    }

    pub fn allowed(&self, element: Element) -> &[u32] {
        self.allowed.get(&element).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Allowed valences after applying the formal-charge shift.
    pub fn allowed_with_charge(&self, element: Element, charge: i8) -> Vec<u32> {
        let q = i32::from(charge);
        let shift = match element {
            Element::C | Element::H => -q.abs(),
            Element::B => -q,
            _ => q,
        };
        self.allowed(element)
            .iter()
            .filter_map(|&v| u32::try_from(v as i32 + shift).ok())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationReason {
    ValenceExceeded,
    UnmatchedRingClosure,
    AromaticOutsideRing,
    ParseError,
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationReason::ValenceExceeded => "valence exceeded",
            ViolationReason::UnmatchedRingClosure => "unmatched ring closure",
            ViolationReason::AromaticOutsideRing => "aromatic atom outside ring",
            ViolationReason::ParseError => "parse error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `None` for failures that happen before there is a graph.
    pub atom: Option<usize>,
    pub reason: ViolationReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            valid: violations.is_empty(),
            violations,
        }
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            match v.atom {
                Some(a) => write!(f, "{} at atom {a}", v.reason)?,
                None => write!(f, "{}", v.reason)?,
            }
        }
        Ok(())
    }
}

/// Σ integral bond orders and the number of aromatic bonds at atom `i`.
fn bond_terms(g: &MolGraph, i: usize) -> (u32, u32) {
    let mut integral = 0;
    let mut aromatic = 0;
    for &(_, k) in g.neighbors(i) {
        match g.bonds()[k].order.integral() {
            Some(v) => integral += v,
            None => aromatic += 1,
        }
    }
    (integral, aromatic)
}

/// Hydrogens an unbracketed atom at position `i` would carry, whatever its
/// actual bracket status.
pub(crate) fn organic_implicit_h(g: &MolGraph, i: usize, table: &ValenceTable) -> u32 {
    let atom = g.atom(i);
    if atom.is_wildcard() {
        return 0;
    }
    let (integral, aromatic) = bond_terms(g, i);
    let allowed = table.allowed(atom.element);
    if atom.aromatic {
        let primary = allowed.first().copied().unwrap_or(0);
        return primary.saturating_sub(integral + aromatic + 1);
    }
    let used = integral + (3 * aromatic) / 2;
    allowed
        .iter()
        .find(|&&v| v >= used)
        .map_or(0, |&v| v - used)
}

/// Total hydrogen count per atom: explicit for bracket atoms, implicit for
/// the organic subset, zero for wildcards.
pub fn hydrogen_counts(g: &MolGraph) -> Vec<u32> {
    hydrogen_counts_with(g, ValenceTable::standard())
}

pub(crate) fn hydrogen_counts_with(g: &MolGraph, table: &ValenceTable) -> Vec<u32> {
    (0..g.atom_count())
        .map(|i| match g.atom(i).explicit_h {
            Some(h) => u32::from(h),
            None => organic_implicit_h(g, i, table),
        })
        .collect()
}

pub fn check_valence(g: &MolGraph) -> ValidityReport {
    check_valence_with(g, ValenceTable::standard())
}

/// Valence rule: integral bond orders plus ⌊1.5 · aromatic bonds⌋ plus
/// hydrogens must not exceed the largest charge-adjusted allowed valence. An
/// aromatic atom may exceed it by one, which admits pyrrole-type nitrogen and
/// furan-type oxygen that donate a lone pair to the ring.
pub fn check_valence_with(g: &MolGraph, table: &ValenceTable) -> ValidityReport {
    let hydrogens = hydrogen_counts_with(g, table);
    let ring = g.ring_atoms();
    let mut violations = Vec::new();
    for (i, atom) in g.atoms().iter().enumerate() {
        if atom.is_wildcard() {
            continue;
        }
        if atom.aromatic && !ring[i] {
            violations.push(Violation {
                atom: Some(i),
                reason: ViolationReason::AromaticOutsideRing,
            });
        }
        let (integral, aromatic) = bond_terms(g, i);
        let used = integral + (3 * aromatic) / 2 + hydrogens[i];
        let max = table
            .allowed_with_charge(atom.element, atom.charge)
            .into_iter()
            .max();
        let ok = match max {
            None => false,
            Some(max) => used <= max || (atom.aromatic && used <= max + 1),
        };
        if !ok {
            violations.push(Violation {
                atom: Some(i),
                reason: ViolationReason::ValenceExceeded,
            });
        }
    }
    ValidityReport::from_violations(violations)
}

/// Parse and check in one go, folding parse failures into the report.
pub fn validate_smiles(text: &str) -> ValidityReport {
    match parse_smiles(text) {
        Ok(g) => check_valence(&g),
        Err(e) => {
            let reason = match e.kind {
                ParseErrorKind::UnmatchedRingClosure(_) => ViolationReason::UnmatchedRingClosure,
                _ => ViolationReason::ParseError,
            };
            ValidityReport::from_violations(vec![Violation { atom: None, reason }])
        }
    }
}
