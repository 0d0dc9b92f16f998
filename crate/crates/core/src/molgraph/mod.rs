//! Molecular graphs: SMILES parsing, valence checking and canonical SMILES.
//!
//! The supported dialect covers organic-subset atoms, bracket atoms with
//! isotope / tetrahedral chirality / hydrogen count / charge, the bond symbols
//! `- = # :`, branches, ring closures (digits and `%nn`), aromatic lowercase
//! atoms, the `*` wildcard and dot-separated fragments. Cis/trans markers
//! (`/`, `\`) are read as plain single bonds and otherwise discarded.

mod canon;
mod parse;
mod valence;
mod write;

use std::fmt;

use thiserror::Error;

pub use canon::{
    canonical_smiles, canonicalize, canonicalize_unchecked, exact_match, CanonError,
    CorruptGroundTruth, SmilesError, StereoMode,
};
pub use parse::{parse_smiles, ParseError, ParseErrorKind};
pub use valence::{
    check_valence, check_valence_with, hydrogen_counts, validate_smiles, ValenceTable,
    ValenceTableError, ValidityReport, Violation, ViolationReason,
};
pub use write::render_random;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
    B,
    H,
    Wildcard,
}

impl Element {
    pub const ALL: [Element; 12] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::B,
        Element::H,
        Element::Wildcard,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::B => "B",
            Element::H => "H",
            Element::Wildcard => "*",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    /// Elements that may be written without brackets.
    pub fn in_organic_subset(self) -> bool {
        !matches!(self, Element::H)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Small integer code used by invariants and hashes.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    /// Integral contribution to the bond-order sum; aromatic bonds are handled
    /// separately by the valence model.
    pub fn integral(self) -> Option<u32> {
        match self {
            BondOrder::Single => Some(1),
            BondOrder::Double => Some(2),
            BondOrder::Triple => Some(3),
            BondOrder::Aromatic => None,
        }
    }
}

/// One entry in the recorded neighbor order of a stereocenter. `Implicit`
/// stands for the bracket hydrogen or, on three-connected centers, the lone
/// pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeighborRef {
    Atom(usize),
    Implicit,
}

/// `@` is counterclockwise, `@@` clockwise, looking from the first neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Winding {
    Clockwise,
    CounterClockwise,
}

impl Winding {
    pub fn flipped(self) -> Winding {
        match self {
            Winding::Clockwise => Winding::CounterClockwise,
            Winding::CounterClockwise => Winding::Clockwise,
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Winding::Clockwise => "@@",
            Winding::CounterClockwise => "@",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tetrahedral {
    pub winding: Winding,
    pub neighbors: [NeighborRef; 4],
}

impl Tetrahedral {
    /// Winding of the same center when its neighbors are listed in `order`.
    /// `order` must be a permutation of `self.neighbors`.
    pub fn winding_for(&self, order: &[NeighborRef; 4]) -> Winding {
        if permutation_is_odd(&self.neighbors, order) {
            self.winding.flipped()
        } else {
            self.winding
        }
    }
}

/// Parity of the permutation taking `from` to `to` (same elements, distinct).
pub(crate) fn permutation_is_odd(from: &[NeighborRef; 4], to: &[NeighborRef; 4]) -> bool {
    let mut perm = [0usize; 4];
    for (i, item) in to.iter().enumerate() {
        perm[i] = from
            .iter()
            .position(|x| x == item)
            .expect("stereo neighbor lists must be permutations of each other");
    }
    let mut odd = false;
    let mut seen = [false; 4];
    for start in 0..4 {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut j = start;
        while !seen[j] {
            seen[j] = true;
            j = perm[j];
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    odd
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
    pub isotope: Option<u16>,
    /// `Some` exactly for bracket atoms.
    pub explicit_h: Option<u8>,
    pub stereo: Option<Tetrahedral>,
    /// Label of an R-group style wildcard (`[1*]`, `[*:1]`).
    pub rgroup: Option<u16>,
}

impl Atom {
    pub fn organic(element: Element, aromatic: bool) -> Self {
        Self {
            element,
            aromatic,
            charge: 0,
            isotope: None,
            explicit_h: None,
            stereo: None,
            rgroup: None,
        }
    }

    pub fn is_wildcard(&self) -> bool {
        self.element == Element::Wildcard
    }

    pub fn is_bracket(&self) -> bool {
        self.explicit_h.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if atom == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("bond {bond} references atom {atom}, but the graph has {n_atoms} atoms")]
    DanglingEndpoint {
        bond: usize,
        atom: usize,
        n_atoms: usize,
    },
    #[error("bond {0} joins an atom to itself")]
    SelfLoop(usize),
    #[error("bond {0} duplicates an earlier bond")]
    DuplicateBond(usize),
    #[error("atom {0}: {1}")]
    InvalidAtom(usize, &'static str),
}

/// Attributed molecular graph. Adjacency is derived at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    n_components: usize,
}

impl MolGraph {
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let n = atoms.len();
        for (i, atom) in atoms.iter().enumerate() {
            if atom.aromatic && !atom.element.can_be_aromatic() {
                return Err(GraphError::InvalidAtom(i, "element cannot be aromatic"));
            }
            if atom.is_wildcard()
                && (atom.charge != 0 || atom.isotope.is_some() || atom.stereo.is_some())
            {
                return Err(GraphError::InvalidAtom(
                    i,
                    "wildcards carry no charge, isotope or chirality",
                ));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, bond) in bonds.iter().enumerate() {
            for atom in [bond.a, bond.b] {
                if atom >= n {
                    return Err(GraphError::DanglingEndpoint {
                        bond: k,
                        atom,
                        n_atoms: n,
                    });
                }
            }
            if bond.a == bond.b {
                return Err(GraphError::SelfLoop(k));
            }
            if adjacency[bond.a].iter().any(|&(nbr, _)| nbr == bond.b) {
                return Err(GraphError::DuplicateBond(k));
            }
            adjacency[bond.a].push((bond.b, k));
            adjacency[bond.b].push((bond.a, k));
        }
        let mut graph = Self {
            atoms,
            bonds,
            adjacency,
            n_components: 0,
        };
        graph.n_components = graph.components().1;
        Ok(graph)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbor, bond index)` pairs in bond insertion order.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(nbr, _)| nbr == b)
            .map(|&(_, k)| &self.bonds[k])
    }

    pub fn is_multi_fragment(&self) -> bool {
        self.n_components > 1
    }

    pub fn fragment_count(&self) -> usize {
        self.n_components
    }

    /// Component id per atom and the number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.atoms.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// Number of independent cycles (bonds − atoms + components).
    pub fn ring_count(&self) -> usize {
        (self.bonds.len() + self.n_components).saturating_sub(self.atoms.len())
    }

    /// Per-bond flag: the bond lies on a cycle (is not a bridge).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut in_ring = vec![true; self.bonds.len()];
        let mut timer = 0;
        // Iterative Tarjan bridge search: (vertex, parent bond, next adjacency slot).
        let mut stack: Vec<(usize, usize, usize)> = Vec::new();
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            stack.push((root, usize::MAX, 0));
            while let Some(&mut (u, parent_bond, ref mut slot)) = stack.last_mut() {
                if *slot < self.adjacency[u].len() {
                    let (v, k) = self.adjacency[u][*slot];
                    *slot += 1;
                    if k == parent_bond {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, k, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            in_ring[parent_bond] = false;
                        }
                    }
                }
            }
        }
        in_ring
    }

    /// Per-atom flag: the atom lies on at least one cycle.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let ring_bonds = self.ring_bonds();
        let mut flags = vec![false; self.atoms.len()];
        for (k, bond) in self.bonds.iter().enumerate() {
            if ring_bonds[k] {
                flags[bond.a] = true;
                flags[bond.b] = true;
            }
        }
        flags
    }

    /// Copy of the graph with R-group labels removed from every wildcard.
    pub fn without_rgroup_labels(&self) -> MolGraph {
        let mut out = self.clone();
        for atom in &mut out.atoms {
            atom.rgroup = None;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_parity() {
        use NeighborRef::Atom as A;
        let base = [A(0), A(1), A(2), A(3)];
        assert!(!permutation_is_odd(&base, &base));
        assert!(permutation_is_odd(&base, &[A(1), A(0), A(2), A(3)]));
        assert!(!permutation_is_odd(&base, &[A(1), A(2), A(0), A(3)]));
        assert!(!permutation_is_odd(&base, &[A(3), A(2), A(1), A(0)]));
    }

    #[test]
    fn ring_flags_on_fused_and_chain_bonds() {
        let g = parse_smiles("C1CC1CC").unwrap();
        assert_eq!(g.ring_atoms(), vec![true, true, true, false, false]);
        assert_eq!(g.ring_count(), 1);
        let g = parse_smiles("c1ccc2ccccc2c1").unwrap();
        assert!(g.ring_atoms().iter().all(|&r| r));
        assert_eq!(g.ring_count(), 2);
    }

    #[test]
    fn rejects_duplicate_and_self_bonds() {
        let atoms = vec![Atom::organic(Element::C, false); 2];
        let dup = vec![
            Bond { a: 0, b: 1, order: BondOrder::Single },
            Bond { a: 1, b: 0, order: BondOrder::Double },
        ];
        assert_eq!(
            MolGraph::new(atoms.clone(), dup).unwrap_err(),
            GraphError::DuplicateBond(1)
        );
        let looped = vec![Bond { a: 1, b: 1, order: BondOrder::Single }];
        assert_eq!(MolGraph::new(atoms, looped).unwrap_err(), GraphError::SelfLoop(0));
    }

    #[test]
    fn fragments_are_counted() {
        let g = parse_smiles("CC.O").unwrap();
        assert!(g.is_multi_fragment());
        assert_eq!(g.fragment_count(), 2);
    }
}
