use std::collections::HashMap;

use thiserror::Error;

use super::{Atom, Bond, BondOrder, Element, MolGraph, NeighborRef, Tetrahedral, Winding};

/// Symbols of the periodic table, used only to tell "unsupported element"
/// apart from plain garbage inside brackets.
const PERIODIC: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Aromatic bracket symbols from the wider SMILES grammar that this dialect
/// does not support.
const UNSUPPORTED_AROMATIC: &[&str] = &["se", "as", "te"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("empty input")]
    Empty,
    #[error("unbalanced parentheses")]
    UnbalancedParentheses,
    #[error("unmatched ring closure {0}")]
    UnmatchedRingClosure(u16),
    #[error("conflicting bond symbols on ring closure {0}")]
    RingBondConflict(u16),
    #[error("ring closure {0} bonds an atom to itself or repeats an existing bond")]
    InvalidRingBond(u16),
    #[error("unknown element '{0}'")]
    UnknownElement(String),
    #[error("malformed bracket atom: {0}")]
    MalformedBracketAtom(&'static str),
    #[error("dangling bond symbol")]
    DanglingBond,
    #[error("unexpected character '{0}'")]
    UnexpectedCharacter(char),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    /// Byte offset into the caller's (untrimmed) string.
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Parse one SMILES string into a molecular graph.
pub fn parse_smiles(text: &str) -> Result<MolGraph, ParseError> {
    let lead = text.len() - text.trim_start().len();
    let body = text.trim();
    if body.is_empty() {
        return Err(ParseError {
            offset: 0,
            kind: ParseErrorKind::Empty,
        });
    }
    Parser::new(body.as_bytes())
        .run()
        .map_err(|e| ParseError {
            offset: e.offset + lead,
            kind: e.kind,
        })
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Atom(usize),
    Ring(u16),
}

#[derive(Debug, Clone, Copy)]
struct OpenRing {
    atom: usize,
    bond: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Neighbor order per atom as written, for stereo bookkeeping.
    order: Vec<Vec<Slot>>,
    has_from: Vec<bool>,
    winding: Vec<Option<Winding>>,
    rings: HashMap<u16, OpenRing>,
}

fn err<T>(offset: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
    Err(ParseError { offset, kind })
}

impl<'a> Parser<'a> {
    fn new(s: &'a [u8]) -> Self {
        Self {
            s,
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            order: Vec::new(),
            has_from: Vec::new(),
            winding: Vec::new(),
            rings: HashMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<u8> {
        self.s.get(self.pos + k).copied()
    }

    fn run(mut self) -> Result<MolGraph, ParseError> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        // Set right after '(' so that "()" can be rejected.
        let mut branch_opened = false;

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if prev.is_none() || pending.is_some() {
                        return err(start, ParseErrorKind::DanglingBond);
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    };
                    pending = Some((order, start));
                    self.pos += 1;
                }
                b'(' => {
                    let Some(p) = prev else {
                        return err(start, ParseErrorKind::UnexpectedCharacter('('));
                    };
                    if let Some((_, at)) = pending {
                        return err(at, ParseErrorKind::DanglingBond);
                    }
                    if branch_opened {
                        return err(start, ParseErrorKind::UnexpectedCharacter('('));
                    }
                    branches.push((p, start));
                    branch_opened = true;
                    self.pos += 1;
                    continue;
                }
                b')' => {
                    if let Some((_, at)) = pending {
                        return err(at, ParseErrorKind::DanglingBond);
                    }
                    if branch_opened {
                        return err(start, ParseErrorKind::UnexpectedCharacter(')'));
                    }
                    let Some((p, _)) = branches.pop() else {
                        return err(start, ParseErrorKind::UnbalancedParentheses);
                    };
                    prev = Some(p);
                    self.pos += 1;
                }
                b'.' => {
                    if let Some((_, at)) = pending {
                        return err(at, ParseErrorKind::DanglingBond);
                    }
                    if let Some(&(_, at)) = branches.last() {
                        return err(at, ParseErrorKind::UnbalancedParentheses);
                    }
                    if prev.is_none() {
                        return err(start, ParseErrorKind::UnexpectedCharacter('.'));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return err(start, ParseErrorKind::UnexpectedCharacter(c as char));
                    };
                    if branch_opened {
                        return err(start, ParseErrorKind::UnexpectedCharacter(c as char));
                    }
                    let number = self.ring_number()?;
                    let bond = pending.take().map(|(o, _)| o);
                    self.ring_bond(p, number, bond, start)?;
                }
                _ => {
                    let atom = self.atom()?;
                    let idx = self.push_atom(atom.0, atom.1);
                    if let Some(p) = prev {
                        let order = pending
                            .take()
                            .map(|(o, _)| o)
                            .unwrap_or_else(|| self.implicit_order(p, idx));
                        self.bonds.push(Bond { a: p, b: idx, order });
                        self.order[p].push(Slot::Atom(idx));
                        self.order[idx].push(Slot::Atom(p));
                        self.has_from[idx] = true;
                    } else if let Some((_, at)) = pending {
                        return err(at, ParseErrorKind::DanglingBond);
                    }
                    prev = Some(idx);
                }
            }
            branch_opened = false;
        }

        if let Some((_, at)) = pending {
            return err(at, ParseErrorKind::DanglingBond);
        }
        if branch_opened {
            return err(self.pos, ParseErrorKind::UnbalancedParentheses);
        }
        if let Some(&(_, at)) = branches.last() {
            return err(at, ParseErrorKind::UnbalancedParentheses);
        }
        if let Some((&number, open)) = self.rings.iter().min_by_key(|(_, o)| o.offset) {
            return err(open.offset, ParseErrorKind::UnmatchedRingClosure(number));
        }
        if prev.is_none() {
            return err(self.pos, ParseErrorKind::DanglingBond);
        }
        self.finish()
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn push_atom(&mut self, atom: Atom, winding: Option<Winding>) -> usize {
        self.atoms.push(atom);
        self.order.push(Vec::new());
        self.has_from.push(false);
        self.winding.push(winding);
        self.atoms.len() - 1
    }

    fn ring_number(&mut self) -> Result<u16, ParseError> {
        let start = self.pos;
        let c = self.peek().unwrap_or(b'%');
        if c == b'%' {
            match (self.peek_at(1), self.peek_at(2)) {
                (Some(d1), Some(d2)) if d1.is_ascii_digit() && d2.is_ascii_digit() => {
                    self.pos += 3;
                    Ok(u16::from(d1 - b'0') * 10 + u16::from(d2 - b'0'))
                }
                _ => err(start, ParseErrorKind::UnexpectedCharacter('%')),
            }
        } else {
            self.pos += 1;
            Ok(u16::from(c - b'0'))
        }
    }

    fn ring_bond(
        &mut self,
        atom: usize,
        number: u16,
        bond: Option<BondOrder>,
        offset: usize,
    ) -> Result<(), ParseError> {
        match self.rings.remove(&number) {
            None => {
                self.order[atom].push(Slot::Ring(number));
                self.rings.insert(number, OpenRing { atom, bond, offset });
            }
            Some(open) => {
                let order = match (open.bond, bond) {
                    (Some(a), Some(b)) if a != b => {
                        return err(offset, ParseErrorKind::RingBondConflict(number))
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.implicit_order(open.atom, atom),
                };
                let duplicate = self.bonds.iter().any(|b| {
                    (b.a == atom && b.b == open.atom) || (b.a == open.atom && b.b == atom)
                });
                if open.atom == atom || duplicate {
                    return err(offset, ParseErrorKind::InvalidRingBond(number));
                }
                self.bonds.push(Bond {
                    a: open.atom,
                    b: atom,
                    order,
                });
                for slot in self.order[open.atom].iter_mut() {
                    if matches!(slot, Slot::Ring(n) if *n == number) {
                        *slot = Slot::Atom(atom);
                        break;
                    }
                }
                self.order[atom].push(Slot::Atom(open.atom));
            }
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<(Atom, Option<Winding>), ParseError> {
        let start = self.pos;
        let c = self.peek().expect("caller checked for input");
        let two = |p: &Self| p.peek_at(1);
        let (element, aromatic, width) = match c {
            b'[' => return self.bracket_atom(),
            b'*' => (Element::Wildcard, false, 1),
            b'C' if two(self) == Some(b'l') => (Element::Cl, false, 2),
            b'B' if two(self) == Some(b'r') => (Element::Br, false, 2),
            b'B' => (Element::B, false, 1),
            b'C' => (Element::C, false, 1),
            b'N' => (Element::N, false, 1),
            b'O' => (Element::O, false, 1),
            b'P' => (Element::P, false, 1),
            b'S' => (Element::S, false, 1),
            b'F' => (Element::F, false, 1),
            b'I' => (Element::I, false, 1),
            b'b' => (Element::B, true, 1),
            b'c' => (Element::C, true, 1),
            b'n' => (Element::N, true, 1),
            b'o' => (Element::O, true, 1),
            b'p' => (Element::P, true, 1),
            b's' => (Element::S, true, 1),
            c if c.is_ascii_alphabetic() => {
                let mut sym = (c as char).to_string();
                if let Some(n) = two(self).filter(u8::is_ascii_lowercase) {
                    let cand = format!("{sym}{}", n as char);
                    if PERIODIC.contains(&cand.as_str()) {
                        sym = cand;
                    }
                }
                return err(start, ParseErrorKind::UnknownElement(sym));
            }
            other => return err(start, ParseErrorKind::UnexpectedCharacter(other as char)),
        };
        self.pos += width;
        Ok((Atom::organic(element, aromatic), None))
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .or(Some(u32::MAX))
    }

    fn bracket_atom(&mut self) -> Result<(Atom, Option<Winding>), ParseError> {
        let open = self.pos;
        self.pos += 1;
        let malformed = |what| err(open, ParseErrorKind::MalformedBracketAtom(what));

        let isotope = match self.number() {
            None => None,
            Some(v) if (1..=u32::from(u16::MAX)).contains(&v) => Some(v as u16),
            Some(_) => return malformed("isotope out of range"),
        };

        let sym_start = self.pos;
        let (element, aromatic) = match self.peek() {
            Some(b'*') => {
                self.pos += 1;
                (Element::Wildcard, false)
            }
            Some(c) if c.is_ascii_uppercase() => {
                let pair = self
                    .peek_at(1)
                    .filter(u8::is_ascii_lowercase)
                    .map(|n| format!("{}{}", c as char, n as char));
                match pair {
                    Some(p) if PERIODIC.contains(&p.as_str()) => match Element::from_symbol(&p) {
                        Some(e) => {
                            self.pos += 2;
                            (e, false)
                        }
                        None => return err(sym_start, ParseErrorKind::UnknownElement(p)),
                    },
                    _ => {
                        let single = (c as char).to_string();
                        match Element::from_symbol(&single) {
                            Some(e) => {
                                self.pos += 1;
                                (e, false)
                            }
                            None if PERIODIC.contains(&single.as_str()) => {
                                return err(sym_start, ParseErrorKind::UnknownElement(single))
                            }
                            None => return malformed("expected an element symbol"),
                        }
                    }
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let pair = self
                    .peek_at(1)
                    .filter(u8::is_ascii_lowercase)
                    .map(|n| format!("{}{}", c as char, n as char));
                if let Some(p) = pair.filter(|p| UNSUPPORTED_AROMATIC.contains(&p.as_str())) {
                    return err(sym_start, ParseErrorKind::UnknownElement(p));
                }
                let upper = (c.to_ascii_uppercase() as char).to_string();
                match Element::from_symbol(&upper).filter(|e| e.can_be_aromatic()) {
                    Some(e) => {
                        self.pos += 1;
                        (e, true)
                    }
                    None => {
                        return err(sym_start, ParseErrorKind::UnknownElement((c as char).into()))
                    }
                }
            }
            _ => return malformed("expected an element symbol"),
        };

        let mut winding = None;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
                winding = Some(Winding::Clockwise);
            } else if self.peek().is_some_and(|c| c.is_ascii_uppercase() && c != b'H') {
                return malformed("only @ and @@ chirality is supported");
            } else {
                winding = Some(Winding::CounterClockwise);
            }
        }

        let mut hcount = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hcount = match self.number() {
                None => 1,
                Some(v) if v <= 9 => v as u8,
                Some(_) => return malformed("hydrogen count out of range"),
            };
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let unit = if sign == b'+' { 1 } else { -1 };
            charge = unit;
            if let Some(v) = self.number() {
                if v > 15 {
                    return malformed("charge out of range");
                }
                charge = unit * v as i32;
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
                if charge.abs() > 15 {
                    return malformed("charge out of range");
                }
            }
        }

        let mut class = None;
        if self.peek() == Some(b':') {
            self.pos += 1;
            match self.number() {
                Some(v) => class = Some(v),
                None => return malformed("expected an atom class after ':'"),
            }
        }

        if self.peek() != Some(b']') {
            return malformed("expected ']'");
        }
        self.pos += 1;

        let mut atom = Atom {
            element,
            aromatic,
            charge: charge as i8,
            isotope,
            explicit_h: Some(hcount),
            stereo: None,
            rgroup: None,
        };
        if element == Element::Wildcard {
            if charge != 0 || winding.is_some() || hcount != 0 {
                return malformed("wildcards carry no charge, chirality or hydrogens");
            }
            let label = isotope.map(u32::from).or(class);
            atom.isotope = None;
            atom.rgroup = match label {
                Some(v) if v <= u32::from(u16::MAX) => Some(v as u16),
                Some(_) => return malformed("R-group label out of range"),
                None => None,
            };
        }
        Ok((atom, winding))
    }

    fn finish(mut self) -> Result<MolGraph, ParseError> {
        for i in 0..self.atoms.len() {
            let Some(winding) = self.winding[i] else {
                continue;
            };
            let mut refs: Vec<NeighborRef> = self.order[i]
                .iter()
                .map(|s| match *s {
                    Slot::Atom(a) => NeighborRef::Atom(a),
                    Slot::Ring(_) => unreachable!("all rings are closed at this point"),
                })
                .collect();
            let h = self.atoms[i].explicit_h.unwrap_or(0);
            if h == 1 || (h == 0 && refs.len() == 3) {
                let at = usize::from(self.has_from[i]);
                refs.insert(at, NeighborRef::Implicit);
            }
            // Anything other than a proper tetrahedral center is not stereo.
            if let Ok(neighbors) = <[NeighborRef; 4]>::try_from(refs) {
                self.atoms[i].stereo = Some(Tetrahedral { winding, neighbors });
            }
        }
        Ok(MolGraph::new(self.atoms, self.bonds)
            .expect("parser maintains graph invariants"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(s: &str) -> ParseErrorKind {
        parse_smiles(s).unwrap_err().kind
    }

    #[test]
    fn ethanol() {
        let g = parse_smiles("CCO").unwrap();
        let elements: Vec<_> = g.atoms().iter().map(|a| a.element).collect();
        assert_eq!(elements, vec![Element::C, Element::C, Element::O]);
        assert_eq!(g.bond_count(), 2);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Single));
    }

    #[test]
    fn cyclopropane_ring_pairing() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!(g.atom_count(), 3);
        assert_eq!(g.bond_count(), 3);
        let mut pairs: Vec<_> = g
            .bonds()
            .iter()
            .map(|b| (b.a.min(b.b), b.a.max(b.b)))
            .collect();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn aromatic_bonds_are_implicit_between_aromatic_atoms() {
        let g = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        let aromatic = g
            .bonds()
            .iter()
            .filter(|b| b.order == BondOrder::Aromatic)
            .count();
        assert_eq!(aromatic, 12);
        assert_eq!(g.bond_count(), 13);
    }

    #[test]
    fn bracket_atom_fields() {
        let g = parse_smiles("[13CH2+]").unwrap();
        let a = g.atom(0);
        assert_eq!(a.isotope, Some(13));
        assert_eq!(a.explicit_h, Some(2));
        assert_eq!(a.charge, 1);
        let g = parse_smiles("[O--]").unwrap();
        assert_eq!(g.atom(0).charge, -2);
        let g = parse_smiles("[N+3]").unwrap();
        assert_eq!(g.atom(0).charge, 3);
    }

    #[test]
    fn chirality_records_neighbor_order() {
        let g = parse_smiles("N[C@@H](C)O").unwrap();
        let st = g.atom(1).stereo.unwrap();
        assert_eq!(st.winding, Winding::Clockwise);
        use NeighborRef::*;
        assert_eq!(st.neighbors, [Atom(0), Implicit, Atom(2), Atom(3)]);
        // First atom: implicit hydrogen leads the order.
        let g = parse_smiles("[C@H](N)(C)O").unwrap();
        assert_eq!(
            g.atom(0).stereo.unwrap().neighbors,
            [Implicit, Atom(1), Atom(2), Atom(3)]
        );
        // Ring closure neighbors sit at the digit position.
        let g = parse_smiles("C[C@]1(F)CCC1").unwrap();
        assert_eq!(
            g.atom(1).stereo.unwrap().neighbors,
            [Atom(0), Atom(5), Atom(2), Atom(3)]
        );
    }

    #[test]
    fn non_tetrahedral_stereo_is_dropped() {
        let g = parse_smiles("[C@H2](C)C").unwrap();
        assert!(g.atom(0).stereo.is_none());
    }

    #[test]
    fn wildcards_and_rgroups() {
        let g = parse_smiles("[1*]CC").unwrap();
        assert_eq!(g.atom(0).rgroup, Some(1));
        assert_eq!(g.atom(0).isotope, None);
        let g = parse_smiles("[*:3]C").unwrap();
        assert_eq!(g.atom(0).rgroup, Some(3));
        assert!(matches!(kind("[*+]C"), ParseErrorKind::MalformedBracketAtom(_)));
    }

    #[test]
    fn cis_trans_markers_are_single_bonds() {
        let g = parse_smiles("F/C=C/F").unwrap();
        let orders: Vec<_> = g.bonds().iter().map(|b| b.order).collect();
        assert_eq!(
            orders,
            vec![BondOrder::Single, BondOrder::Double, BondOrder::Single]
        );
    }

    #[test]
    fn percent_ring_numbers() {
        let g = parse_smiles("C%12CC%12").unwrap();
        assert_eq!(g.bond_count(), 3);
    }

    #[test]
    fn error_cases() {
        assert_eq!(kind("C("), ParseErrorKind::UnbalancedParentheses);
        assert_eq!(kind("C)C"), ParseErrorKind::UnbalancedParentheses);
        assert_eq!(kind("C(("), ParseErrorKind::UnexpectedCharacter('('));
        assert_eq!(kind("C1CC"), ParseErrorKind::UnmatchedRingClosure(1));
        assert_eq!(kind("CXC"), ParseErrorKind::UnknownElement("X".into()));
        assert_eq!(kind("[Na+].[Cl-]"), ParseErrorKind::UnknownElement("Na".into()));
        assert_eq!(kind("C[Si]"), ParseErrorKind::UnknownElement("Si".into()));
        assert_eq!(kind("c1cc[se]c1"), ParseErrorKind::UnknownElement("se".into()));
        assert!(matches!(kind("[C"), ParseErrorKind::MalformedBracketAtom(_)));
        assert!(matches!(kind("[C@TH1]"), ParseErrorKind::MalformedBracketAtom(_)));
        assert_eq!(kind("CC="), ParseErrorKind::DanglingBond);
        assert_eq!(kind("=CC"), ParseErrorKind::DanglingBond);
        assert_eq!(kind("C=(C)C"), ParseErrorKind::DanglingBond);
        assert_eq!(kind("C11"), ParseErrorKind::InvalidRingBond(1));
        assert_eq!(kind("C1C1"), ParseErrorKind::InvalidRingBond(1));
        assert_eq!(kind("C=1CC#1"), ParseErrorKind::RingBondConflict(1));
        assert_eq!(kind("C()C"), ParseErrorKind::UnexpectedCharacter(')'));
        assert_eq!(kind("  "), ParseErrorKind::Empty);
        assert_eq!(kind("C C"), ParseErrorKind::UnexpectedCharacter(' '));
    }

    #[test]
    fn offsets_point_into_original_text() {
        let e = parse_smiles("  CC(C").unwrap_err();
        assert_eq!(e.offset, 4);
        let e = parse_smiles("CCX").unwrap_err();
        assert_eq!(e.offset, 2);
    }
}
