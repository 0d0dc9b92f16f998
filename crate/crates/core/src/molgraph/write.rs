use rand::seq::SliceRandom;
use rand::Rng;

use super::valence::{hydrogen_counts_with, organic_implicit_h, ValenceTable};
use super::{Atom, BondOrder, Element, MolGraph, NeighborRef};

/// Ring-closure digits available to the writer (`1`–`9`, `%10`–`%99`).
const MAX_RING_DIGITS: usize = 99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TooManyRings;

/// Per-graph data the writer needs independent of traversal order.
pub(crate) struct WriteContext<'a> {
    pub g: &'a MolGraph,
    pub hydrogens: Vec<u32>,
    pub organic_h: Vec<u32>,
    pub stereo: bool,
}

impl<'a> WriteContext<'a> {
    pub fn new(g: &'a MolGraph, stereo: bool) -> Self {
        let table = ValenceTable::standard();
        Self {
            g,
            hydrogens: hydrogen_counts_with(g, table),
            organic_h: (0..g.atom_count())
                .map(|i| organic_implicit_h(g, i, table))
                .collect(),
            stereo,
        }
    }

    /// Depth-first SMILES emission. Lower `priority` is visited first: it
    /// picks the root of each fragment and the order of neighbors. The last
    /// child continues the main chain; earlier children become branches.
    pub fn write(&self, priority: &[u32]) -> Result<String, TooManyRings> {
        let tree = Tree::build(self.g, priority);
        let mut out = String::with_capacity(self.g.atom_count() * 3);
        let mut digits = Digits::default();
        for (f, &root) in tree.roots.iter().enumerate() {
            if f > 0 {
                out.push('.');
            }
            self.emit(&tree, root, None, &mut digits, &mut out)?;
        }
        Ok(out)
    }

    fn emit(
        &self,
        tree: &Tree,
        u: usize,
        from: Option<usize>,
        digits: &mut Digits,
        out: &mut String,
    ) -> Result<(), TooManyRings> {
        // Ring bonds at `u` as (partner, digit, write bond symbol here).
        let mut rings: Vec<(usize, usize, bool)> = Vec::new();
        let mut closing: Vec<(usize, usize)> = tree.closes[u]
            .iter()
            .map(|&v| (digits.assigned(v, u), v))
            .collect();
        closing.sort_unstable();
        for &(d, v) in &closing {
            rings.push((v, d, false));
        }
        let mut opening = tree.opens[u].clone();
        opening.sort_unstable_by_key(|&v| tree.dfs_index[v]);
        for &v in &opening {
            let d = digits.open(u, v)?;
            rings.push((v, d, true));
        }

        self.write_atom(u, from, &rings, &tree.children[u], out);
        for &(v, d, first) in &rings {
            if first {
                out.push_str(self.bond_symbol(u, v));
            }
            push_digit(d, out);
        }
        for &(_, v) in &closing {
            digits.release(v, u);
        }

        let children = &tree.children[u];
        for (i, &c) in children.iter().enumerate() {
            let branch = i + 1 < children.len();
            if branch {
                out.push('(');
            }
            out.push_str(self.bond_symbol(u, c));
            self.emit(tree, c, Some(u), digits, out)?;
            if branch {
                out.push(')');
            }
        }
        Ok(())
    }

    fn bond_symbol(&self, a: usize, b: usize) -> &'static str {
        let order = self.g.bond_between(a, b).expect("tree edge exists").order;
        let both_aromatic = self.g.atom(a).aromatic && self.g.atom(b).aromatic;
        match order {
            BondOrder::Single if both_aromatic => "-",
            BondOrder::Single => "",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic if both_aromatic => "",
            BondOrder::Aromatic => ":",
        }
    }

    fn write_atom(
        &self,
        u: usize,
        from: Option<usize>,
        rings: &[(usize, usize, bool)],
        children: &[usize],
        out: &mut String,
    ) {
        let atom = self.g.atom(u);
        let h = self.hydrogens[u];
        let chirality = if self.stereo {
            self.written_winding(atom, from, rings, children)
        } else {
            None
        };
        let bracket = atom.charge != 0
            || atom.isotope.is_some()
            || chirality.is_some()
            || atom.rgroup.is_some()
            || atom.element == Element::H
            || h != self.organic_h[u];
        if !bracket {
            push_symbol(atom, out);
            return;
        }
        out.push('[');
        if let Some(iso) = atom.isotope {
            out.push_str(&iso.to_string());
        }
        if let Some(label) = atom.rgroup {
            out.push_str(&label.to_string());
        }
        push_symbol(atom, out);
        if let Some(marker) = chirality {
            out.push_str(marker);
        }
        match h {
            0 => {}
            1 => out.push('H'),
            n => {
                out.push('H');
                out.push_str(&n.to_string());
            }
        }
        match atom.charge {
            0 => {}
            1 => out.push('+'),
            -1 => out.push('-'),
            q if q > 0 => out.push_str(&format!("+{q}")),
            q => out.push_str(&format!("-{}", -q)),
        }
        out.push(']');
    }

    /// Chirality marker for the neighbor order as written: the atom we came
    /// from, the implicit hydrogen or lone pair, ring bonds in digit order,
    /// then children.
    fn written_winding(
        &self,
        atom: &Atom,
        from: Option<usize>,
        rings: &[(usize, usize, bool)],
        children: &[usize],
    ) -> Option<&'static str> {
        let st = atom.stereo.as_ref()?;
        let mut order: Vec<NeighborRef> = Vec::with_capacity(4);
        order.extend(from.map(NeighborRef::Atom));
        if st.neighbors.contains(&NeighborRef::Implicit) {
            order.push(NeighborRef::Implicit);
        }
        order.extend(rings.iter().map(|&(v, _, _)| NeighborRef::Atom(v)));
        order.extend(children.iter().map(|&c| NeighborRef::Atom(c)));
        let order: [NeighborRef; 4] = order.try_into().ok()?;
        if !order.iter().all(|r| st.neighbors.contains(r)) {
            return None;
        }
        Some(st.winding_for(&order).marker())
    }
}

fn push_symbol(atom: &Atom, out: &mut String) {
    let symbol = atom.element.symbol();
    if atom.aromatic {
        out.push_str(&symbol.to_ascii_lowercase());
    } else {
        out.push_str(symbol);
    }
}

fn push_digit(d: usize, out: &mut String) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push('%');
        out.push_str(&d.to_string());
    }
}

/// Spanning forest plus ring-closure bookkeeping for one traversal order.
struct Tree {
    roots: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// Ring bonds opened at an atom, keyed by the partner that closes them.
    opens: Vec<Vec<usize>>,
    closes: Vec<Vec<usize>>,
    dfs_index: Vec<usize>,
}

impl Tree {
    fn build(g: &MolGraph, priority: &[u32]) -> Tree {
        let n = g.atom_count();
        let mut tree = Tree {
            roots: Vec::new(),
            children: vec![Vec::new(); n],
            opens: vec![Vec::new(); n],
            closes: vec![Vec::new(); n],
            dfs_index: vec![usize::MAX; n],
        };
        let mut used = vec![false; g.bond_count()];
        let mut by_priority: Vec<usize> = (0..n).collect();
        by_priority.sort_by_key(|&i| (priority[i], i));
        let mut counter = 0;
        // Explicit stack of (atom, sorted neighbors, next slot).
        let mut stack: Vec<(usize, Vec<(usize, usize)>, usize)> = Vec::new();
        for &root in &by_priority {
            if tree.dfs_index[root] != usize::MAX {
                continue;
            }
            tree.roots.push(root);
            tree.dfs_index[root] = counter;
            counter += 1;
            stack.push((root, sorted_neighbors(g, root, priority), 0));
            while let Some((u, nbrs, slot)) = stack.last_mut() {
                let u = *u;
                let Some(&(v, k)) = nbrs.get(*slot) else {
                    stack.pop();
                    continue;
                };
                *slot += 1;
                if used[k] {
                    continue;
                }
                used[k] = true;
                if tree.dfs_index[v] == usize::MAX {
                    tree.dfs_index[v] = counter;
                    counter += 1;
                    tree.children[u].push(v);
                    stack.push((v, sorted_neighbors(g, v, priority), 0));
                } else {
                    tree.opens[v].push(u);
                    tree.closes[u].push(v);
                }
            }
        }
        tree
    }
}

fn sorted_neighbors(g: &MolGraph, u: usize, priority: &[u32]) -> Vec<(usize, usize)> {
    let mut nbrs = g.neighbors(u).to_vec();
    nbrs.sort_by_key(|&(v, _)| (priority[v], v));
    nbrs
}

/// Ring digit allocation: smallest free digit on open, freed by the caller
/// once the closing atom is complete.
#[derive(Default)]
struct Digits {
    /// (opening atom, closing atom) per digit slot.
    slots: Vec<Option<(usize, usize)>>,
}

impl Digits {
    fn open(&mut self, at: usize, partner: usize) -> Result<usize, TooManyRings> {
        let free = self.slots.iter().position(Option::is_none);
        let d = match free {
            Some(d) => d,
            None if self.slots.len() < MAX_RING_DIGITS => {
                self.slots.push(None);
                self.slots.len() - 1
            }
            None => return Err(TooManyRings),
        };
        self.slots[d] = Some((at, partner));
        Ok(d + 1)
    }

    fn assigned(&self, opener: usize, closer: usize) -> usize {
        self.slots
            .iter()
            .position(|s| *s == Some((opener, closer)))
            .expect("ring bond was opened before it closes")
            + 1
    }

    fn release(&mut self, opener: usize, closer: usize) {
        let d = self.assigned(opener, closer);
        self.slots[d - 1] = None;
    }
}

/// Write `g` with a random traversal order. Useful for generating equivalent
/// spellings of one molecule; stereo is always kept.
pub fn render_random<R: Rng + ?Sized>(g: &MolGraph, rng: &mut R) -> String {
    let mut priority: Vec<u32> = (0..g.atom_count() as u32).collect();
    priority.shuffle(rng);
    WriteContext::new(g, true)
        .write(&priority)
        .expect("graphs that came from SMILES text fit the ring-digit budget")
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    fn identity(s: &str) -> String {
        let g = parse_smiles(s).unwrap();
        let priority: Vec<u32> = (0..g.atom_count() as u32).collect();
        WriteContext::new(&g, true).write(&priority).unwrap()
    }

    #[test]
    fn identity_order_reproduces_simple_input() {
        for s in [
            "CCO",
            "C1CC1",
            "c1ccccc1",
            "CC(C)(C)O",
            "C=CC#N",
            "[13CH3][NH3+]",
            "C[C@H](N)O",
            "N[C@@H](C)C(=O)O",
            "c1cc[nH]c1",
            "CC.O",
            "[1*]CC",
            "c1ccccc1-c1ccccc1",
            "C1CC2CCC1C2",
        ] {
            assert_eq!(identity(s), s);
        }
    }

    #[test]
    fn ring_digits_are_reused_after_closing() {
        assert_eq!(identity("C1CC1C1CC1"), "C1CC1C1CC1");
    }

    #[test]
    fn non_default_hydrogens_force_brackets() {
        assert_eq!(identity("[CH2]C"), "[CH2]C");
        assert_eq!(identity("[CH4]"), "C");
    }

    #[test]
    fn aromatic_bond_between_aliphatic_atoms_is_explicit() {
        assert_eq!(identity("C:C"), "C:C");
    }

    #[test]
    fn random_renderings_reparse_to_same_counts() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = parse_smiles("CC(=O)Nc1ccc(O)cc1").unwrap();
        for _ in 0..50 {
            let s = render_random(&g, &mut rng);
            let h = parse_smiles(&s).unwrap();
            assert_eq!(h.atom_count(), g.atom_count());
            assert_eq!(h.bond_count(), g.bond_count());
            assert_eq!(
                hydrogen_counts_with(&h, ValenceTable::standard())
                    .iter()
                    .sum::<u32>(),
                9
            );
        }
    }
}
