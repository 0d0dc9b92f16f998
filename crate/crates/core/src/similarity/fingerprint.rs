use crate::hash::StableHasher;
use crate::molgraph::{check_valence, hydrogen_counts, MolGraph};

use super::SimilarityError;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_WIDTH: usize = 2048;

/// Fixed-width bit vector with a cached popcount.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
    popcount: usize,
}

impl Fingerprint {
    pub fn new(width: usize) -> Result<Self, SimilarityError> {
        if !width.is_power_of_two() {
            return Err(SimilarityError::BadWidth(width));
        }
        Ok(Self {
            words: vec![0; width.div_ceil(64)],
            width,
            popcount: 0,
        })
    }

    /// Build from set-bit positions, each taken modulo `width`.
    pub fn from_positions(
        width: usize,
        positions: impl IntoIterator<Item = usize>,
    ) -> Result<Self, SimilarityError> {
        let mut fp = Self::new(width)?;
        for p in positions {
            fp.set(p % width);
        }
        Ok(fp)
    }

    fn set(&mut self, bit: usize) {
        let (w, b) = (bit / 64, bit % 64);
        if self.words[w] & (1 << b) == 0 {
            self.words[w] |= 1 << b;
            self.popcount += 1;
        }
    }

    pub fn contains(&self, bit: usize) -> bool {
        bit < self.width && self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn popcount(&self) -> usize {
        self.popcount
    }

    /// Set-bit positions in increasing order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(move |&i| self.contains(i))
    }
}

/// Circular fingerprint in the ECFP style.
///
/// Round 0 hashes (element, charge, degree, hydrogens, ring flag, aromatic
/// flag) per atom. Each of `radius` further rounds rehashes an atom's
/// identifier with the sorted (bond code, neighbor identifier) pairs. Every
/// identifier from every round sets bit `id mod width`.
pub fn morgan_fingerprint(
    g: &MolGraph,
    radius: usize,
    width: usize,
) -> Result<Fingerprint, SimilarityError> {
    let report = check_valence(g);
    if !report.valid {
        return Err(SimilarityError::InvalidMolecule(report.to_string()));
    }
    let mut fp = Fingerprint::new(width)?;
    let hydrogens = hydrogen_counts(g);
    let ring = g.ring_atoms();
    let mut ids: Vec<u64> = g
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut h = StableHasher::new();
            h.write_u64(a.element.ordinal() as u64)
                .write_i64(i64::from(a.charge))
                .write_u64(g.degree(i) as u64)
                .write_u64(u64::from(hydrogens[i]))
                .write_u64(u64::from(ring[i]))
                .write_u64(u64::from(a.aromatic));
            h.finish()
        })
        .collect();
    let fold = |fp: &mut Fingerprint, id: u64| fp.set((id % width as u64) as usize);
    for &id in &ids {
        fold(&mut fp, id);
    }
    for round in 1..=radius {
        let next: Vec<u64> = (0..g.atom_count())
            .map(|i| {
                let mut env: Vec<(u8, u64)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(v, k)| (g.bonds()[k].order.code(), ids[v]))
                    .collect();
                env.sort_unstable();
                let mut h = StableHasher::new();
                h.write_u64(round as u64).write_u64(ids[i]);
                for (code, id) in env {
                    h.write_u64(u64::from(code)).write_u64(id);
                }
                h.finish()
            })
            .collect();
        for &id in &next {
            fold(&mut fp, id);
        }
        ids = next;
    }
    Ok(fp)
}

/// |A ∩ B| / |A ∪ B|; two empty fingerprints score 1.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, SimilarityError> {
    if a.width != b.width {
        return Err(SimilarityError::WidthMismatch {
            left: a.width,
            right: b.width,
        });
    }
    let mut both = 0u32;
    let mut either = 0u32;
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(both) / f64::from(either))
}
