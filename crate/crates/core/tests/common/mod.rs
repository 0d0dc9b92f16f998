#![allow(dead_code)]

use molrisk::molgraph::{hydrogen_counts, MolGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Corpus SMILES as written in the file, comment lines removed.
pub fn corpus_lines() -> Vec<&'static str> {
    include_str!("../../data/corpus.smi")
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .filter(|s| !s.starts_with('#'))
        .collect()
}

type AtomLabel = (String, bool, i8, Option<u16>, u32, Option<u16>);

fn atom_labels(g: &MolGraph) -> Vec<AtomLabel> {
    let h = hydrogen_counts(g);
    g.atoms()
        .iter()
        .zip(h)
        .map(|(a, h)| (a.element.symbol().to_string(), a.aromatic, a.charge, a.isotope, h, a.rgroup))
        .collect()
}

/// Sorted multiset of per-atom labels extended with sorted neighbor labels
/// and bond orders. Different multisets prove two graphs non-isomorphic.
pub fn invariant_multiset(g: &MolGraph) -> Vec<String> {
    let labels = atom_labels(g);
    let mut out: Vec<String> = (0..g.atom_count())
        .map(|i| {
            let mut nb: Vec<String> = g
                .neighbors(i)
                .iter()
                .map(|&(j, b)| format!("{}{:?}", g.bonds()[b].order.code(), labels[j]))
                .collect();
            nb.sort();
            format!("{:?}|{}", labels[i], nb.join(","))
        })
        .collect();
    out.sort();
    out
}

/// Label-preserving graph isomorphism by backtracking (stereo ignored).
pub fn isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
    let n = a.atom_count();
    if n != b.atom_count() || a.bond_count() != b.bond_count() {
        return false;
    }
    if invariant_multiset(a) != invariant_multiset(b) {
        return false;
    }
    let (la, lb) = (atom_labels(a), atom_labels(b));
    // Visit `a` in BFS order so each atom after the first of its component
    // has an already-mapped neighbor.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut q = std::collections::VecDeque::from([s]);
        while let Some(i) = q.pop_front() {
            order.push(i);
            for &(j, _) in a.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    q.push_back(j);
                }
            }
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend(a, b, &la, &lb, &order, 0, &mut map, &mut used)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    a: &MolGraph,
    b: &MolGraph,
    la: &[AtomLabel],
    lb: &[AtomLabel],
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    let Some(&i) = order.get(depth) else {
        return true;
    };
    for j in 0..b.atom_count() {
        if used[j] || la[i] != lb[j] || a.degree(i) != b.degree(j) {
            continue;
        }
        let consistent = a.neighbors(i).iter().all(|&(k, bond)| {
            map[k] == usize::MAX
                || b.bond_between(j, map[k]).is_some_and(|bb| bb.order == a.bonds()[bond].order)
        });
        if !consistent {
            continue;
        }
        map[i] = j;
        used[j] = true;
        if extend(a, b, la, lb, order, depth + 1, map, used) {
            return true;
        }
        map[i] = usize::MAX;
        used[j] = false;
    }
    false
}

pub mod fixture {
    use molrisk::mrt::{sample_candidates, CandidateSet, MrtConfig};
    use molrisk::reward::RewardBreakdown;
    use molrisk::rng::StreamKey;
    use molrisk::seqmodel::{ModelConfig, ModelParams, Vocab};
    use rand::Rng;

    /// V = 12 (three specials and nine characters), H = 8.
    pub fn vocab() -> Vocab {
        Vocab::from_chars("CNOc1()=#".chars())
    }

    pub fn params(seed: u64) -> ModelParams {
        let cfg = ModelConfig::new(vocab().len(), 5, 8, 3);
        let mut p = ModelParams::init(cfg, &mut super::rng(seed));
        // Lift the zero-initialized biases so every path carries gradient.
        let mut r = super::rng(seed ^ 0xb1a5);
        for x in p.as_mut_slice() {
            if *x == 0.0 {
                *x = r.random_range(-0.3..0.3);
            }
        }
        p
    }

    pub fn features() -> Vec<Vec<f64>> {
        vec![vec![0.5, -0.3, 0.8], vec![-0.7, 0.2, 0.1]]
    }

    /// Two items of N = 4 sampled candidates each, with rewards replaced by
    /// spread-out constants so the risk gradient is not degenerate.
    pub fn candidates(p: &ModelParams) -> CandidateSet {
        let cfg = MrtConfig {
            n_samples: 4,
            temperature: 1.0,
            max_len: 6,
            ..MrtConfig::default()
        };
        let mut set =
            sample_candidates(p, &vocab(), &features(), &["CCO", "c1ccc1"], &cfg, StreamKey(17)).unwrap();
        let mut r = super::rng(99);
        for item in &mut set.items {
            for c in &mut item.candidates {
                let total = r.random_range(0.0..1.0);
                c.reward = RewardBreakdown {
                    valid: true,
                    exact: false,
                    sim: total,
                    total,
                };
            }
        }
        set
    }
}

/// Central difference of `f` along flat coordinate `i` of `params`.
pub fn central_difference(
    params: &molrisk::seqmodel::ModelParams,
    i: usize,
    eps: f64,
    f: impl Fn(&molrisk::seqmodel::ModelParams) -> f64,
) -> f64 {
    let mut p = params.clone();
    p.as_mut_slice()[i] += eps;
    let up = f(&p);
    p.as_mut_slice()[i] -= 2.0 * eps;
    let down = f(&p);
    (up - down) / (2.0 * eps)
}

/// Relative error with a floor on the denominator for near-zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
