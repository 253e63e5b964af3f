//! Representation-independent dedup key for molecular graphs.
//!
//! Two parses of the same molecule written with different atom orderings
//! (e.g. "CCO" and "OCC") must produce the same key. The key is obtained by
//! iterative invariant refinement: atoms start with a label built from
//! (element, degree, charge, aromatic, H-count) and are repeatedly relabeled
//! by their sorted neighborhood until the partition stops splitting. Ties
//! are broken by individualizing one atom of the first non-singleton cell
//! and recursing over every choice, keeping the lexicographically smallest
//! serialization, which makes the key canonical rather than merely
//! heuristic.

use std::collections::BTreeMap;

use super::graph::MolGraph;

/// Exact (non-hashed) refinement signature of one atom.
type Signature = (usize, Vec<(u32, usize)>);

/// Relabel atoms by (current color, sorted multiset of (bond, neighbor
/// color)) until the partition reaches a fixpoint.
fn refine(mol: &MolGraph, adj: &[Vec<(usize, super::graph::BondOrder)>], colors: &mut Vec<usize>) {
    loop {
        let sigs: Vec<Signature> = (0..mol.atoms.len())
            .map(|i| {
                let mut nb: Vec<(u32, usize)> = adj[i]
                    .iter()
                    .map(|&(j, order)| (order.half_units(), colors[j]))
                    .collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let mut ranking: BTreeMap<&Signature, usize> = BTreeMap::new();
        for sig in &sigs {
            ranking.insert(sig, 0);
        }
        for (rank, (_, slot)) in ranking.iter_mut().enumerate() {
            *slot = rank;
        }
        let next: Vec<usize> = sigs.iter().map(|s| ranking[s]).collect();
        if next == *colors {
            return;
        }
        *colors = next;
    }
}

/// Smallest color class containing more than one atom, if any.
fn first_non_singleton(colors: &[usize]) -> Option<Vec<usize>> {
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in colors.iter().enumerate() {
        cells.entry(c).or_default().push(i);
    }
    cells.into_values().find(|cell| cell.len() > 1)
}

/// Serialize the graph under the atom ordering induced by discrete colors.
fn serialize(mol: &MolGraph, colors: &[usize]) -> String {
    let mut order: Vec<usize> = (0..mol.atoms.len()).collect();
    order.sort_unstable_by_key(|&i| colors[i]);
    let mut pos = vec![0usize; mol.atoms.len()];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }

    let mut out = String::new();
    for &i in &order {
        let a = &mol.atoms[i];
        out.push_str(&a.element);
        if a.aromatic {
            out.push('\'');
        }
        if a.charge != 0 {
            out.push_str(&format!("{:+}", a.charge));
        }
        if a.h_count > 0 {
            out.push_str(&format!("H{}", a.h_count));
        }
        out.push(',');
    }
    out.push('|');
    let mut edges: Vec<(usize, usize, char)> = mol
        .bonds
        .iter()
        .map(|b| {
            let (x, y) = (pos[b.a].min(pos[b.b]), pos[b.a].max(pos[b.b]));
            (x, y, b.order.encode_char())
        })
        .collect();
    edges.sort_unstable();
    for (x, y, c) in edges {
        out.push_str(&format!("{x}{c}{y},"));
    }
    out
}

fn search(
    mol: &MolGraph,
    adj: &[Vec<(usize, super::graph::BondOrder)>],
    colors: Vec<usize>,
    best: &mut Option<String>,
) {
    match first_non_singleton(&colors) {
        None => {
            let s = serialize(mol, &colors);
            if best.as_ref().is_none_or(|b| s < *b) {
                *best = Some(s);
            }
        }
        Some(cell) => {
            for target in cell {
                // individualize: shift all colors up, drop the target below
                // its old cellmates, then re-refine
                let mut next: Vec<usize> = colors.iter().map(|&c| 2 * c + 1).collect();
                next[target] -= 1;
                refine(mol, adj, &mut next);
                search(mol, adj, next, best);
            }
        }
    }
}

/// Canonical dedup key: equal unlabeled graphs give equal strings.
pub fn canonical_key(mol: &MolGraph) -> String {
    if mol.atoms.is_empty() {
        return "|".to_string();
    }
    let adj = mol.adjacency();

    let init: Vec<(String, usize, i32, bool, u32)> = (0..mol.atoms.len())
        .map(|i| {
            let a = &mol.atoms[i];
            (a.element.clone(), adj[i].len(), a.charge, a.aromatic, a.h_count)
        })
        .collect();
    let mut ranking: BTreeMap<&(String, usize, i32, bool, u32), usize> = BTreeMap::new();
    for key in &init {
        ranking.insert(key, 0);
    }
    for (rank, (_, slot)) in ranking.iter_mut().enumerate() {
        *slot = rank;
    }
    let mut colors: Vec<usize> = init.iter().map(|k| ranking[k]).collect();

    refine(mol, &adj, &mut colors);
    let mut best = None;
    search(mol, &adj, colors, &mut best);
    best.expect("non-empty graph always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse;

    #[test]
    fn renumbering_invariance() {
        assert_eq!(
            canonical_key(&parse("OCC").unwrap()),
            canonical_key(&parse("CCO").unwrap())
        );
    }

    #[test]
    fn different_molecules_differ() {
        assert_ne!(
            canonical_key(&parse("CCO").unwrap()),
            canonical_key(&parse("CCN").unwrap())
        );
        // same element multiset, different connectivity
        assert_ne!(
            canonical_key(&parse("CCCC").unwrap()),
            canonical_key(&parse("CC(C)C").unwrap())
        );
    }

    #[test]
    fn ring_writings_agree() {
        let keys: Vec<String> = ["c1ccccc1", "c1ccccc1", "c1ccc(cc1)"]
            .iter()
            .map(|s| canonical_key(&parse(s).unwrap()))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn highly_symmetric_graph() {
        // cyclohexane: every refinement cell stays fat until branching
        let a = canonical_key(&parse("C1CCCCC1").unwrap());
        let b = canonical_key(&parse("C1CCCCC1").unwrap());
        assert_eq!(a, b);
        assert_ne!(a, canonical_key(&parse("C1CCCC1").unwrap()));
    }

    #[test]
    fn substituted_ring_permutations() {
        // the same molecule entered from different atoms
        let keys: Vec<String> = ["Cc1ccccc1N", "Nc1ccccc1C", "c1ccc(N)c(C)c1", "c1cc(C)c(N)cc1"]
            .iter()
            .map(|s| canonical_key(&parse(s).unwrap()))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] == w[1]), "{keys:?}");
    }

    #[test]
    fn charge_and_h_count_distinguish() {
        assert_ne!(
            canonical_key(&parse("[NH4+]").unwrap()),
            canonical_key(&parse("N").unwrap())
        );
        assert_ne!(
            canonical_key(&parse("[CH3]").unwrap()),
            canonical_key(&parse("C").unwrap())
        );
    }
}
