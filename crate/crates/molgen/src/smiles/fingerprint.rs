//! Hashed linear-path fingerprints and Tanimoto similarity.

use super::graph::MolGraph;
use super::SmilesError;

/// Default fingerprint width in bits.
pub const DEFAULT_FP_WIDTH: usize = 2048;

/// Longest path length counted, in atoms.
const MAX_PATH_ATOMS: usize = 7;

/// Fixed-width bitset holding hashed path features of a molecule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    width: usize,
    blocks: Vec<u64>,
}

impl Fingerprint {
    /// All-zero fingerprint of `width` bits.
    pub fn new(width: usize) -> Self {
        Fingerprint {
            width,
            blocks: vec![0u64; width.div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize) {
        debug_assert!(bit < self.width);
        self.blocks[bit / 64] |= 1u64 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        debug_assert!(bit < self.width);
        self.blocks[bit / 64] >> (bit % 64) & 1 == 1
    }

    /// Number of set bits.
    pub fn count_ones(&self) -> u32 {
        self.blocks.iter().map(|b| b.count_ones()).sum()
    }
}

/// FNV-1a 64-bit hash.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn atom_code(mol: &MolGraph, i: usize) -> String {
    let a = &mol.atoms[i];
    if a.aromatic {
        a.element.to_ascii_lowercase()
    } else {
        a.element.clone()
    }
}

/// Encode a path of atoms as alternating atom/bond codes, reading it in
/// whichever direction is lexicographically smaller.
fn canonical_path_code(mol: &MolGraph, path: &[usize], bonds: &[char]) -> String {
    let fwd = zip_path(mol, path.iter().copied(), bonds.iter().copied());
    let rev = zip_path(mol, path.iter().rev().copied(), bonds.iter().rev().copied());
    fwd.min(rev)
}

fn zip_path(
    mol: &MolGraph,
    mut atoms: impl Iterator<Item = usize>,
    bonds: impl Iterator<Item = char>,
) -> String {
    let mut s = String::new();
    if let Some(first) = atoms.next() {
        s.push_str(&atom_code(mol, first));
    }
    for (bond, atom) in bonds.zip(atoms) {
        s.push(bond);
        s.push_str(&atom_code(mol, atom));
    }
    s
}

/// Enumerate every simple linear path of 1..=7 atoms and feed its canonical
/// encoding to `emit`. Paths are walked from every start atom in both
/// directions; the canonical encoding collapses the two readings.
pub(crate) fn for_each_path(mol: &MolGraph, mut emit: impl FnMut(String)) {
    use super::graph::BondOrder;

    fn go(
        mol: &MolGraph,
        adj: &[Vec<(usize, BondOrder)>],
        path: &mut Vec<usize>,
        bonds: &mut Vec<char>,
        on_path: &mut [bool],
        emit: &mut impl FnMut(String),
    ) {
        emit(canonical_path_code(mol, path, bonds));
        if path.len() == MAX_PATH_ATOMS {
            return;
        }
        let at = *path.last().unwrap();
        for &(next, order) in &adj[at] {
            if on_path[next] {
                continue;
            }
            on_path[next] = true;
            path.push(next);
            bonds.push(order.encode_char());
            go(mol, adj, path, bonds, on_path, emit);
            bonds.pop();
            path.pop();
            on_path[next] = false;
        }
    }

    let adj = mol.adjacency();
    let mut path = Vec::with_capacity(MAX_PATH_ATOMS);
    let mut bonds = Vec::with_capacity(MAX_PATH_ATOMS - 1);
    let mut on_path = vec![false; mol.atoms.len()];
    for start in 0..mol.atoms.len() {
        path.clear();
        bonds.clear();
        on_path.iter_mut().for_each(|v| *v = false);
        path.push(start);
        on_path[start] = true;
        go(mol, &adj, &mut path, &mut bonds, &mut on_path, &mut emit);
    }
}

/// Hash all linear paths of up to seven atoms into a fingerprint of the
/// given width.
pub fn fingerprint_with_width(mol: &MolGraph, width: usize) -> Fingerprint {
    let mut fp = Fingerprint::new(width);
    for_each_path(mol, |code| {
        fp.set((fnv1a(code.as_bytes()) % width as u64) as usize);
    });
    fp
}

/// Hash all linear paths of up to seven atoms into a 2048-bit fingerprint.
pub fn fingerprint(mol: &MolGraph) -> Fingerprint {
    fingerprint_with_width(mol, DEFAULT_FP_WIDTH)
}

/// Tanimoto similarity |a ∧ b| / |a ∨ b|; 1.0 when both sets are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, SmilesError> {
    if a.width != b.width {
        return Err(SmilesError::WidthMismatch { a: a.width, b: b.width });
    }
    let mut inter = 0u32;
    let mut union = 0u32;
    for (x, y) in a.blocks.iter().zip(&b.blocks) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse;
    use std::collections::BTreeSet;

    #[test]
    fn single_atom_sets_one_bit() {
        let fp = fingerprint(&parse("C").unwrap());
        assert_eq!(fp.count_ones(), 1);
    }

    #[test]
    fn invariant_under_renumbering() {
        let a = fingerprint(&parse("OCC").unwrap());
        let b = fingerprint(&parse("CCO").unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn bit_count_matches_set_oracle() {
        let mol = parse("CCO").unwrap();
        let mut codes = BTreeSet::new();
        for_each_path(&mol, |c| {
            codes.insert(c);
        });
        // paths of CCO: C, C, O, C-C, C-O, C-C-O → distinct codes C, O, C-C, C-O, C-C-O
        assert_eq!(codes.len(), 5);
        let fp = fingerprint(&mol);
        assert!(fp.count_ones() as usize <= codes.len());
        // distinct hash positions must agree with the bitset exactly
        let positions: BTreeSet<usize> = codes
            .iter()
            .map(|c| (fnv1a(c.as_bytes()) % DEFAULT_FP_WIDTH as u64) as usize)
            .collect();
        assert_eq!(fp.count_ones() as usize, positions.len());
        for p in positions {
            assert!(fp.get(p));
        }
    }

    #[test]
    fn tanimoto_identity_and_bounds() {
        let x = fingerprint(&parse("c1ccccc1CC(=O)O").unwrap());
        assert_eq!(tanimoto(&x, &x).unwrap(), 1.0);
        let y = fingerprint(&parse("CCN").unwrap());
        let t = tanimoto(&x, &y).unwrap();
        assert!((0.0..=1.0).contains(&t));
        assert_eq!(t, tanimoto(&y, &x).unwrap());
    }

    #[test]
    fn tanimoto_hand_example() {
        let mut a = Fingerprint::new(8);
        let mut b = Fingerprint::new(8);
        for i in [1, 2, 3] {
            a.set(i);
        }
        for i in [2, 3, 4] {
            b.set(i);
        }
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn tanimoto_empty_and_disjoint() {
        let e = Fingerprint::new(64);
        assert_eq!(tanimoto(&e, &e).unwrap(), 1.0);
        let mut a = Fingerprint::new(64);
        let mut b = Fingerprint::new(64);
        a.set(0);
        b.set(63);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn width_mismatch_rejected() {
        let a = Fingerprint::new(64);
        let b = Fingerprint::new(128);
        assert!(matches!(
            tanimoto(&a, &b),
            Err(SmilesError::WidthMismatch { a: 64, b: 128 })
        ));
    }

    #[test]
    fn aromatic_and_aliphatic_paths_differ() {
        let benzene = fingerprint(&parse("c1ccccc1").unwrap());
        let cyclohexane = fingerprint(&parse("C1CCCCC1").unwrap());
        assert_ne!(benzene, cyclohexane);
    }
}
