//! Molecular graph representation and valence rules.

use std::collections::BTreeMap;

/// Bond order between two atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's bond-order sum, in half units so the
    /// aromatic 1.5 stays exact integer arithmetic.
    pub fn half_units(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }

    /// Character used in path encodings and canonical keys.
    pub fn encode_char(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }
}

/// One atom: element symbol in standard capitalization, aromatic flag,
/// formal charge, and resolved hydrogen count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: String,
    pub aromatic: bool,
    pub charge: i32,
    pub h_count: u32,
}

impl Atom {
    pub fn new(element: impl Into<String>) -> Self {
        Self { element: element.into(), aromatic: false, charge: 0, h_count: 0 }
    }
}

/// Undirected bond between atom indices `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// A molecule as an undirected labeled graph. No self-loops, no duplicate
/// bonds between the same atom pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    /// Neighbor list: for each atom, `(other atom index, bond order)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push((b.b, b.order));
            adj[b.b].push((b.a, b.order));
        }
        adj
    }

    /// Number of connected components (isolated atoms count).
    pub fn component_count(&self) -> usize {
        let n = self.atoms.len();
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for &(j, _) in &adj[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    /// Cyclomatic ring count: bonds − atoms + components.
    pub fn ring_count(&self) -> usize {
        (self.bonds.len() + self.component_count()).saturating_sub(self.atoms.len())
    }

    /// Atoms other than hydrogen.
    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != "H").count()
    }

    /// Element multiset including implicit/explicit hydrogens under "H".
    pub fn element_counts(&self) -> BTreeMap<String, u32> {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for atom in &self.atoms {
            *counts.entry(atom.element.clone()).or_default() += 1;
            if atom.h_count > 0 {
                *counts.entry("H".to_string()).or_default() += atom.h_count;
            }
        }
        counts
    }

    /// Sum of bond-order half units incident to atom `i`.
    pub fn bond_half_units(&self, i: usize) -> u32 {
        self.bonds
            .iter()
            .filter(|b| b.a == i || b.b == i)
            .map(|b| b.order.half_units())
            .sum()
    }
}

/// Allowed valences for the elements the validity check knows about.
/// Unknown elements are unconstrained.
pub fn allowed_valences(element: &str) -> Option<&'static [u32]> {
    match element {
        "B" => Some(&[3]),
        "C" => Some(&[4]),
        "N" => Some(&[3, 5]),
        "O" => Some(&[2]),
        "P" => Some(&[3, 5]),
        "S" => Some(&[2, 4, 6]),
        "F" | "Cl" | "Br" | "I" => Some(&[1]),
        _ => None,
    }
}

/// Valence allowances shifted by formal charge; entries that would drop
/// below zero are removed.
pub fn charged_valences(element: &str, charge: i32) -> Option<Vec<u32>> {
    allowed_valences(element).map(|vs| {
        vs.iter()
            .filter_map(|&v| {
                let shifted = v as i64 + charge as i64;
                (shifted >= 0).then_some(shifted as u32)
            })
            .collect()
    })
}

/// Hydrogens needed to fill the smallest allowed valence, for atoms
/// written without brackets. Zero when every allowance is already
/// exceeded; the hard cap is enforced by [`valence_violation`].
pub fn implicit_hydrogens(element: &str, charge: i32, bond_half: u32) -> u32 {
    let demand = bond_half.div_ceil(2);
    match charged_valences(element, charge) {
        Some(vs) => vs.iter().find(|&&v| v >= demand).map_or(0, |&v| v - demand),
        None => 0,
    }
}

/// Index of the first atom whose bond-order sum (plus hydrogens) exceeds
/// its maximum allowance, if any. The aromatic half unit is floored, so a
/// fused aromatic carbon with three ring bonds (4.5) still passes as 4.
pub fn valence_violation(mol: &MolGraph) -> Option<usize> {
    for (i, atom) in mol.atoms.iter().enumerate() {
        let Some(vs) = charged_valences(&atom.element, atom.charge) else {
            continue;
        };
        let max = vs.iter().max().copied().unwrap_or(0);
        let total_half = mol.bond_half_units(i) + 2 * atom.h_count;
        if total_half / 2 > max {
            return Some(i);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(elements: &[&str], orders: &[BondOrder]) -> MolGraph {
        let mut mol = MolGraph::default();
        for e in elements {
            mol.atoms.push(Atom::new(*e));
        }
        for (i, &order) in orders.iter().enumerate() {
            mol.bonds.push(Bond { a: i, b: i + 1, order });
        }
        mol
    }

    #[test]
    fn ring_count_chain_vs_cycle() {
        let mut mol = chain(&["C", "C", "C"], &[BondOrder::Single, BondOrder::Single]);
        assert_eq!(mol.ring_count(), 0);
        mol.bonds.push(Bond { a: 2, b: 0, order: BondOrder::Single });
        assert_eq!(mol.ring_count(), 1);
    }

    #[test]
    fn components() {
        let mut mol = MolGraph::default();
        mol.atoms.push(Atom::new("C"));
        mol.atoms.push(Atom::new("O"));
        assert_eq!(mol.component_count(), 2);
        mol.bonds.push(Bond { a: 0, b: 1, order: BondOrder::Single });
        assert_eq!(mol.component_count(), 1);
    }

    #[test]
    fn implicit_h_fills_smallest_allowance() {
        assert_eq!(implicit_hydrogens("C", 0, 2), 3);
        assert_eq!(implicit_hydrogens("N", 0, 8), 1); // N with four single bonds picks valence 5
        assert_eq!(implicit_hydrogens("O", 0, 4), 0);
        // aromatic carbon with two ring bonds: ceil(3.0) = 3, fill to 4
        assert_eq!(implicit_hydrogens("C", 0, 6), 1);
    }

    #[test]
    fn charge_shifts_allowance() {
        assert_eq!(charged_valences("O", -1).unwrap(), vec![1]);
        assert_eq!(charged_valences("N", 1).unwrap(), vec![4, 6]);
        assert_eq!(charged_valences("F", -1).unwrap(), vec![0]);
    }

    #[test]
    fn violation_detected() {
        let mut mol = chain(
            &["C", "C", "C"],
            &[BondOrder::Triple, BondOrder::Triple],
        );
        // center carbon: 3 + 3 = 6 > 4
        assert_eq!(valence_violation(&mol), Some(1));
        mol.bonds[1].order = BondOrder::Single;
        assert_eq!(valence_violation(&mol), None);
    }

    #[test]
    fn element_counts_include_hydrogens() {
        let mut mol = chain(&["C", "C", "O"], &[BondOrder::Single, BondOrder::Single]);
        mol.atoms[0].h_count = 3;
        mol.atoms[1].h_count = 2;
        mol.atoms[2].h_count = 1;
        let counts = mol.element_counts();
        assert_eq!(counts["C"], 2);
        assert_eq!(counts["O"], 1);
        assert_eq!(counts["H"], 6);
    }
}
