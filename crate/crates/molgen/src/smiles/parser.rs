//! SMILES parser: branch stack, ring-closure pairing, implicit hydrogens,
//! valence validation.

use std::collections::{HashMap, HashSet};

use super::graph::{implicit_hydrogens, valence_violation, Atom, Bond, BondOrder, MolGraph};
use super::token::{tokenize, Token, TokenKind};
use super::SmilesError;

/// Aromatic symbols accepted inside brackets.
const BRACKET_AROMATIC: &[&str] = &["b", "c", "n", "o", "p", "s", "se", "as"];

struct RingSlot {
    atom: usize,
    bond: Option<BondOrder>,
}

struct Builder {
    atoms: Vec<Atom>,
    from_bracket: Vec<bool>,
    bonds: Vec<Bond>,
    seen_pairs: HashSet<(usize, usize)>,
}

impl Builder {
    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        explicit: Option<BondOrder>,
    ) -> Result<(), SmilesError> {
        if a == b {
            return Err(SmilesError::RingSelfBond { atom: a });
        }
        let key = (a.min(b), a.max(b));
        if !self.seen_pairs.insert(key) {
            return Err(SmilesError::DuplicateBond { a: key.0, b: key.1 });
        }
        let order = explicit.unwrap_or_else(|| {
            if self.atoms[a].aromatic && self.atoms[b].aromatic {
                BondOrder::Aromatic
            } else {
                BondOrder::Single
            }
        });
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }
}

/// Parse a SMILES string into a [`MolGraph`].
///
/// Branches are resolved via a stack, ring-closure digits are paired
/// first-open/first-close (digits may be reused after pairing), lowercase
/// atoms are flagged aromatic, and implicit hydrogens are filled in for
/// atoms written without brackets. Stereo markers are accepted but carry
/// no meaning: `/` and `\` act as single bonds, `@` is skipped inside
/// brackets.
pub fn parse(smiles: &str) -> Result<MolGraph, SmilesError> {
    let tokens = tokenize(smiles)?;
    if tokens.is_empty() {
        return Err(SmilesError::EmptyInput);
    }

    let mut b = Builder {
        atoms: Vec::new(),
        from_bracket: Vec::new(),
        bonds: Vec::new(),
        seen_pairs: HashSet::new(),
    };
    let mut open_rings: HashMap<u32, RingSlot> = HashMap::new();
    let mut branch_stack: Vec<usize> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending_bond: Option<BondOrder> = None;

    let unexpected = |i: usize, t: &Token| SmilesError::UnexpectedToken {
        index: i,
        text: t.text.clone(),
    };

    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        match tok.kind {
            TokenKind::Atom | TokenKind::BracketAtom => {
                let (atom, bracket) = if tok.kind == TokenKind::Atom {
                    (plain_atom(&tok.text), false)
                } else {
                    (bracket_atom(&tok.text)?, true)
                };
                let idx = b.atoms.len();
                b.atoms.push(atom);
                b.from_bracket.push(bracket);
                if let Some(p) = prev {
                    b.add_bond(p, idx, pending_bond.take())?;
                } else if pending_bond.is_some() {
                    return Err(unexpected(i, tok));
                }
                prev = Some(idx);
            }
            TokenKind::Bond => {
                if pending_bond.is_some() || prev.is_none() {
                    return Err(unexpected(i, tok));
                }
                pending_bond = Some(match tok.text.as_str() {
                    "=" => BondOrder::Double,
                    "#" => BondOrder::Triple,
                    ":" => BondOrder::Aromatic,
                    // '-', '/', '\' all bind as single; direction is ignored
                    _ => BondOrder::Single,
                });
            }
            TokenKind::RingDigit => {
                let n: u32 = tok.text.parse().expect("digit token");
                ring_event(&mut b, &mut open_rings, prev, &mut pending_bond, n)
                    .map_err(|e| ring_err(e, i, tok))?;
            }
            TokenKind::Special if tok.text == "%" => {
                let d1 = tokens.get(i + 1).filter(|t| t.kind == TokenKind::RingDigit);
                let d2 = tokens.get(i + 2).filter(|t| t.kind == TokenKind::RingDigit);
                let (d1, d2) = match (d1, d2) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(unexpected(i, tok)),
                };
                let n: u32 = 10 * d1.text.parse::<u32>().unwrap() + d2.text.parse::<u32>().unwrap();
                ring_event(&mut b, &mut open_rings, prev, &mut pending_bond, n)
                    .map_err(|e| ring_err(e, i, tok))?;
                i += 2;
            }
            TokenKind::BranchOpen => {
                let Some(p) = prev else {
                    return Err(unexpected(i, tok));
                };
                if pending_bond.is_some() {
                    return Err(unexpected(i, tok));
                }
                branch_stack.push(p);
            }
            TokenKind::BranchClose => {
                if pending_bond.is_some() {
                    return Err(unexpected(i, tok));
                }
                let Some(p) = branch_stack.pop() else {
                    return Err(SmilesError::UnbalancedBranch);
                };
                prev = Some(p);
            }
            TokenKind::Special => return Err(unexpected(i, tok)),
        }
        i += 1;
    }

    if pending_bond.is_some() {
        return Err(SmilesError::UnexpectedToken {
            index: tokens.len() - 1,
            text: tokens.last().unwrap().text.clone(),
        });
    }
    if !branch_stack.is_empty() {
        return Err(SmilesError::UnbalancedBranch);
    }
    if let Some(&digit) = open_rings.keys().min() {
        return Err(SmilesError::UnmatchedRingClosure { digit });
    }

    let mut mol = MolGraph { atoms: b.atoms, bonds: b.bonds };
    for i in 0..mol.atoms.len() {
        if !b.from_bracket[i] {
            let half = mol.bond_half_units(i);
            let atom = &mut mol.atoms[i];
            atom.h_count = implicit_hydrogens(&atom.element, atom.charge, half);
        }
    }
    if let Some(atom) = valence_violation(&mol) {
        return Err(SmilesError::ValenceExceeded { atom });
    }
    Ok(mol)
}

/// True iff `smiles` parses into a structurally sound molecule.
pub fn is_valid(smiles: &str) -> bool {
    parse(smiles).is_ok()
}

fn ring_err(e: SmilesError, i: usize, tok: &Token) -> SmilesError {
    match e {
        SmilesError::EmptyInput => SmilesError::UnexpectedToken {
            index: i,
            text: tok.text.clone(),
        },
        other => other,
    }
}

fn ring_event(
    b: &mut Builder,
    open_rings: &mut HashMap<u32, RingSlot>,
    prev: Option<usize>,
    pending_bond: &mut Option<BondOrder>,
    n: u32,
) -> Result<(), SmilesError> {
    // EmptyInput doubles as "no current atom"; the caller rewrites it.
    let current = prev.ok_or(SmilesError::EmptyInput)?;
    match open_rings.remove(&n) {
        Some(slot) => {
            let explicit = match (slot.bond, pending_bond.take()) {
                (None, None) => None,
                (Some(x), None) | (None, Some(x)) => Some(x),
                (Some(x), Some(y)) if x == y => Some(x),
                (Some(_), Some(_)) => {
                    return Err(SmilesError::UnmatchedRingClosure { digit: n })
                }
            };
            b.add_bond(slot.atom, current, explicit)
        }
        None => {
            open_rings.insert(n, RingSlot { atom: current, bond: pending_bond.take() });
            Ok(())
        }
    }
}

fn plain_atom(text: &str) -> Atom {
    let aromatic = text.chars().next().is_some_and(|c| c.is_ascii_lowercase());
    let element = if aromatic { text.to_ascii_uppercase() } else { text.to_string() };
    Atom { element, aromatic, charge: 0, h_count: 0 }
}

/// Parse the interior of `[...]`: optional isotope, element symbol,
/// optional chirality (`@`/`@@`, ignored), optional hydrogen count,
/// optional charge, optional atom class (ignored).
fn bracket_atom(text: &str) -> Result<Atom, SmilesError> {
    let bad = || SmilesError::BadBracketAtom { text: text.to_string() };
    let inner: Vec<char> = text[1..text.len() - 1].chars().collect();
    let mut i = 0;

    // isotope (ignored)
    while i < inner.len() && inner[i].is_ascii_digit() {
        i += 1;
    }

    let (element, aromatic) = if i < inner.len() && inner[i].is_ascii_uppercase() {
        let mut sym = inner[i].to_string();
        i += 1;
        if i < inner.len() && inner[i].is_ascii_lowercase() {
            sym.push(inner[i]);
            i += 1;
        }
        (sym, false)
    } else {
        // aromatic symbol: longest match from the known lowercase set
        let two: String = inner[i..].iter().take(2).collect();
        let one: String = inner[i..].iter().take(1).collect();
        let sym = if BRACKET_AROMATIC.contains(&two.as_str()) {
            two
        } else if BRACKET_AROMATIC.contains(&one.as_str()) {
            one
        } else {
            return Err(bad());
        };
        i += sym.chars().count();
        let mut proper = sym;
        proper[..1].make_ascii_uppercase();
        (proper, true)
    };

    // chirality markers, ignored
    while i < inner.len() && inner[i] == '@' {
        i += 1;
    }

    let mut h_count = 0u32;
    if i < inner.len() && inner[i] == 'H' {
        i += 1;
        let start = i;
        while i < inner.len() && inner[i].is_ascii_digit() {
            i += 1;
        }
        h_count = if i > start {
            inner[start..i].iter().collect::<String>().parse().map_err(|_| bad())?
        } else {
            1
        };
    }

    let mut charge = 0i32;
    if i < inner.len() && (inner[i] == '+' || inner[i] == '-') {
        let sign = if inner[i] == '+' { 1 } else { -1 };
        let symbol = inner[i];
        i += 1;
        let start = i;
        while i < inner.len() && inner[i].is_ascii_digit() {
            i += 1;
        }
        if i > start {
            let mag: i32 = inner[start..i].iter().collect::<String>().parse().map_err(|_| bad())?;
            charge = sign * mag;
        } else {
            charge = sign;
            while i < inner.len() && inner[i] == symbol {
                charge += sign;
                i += 1;
            }
        }
    }

    // atom class, ignored
    if i < inner.len() && inner[i] == ':' {
        i += 1;
        let start = i;
        while i < inner.len() && inner[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(bad());
        }
    }

    if i != inner.len() || element.is_empty() {
        return Err(bad());
    }
    Ok(Atom { element, aromatic, charge, h_count })
}
