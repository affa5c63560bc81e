//! SMILES parsing into an in-memory molecular graph.
//!
//! Supported subset: organic-subset atoms (`B C N O P S F Cl Br I`), aromatic
//! lowercase atoms (`b c n o p s`), bracket atoms with isotope, chirality,
//! hydrogen count, charge and atom class, bond symbols `- = # :`, branches,
//! ring closures (single digits and `%nn`), and `.` component separators.
//!
//! Stereo tokens (`/`, `\`, `@`, `@@`) are accepted and dropped; the number
//! dropped is kept in [`Molecule::discarded_stereo`].
//!
//! Valence table used for implicit hydrogens (default valence, uncharged):
//!
//! | element | B | C | N | O | P | S | F | Cl | Br | I |
//! |---------|---|---|---|---|---|---|---|----|----|---|
//! | valence | 3 | 4 | 3 | 2 | 3 | 2 | 1 | 1  | 1  | 1 |
//!
//! A charge shifts the valence of B and C down by `|charge|` and of every
//! other element by `+charge`. Aromatic bonds count 1.5 and the bond-order
//! sum is rounded down before subtracting.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element symbols indexed by atomic number - 1.
const ELEMENTS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce",
    "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir",
    "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc",
    "Lv", "Ts", "Og",
];

pub const MAX_ABS_CHARGE: i8 = 4;

/// Returns the symbol for an atomic number, if it is in range.
pub fn element_symbol(z: u8) -> Option<&'static str> {
    (1..=118).contains(&z).then(|| ELEMENTS[z as usize - 1])
}

/// Looks up the atomic number of an element symbol (case-sensitive).
pub fn atomic_number(symbol: &str) -> Option<u8> {
    ELEMENTS.iter().position(|s| *s == symbol).map(|i| (i + 1) as u8)
}

/// Default valence for organic-subset elements.
pub fn default_valence(z: u8) -> Option<u8> {
    match z {
        5 => Some(3),
        6 => Some(4),
        7 => Some(3),
        8 => Some(2),
        15 => Some(3),
        16 => Some(2),
        9 | 17 | 35 | 53 => Some(1),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    /// Atomic number.
    pub element: u8,
    pub aromatic: bool,
    pub formal_charge: i8,
    /// Hydrogen count written in a bracket atom. Bracket atoms without an
    /// `H` token carry `Some(0)`.
    pub explicit_h: Option<u8>,
    pub isotope: Option<u16>,
}

impl Atom {
    pub fn organic(element: u8, aromatic: bool) -> Self {
        Atom {
            element,
            aromatic,
            formal_charge: 0,
            explicit_h: None,
            isotope: None,
        }
    }

    pub fn symbol(&self) -> &'static str {
        element_symbol(self.element).unwrap_or("?")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Order in half-bond units (aromatic = 3, i.e. 1.5).
    pub fn half_units(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    /// The endpoint opposite `atom`.
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub source: String,
    /// Number of stereo tokens dropped while parsing.
    pub discarded_stereo: usize,
}

impl Molecule {
    /// Per-atom list of `(neighbor, bond index)`, in bond order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (k, bond) in self.bonds.iter().enumerate() {
            adj[bond.a].push((bond.b, k));
            adj[bond.b].push((bond.a, k));
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|b| b.a == atom || b.b == atom).count()
    }

    /// Marks bonds that lie on at least one cycle (i.e. are not bridges).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let adj = self.adjacency();
        (0..self.bonds.len())
            .map(|skip| {
                let Bond { a, b, .. } = self.bonds[skip];
                // b still reachable from a without this bond?
                let mut seen = vec![false; self.atoms.len()];
                let mut stack = vec![a];
                seen[a] = true;
                while let Some(v) = stack.pop() {
                    for &(w, k) in &adj[v] {
                        if k != skip && !seen[w] {
                            seen[w] = true;
                            stack.push(w);
                        }
                    }
                }
                seen[b]
            })
            .collect()
    }

    /// Marks atoms incident to at least one ring bond.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let mut out = vec![false; self.atoms.len()];
        for (bond, in_ring) in self.bonds.iter().zip(self.ring_bonds()) {
            if in_ring {
                out[bond.a] = true;
                out[bond.b] = true;
            }
        }
        out
    }

    pub fn contains_element(&self, z: u8) -> bool {
        self.atoms.iter().any(|a| a.element == z)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES input")]
    EmptyInput,
    #[error("unbalanced branch at position {pos}")]
    UnbalancedBranch { pos: usize },
    #[error("ring bond {label} opened at position {pos} is never closed")]
    UnclosedRing { label: u32, pos: usize },
    #[error("unknown element '{symbol}' at position {pos}")]
    UnknownElement { symbol: String, pos: usize },
    #[error("malformed bracket atom at position {pos}: {reason}")]
    MalformedBracketAtom { pos: usize, reason: &'static str },
    #[error("unexpected '{found}' at position {pos}")]
    UnexpectedToken { found: char, pos: usize },
    #[error("duplicate bond between atoms {a} and {b} at position {pos}")]
    DuplicateBond { a: usize, b: usize, pos: usize },
}

impl SmilesError {
    /// Byte offset in the input where the problem was detected.
    pub fn position(&self) -> usize {
        match self {
            SmilesError::EmptyInput => 0,
            SmilesError::UnbalancedBranch { pos }
            | SmilesError::UnclosedRing { pos, .. }
            | SmilesError::UnknownElement { pos, .. }
            | SmilesError::MalformedBracketAtom { pos, .. }
            | SmilesError::UnexpectedToken { pos, .. }
            | SmilesError::DuplicateBond { pos, .. } => *pos,
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    bond_set: HashMap<(usize, usize), ()>,
    /// ring label -> (atom, explicit bond, position)
    open_rings: HashMap<u32, (usize, Option<BondOrder>, usize)>,
    stereo: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            bond_set: HashMap::new(),
            open_rings: HashMap::new(),
            stereo: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn unexpected(&self) -> SmilesError {
        let found = self.src[self.pos..].chars().next().unwrap_or('\0');
        SmilesError::UnexpectedToken { found, pos: self.pos }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>, pos: usize) -> Result<(), SmilesError> {
        let key = (a.min(b), a.max(b));
        if a == b || self.bond_set.contains_key(&key) {
            return Err(SmilesError::DuplicateBond { a, b, pos });
        }
        let order = order.unwrap_or(if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        self.bond_set.insert(key, ());
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn parse(mut self) -> Result<Molecule, SmilesError> {
        if self.src.trim().is_empty() {
            return Err(SmilesError::EmptyInput);
        }
        // Stack of atoms to return to at ')', with the '(' position.
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut prev: Option<usize> = None;
        let mut pending_bond: Option<(BondOrder, usize)> = None;
        // A '(' or '.' must be followed by something that closes it off.
        let mut after_open_branch = false;

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() || pending_bond.is_some() {
                        return Err(self.unexpected());
                    }
                    branches.push((prev, start));
                    self.pos += 1;
                    after_open_branch = true;
                    continue;
                }
                b')' => {
                    if after_open_branch || pending_bond.is_some() {
                        return Err(self.unexpected());
                    }
                    let Some((back, _)) = branches.pop() else {
                        return Err(SmilesError::UnbalancedBranch { pos: start });
                    };
                    prev = back;
                    self.pos += 1;
                    continue;
                }
                b'.' => {
                    if prev.is_none() || pending_bond.is_some() || after_open_branch {
                        return Err(self.unexpected());
                    }
                    prev = None;
                    self.pos += 1;
                    continue;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending_bond.is_some() || prev.is_none() {
                        return Err(self.unexpected());
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        b'/' | b'\\' => {
                            self.stereo += 1;
                            BondOrder::Single
                        }
                        _ => BondOrder::Single,
                    };
                    pending_bond = Some((order, start));
                    self.pos += 1;
                    continue;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return Err(self.unexpected());
                    };
                    if after_open_branch {
                        return Err(self.unexpected());
                    }
                    let label = self.ring_label()?;
                    let bond = pending_bond.take().map(|(o, _)| o);
                    match self.open_rings.remove(&label) {
                        Some((other, other_bond, _)) => {
                            let order = match (bond, other_bond) {
                                (Some(x), Some(y)) if x != y => {
                                    return Err(SmilesError::UnexpectedToken {
                                        found: self.src[start..].chars().next().unwrap_or('?'),
                                        pos: start,
                                    })
                                }
                                (x, y) => x.or(y),
                            };
                            self.add_bond(other, atom, order, start)?;
                        }
                        None => {
                            self.open_rings.insert(label, (atom, bond, start));
                        }
                    }
                    continue;
                }
                _ => {}
            }

            let atom_idx = self.atom()?;
            if let Some(p) = prev {
                let order = pending_bond.take().map(|(o, _)| o);
                self.add_bond(p, atom_idx, order, start)?;
            } else if let Some((_, pos)) = pending_bond {
                return Err(SmilesError::UnexpectedToken { found: '-', pos });
            }
            prev = Some(atom_idx);
            after_open_branch = false;
        }

        if let Some((_, pos)) = pending_bond {
            return Err(SmilesError::UnexpectedToken {
                found: self.src[pos..].chars().next().unwrap_or('?'),
                pos,
            });
        }
        if let Some(&(_, pos)) = branches.last() {
            return Err(SmilesError::UnbalancedBranch { pos });
        }
        if let Some((&label, &(_, _, pos))) = self.open_rings.iter().min_by_key(|(_, v)| v.2) {
            return Err(SmilesError::UnclosedRing { label, pos });
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::EmptyInput);
        }
        Ok(Molecule {
            atoms: self.atoms,
            bonds: self.bonds,
            source: self.src.to_string(),
            discarded_stereo: self.stereo,
        })
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let start = self.pos;
        if self.peek() == Some(b'%') {
            self.pos += 1;
            let digits = self.bytes.get(self.pos..self.pos + 2);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 2;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => Err(SmilesError::UnexpectedToken { found: '%', pos: start }),
            }
        } else {
            let d = self.bytes[self.pos] - b'0';
            self.pos += 1;
            Ok(d as u32)
        }
    }

    fn atom(&mut self) -> Result<usize, SmilesError> {
        let start = self.pos;
        let c = self.peek().ok_or(SmilesError::EmptyInput)?;
        let atom = match c {
            b'[' => self.bracket_atom()?,
            b'B' if self.bytes.get(self.pos + 1) == Some(&b'r') => {
                self.pos += 2;
                Atom::organic(35, false)
            }
            b'C' if self.bytes.get(self.pos + 1) == Some(&b'l') => {
                self.pos += 2;
                Atom::organic(17, false)
            }
            b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' => {
                self.pos += 1;
                let z = atomic_number(std::str::from_utf8(&[c]).unwrap()).unwrap();
                Atom::organic(z, false)
            }
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                self.pos += 1;
                let upper = (c as char).to_ascii_uppercase().to_string();
                Atom::organic(atomic_number(&upper).unwrap(), true)
            }
            c if c.is_ascii_alphabetic() || c == b'*' => {
                let end = self.src[start..]
                    .char_indices()
                    .skip(1)
                    .find(|(_, ch)| !ch.is_ascii_lowercase())
                    .map(|(i, _)| start + i)
                    .unwrap_or(self.src.len());
                return Err(SmilesError::UnknownElement {
                    symbol: self.src[start..end].to_string(),
                    pos: start,
                });
            }
            _ => return Err(self.unexpected()),
        };
        self.atoms.push(atom);
        Ok(self.atoms.len() - 1)
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) && self.pos - start < 4 {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.src[start..self.pos].parse().unwrap())
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let malformed = |reason| SmilesError::MalformedBracketAtom { pos: open, reason };
        self.pos += 1;

        let isotope = self.read_number().map(|n| n as u16);

        // element symbol
        let sym_start = self.pos;
        let (element, aromatic) = match self.peek() {
            Some(c) if c.is_ascii_uppercase() => {
                self.pos += 1;
                // try two-letter symbol first
                let two = self
                    .peek()
                    .filter(u8::is_ascii_lowercase)
                    .map(|_| &self.src[sym_start..self.pos + 1]);
                match two.and_then(atomic_number) {
                    Some(z) => {
                        self.pos += 1;
                        (z, false)
                    }
                    None => {
                        let one = &self.src[sym_start..self.pos];
                        match atomic_number(one) {
                            Some(z) => (z, false),
                            None => {
                                return Err(SmilesError::UnknownElement {
                                    symbol: one.to_string(),
                                    pos: sym_start,
                                })
                            }
                        }
                    }
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let rest = &self.src[sym_start..];
                let (len, z) = if rest.starts_with("se") {
                    (2, 34)
                } else if rest.starts_with("as") {
                    (2, 33)
                } else {
                    match c {
                        b'b' => (1, 5),
                        b'c' => (1, 6),
                        b'n' => (1, 7),
                        b'o' => (1, 8),
                        b'p' => (1, 15),
                        b's' => (1, 16),
                        _ => {
                            return Err(SmilesError::UnknownElement {
                                symbol: (c as char).to_string(),
                                pos: sym_start,
                            })
                        }
                    }
                };
                self.pos += len;
                (z, true)
            }
            Some(b'*') => {
                return Err(SmilesError::UnknownElement {
                    symbol: "*".into(),
                    pos: sym_start,
                })
            }
            _ => return Err(malformed("missing element symbol")),
        };

        // chirality
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            } else {
                // @TH1, @AL2, @SP3, @TB12, @OH25
                let rest = &self.bytes[self.pos..];
                if rest.len() >= 2 && rest[0].is_ascii_uppercase() && rest[1].is_ascii_uppercase() {
                    self.pos += 2;
                    if self.read_number().is_none() {
                        return Err(malformed("chirality class without number"));
                    }
                }
            }
            self.stereo += 1;
        }

        // hydrogen count
        let mut explicit_h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            explicit_h = match self.peek() {
                Some(c) if c.is_ascii_digit() => {
                    self.pos += 1;
                    c - b'0'
                }
                _ => 1,
            };
        }

        // charge
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        if charge.abs() > MAX_ABS_CHARGE as i32 {
            return Err(malformed("charge magnitude above 4"));
        }

        // atom class
        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.read_number().is_none() {
                return Err(malformed("atom class without number"));
            }
        }

        if self.peek() != Some(b']') {
            return Err(malformed("expected ']'"));
        }
        self.pos += 1;

        Ok(Atom {
            element,
            aromatic,
            formal_charge: charge as i8,
            explicit_h: Some(explicit_h),
            isotope,
        })
    }
}

/// Parses a SMILES string.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    Parser::new(text).parse()
}

/// Implicit hydrogen count of an atom, or its bracket hydrogen count when set.
pub fn implicit_hydrogens(mol: &Molecule, atom_index: usize) -> u32 {
    let atom = &mol.atoms[atom_index];
    if let Some(h) = atom.explicit_h {
        return h as u32;
    }
    let Some(base) = default_valence(atom.element) else {
        return 0;
    };
    let q = atom.formal_charge as i32;
    let valence = match atom.element {
        5 | 6 => base as i32 - q.abs(),
        _ => base as i32 + q,
    };
    let half_units: u32 = mol
        .bonds
        .iter()
        .filter(|b| b.a == atom_index || b.b == atom_index)
        .map(|b| b.order.half_units())
        .sum();
    let used = (half_units / 2) as i32;
    (valence - used).max(0) as u32
}

impl fmt::Display for Molecule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}
