//! Curated SMILES suite with independently computed counts, plus a fuzz run.

use odor_core::smiles::{implicit_hydrogens, parse_smiles};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUITE: &str = include_str!("../data/smiles_suite.tsv");
pub const FUZZ_CASES: usize = 10_000;

struct Case {
    smiles: &'static str,
    atoms: usize,
    bonds: usize,
    hydrogens: u32,
}

fn suite() -> Vec<Case> {
    SUITE
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            Case {
                smiles: f[0],
                atoms: f[1].parse().unwrap(),
                bonds: f[2].parse().unwrap(),
                hydrogens: f[3].parse().unwrap(),
            }
        })
        .collect()
}

/// Number of curated cases checked.
pub fn curated_counts() -> Result<usize, String> {
    let cases = suite();
    if cases.len() < 200 {
        return Err(format!("only {} curated cases", cases.len()));
    }
    let mut failures = vec![];
    for c in &cases {
        match parse_smiles(c.smiles) {
            Ok(m) => {
                let h: u32 = (0..m.atoms.len()).map(|i| implicit_hydrogens(&m, i)).sum();
                if (m.atoms.len(), m.bonds.len(), h) != (c.atoms, c.bonds, c.hydrogens) {
                    failures.push(format!(
                        "{}: got ({}, {}, {h}), want ({}, {}, {})",
                        c.smiles,
                        m.atoms.len(),
                        m.bonds.len(),
                        c.atoms,
                        c.bonds,
                        c.hydrogens
                    ));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", c.smiles)),
        }
    }
    if failures.is_empty() {
        Ok(cases.len())
    } else {
        Err(failures.join("\n"))
    }
}

const ALPHABET: &[u8] = b"CNOSPFIBrlcnosp()[]=#-+:/\\@.%0123456789H*";

fn mutate(rng: &mut impl Rng, base: &str) -> String {
    let mut b = base.as_bytes().to_vec();
    for _ in 0..rng.gen_range(1..4) {
        let c = *ALPHABET.choose(rng).unwrap();
        match rng.gen_range(0..3) {
            0 if !b.is_empty() => {
                let i = rng.gen_range(0..b.len());
                b[i] = c;
            }
            1 if !b.is_empty() => {
                b.remove(rng.gen_range(0..b.len()));
            }
            _ => {
                let i = rng.gen_range(0..=b.len());
                b.insert(i, c);
            }
        }
    }
    String::from_utf8(b).unwrap()
}

/// Number of fuzz inputs that parsed. A panic escapes to the caller.
pub fn fuzz() -> Result<usize, String> {
    let cases = suite();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut parsed = 0;
    for k in 0..FUZZ_CASES {
        let s = if k % 2 == 0 {
            let base = cases.choose(&mut rng).unwrap().smiles;
            mutate(&mut rng, base)
        } else {
            let n = rng.gen_range(0..24);
            (0..n).map(|_| *ALPHABET.choose(&mut rng).unwrap() as char).collect()
        };
        match parse_smiles(&s) {
            Ok(m) => {
                parsed += 1;
                if m.bonds
                    .iter()
                    .any(|b| b.a >= m.atoms.len() || b.b >= m.atoms.len() || b.a == b.b)
                {
                    return Err(format!("{s}: bond endpoints out of range"));
                }
                for i in 0..m.atoms.len() {
                    implicit_hydrogens(&m, i);
                }
            }
            Err(e) if e.position() > s.len() => return Err(format!("{s}: {e} points past the end")),
            Err(_) => {}
        }
    }
    Ok(parsed)
}
