//! Rule-labeled synthetic molecules and blends for fixtures and smoke runs.
//!
//! A pair carries `alliaceous` iff either molecule contains sulfur, `fruity`
//! iff either contains oxygen, `floral` iff either has an aromatic ring and
//! `green` iff either contains nitrogen. Pairs matching no rule get `woody`.

use std::collections::HashSet;
use std::io::Cursor;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{mono_from_reader, pairs_from_reader, DatasetError, LabelVocab, MetaGraph, MonoRecord};
use crate::smiles::{parse_smiles, Molecule};

pub const SULFUR_NOTE: &str = "alliaceous";

const CORES: [&str; 10] = [
    "CC", "CCC", "CCCC", "CCCCCC", "CC(C)C", "c1ccccc1", "C1CCCCC1", "C1CCCC1", "c1ccncc1", "C1CCOC1",
];
const PLAIN: [&str; 8] = ["O", "C(=O)OC", "N", "CC", "C=C", "OC", "C(C)C", "CCO"];
const SULFUR: [&str; 5] = ["S", "SC", "CS", "SSC", "c1ccsc1"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could only build {built} distinct {what}, {wanted} requested")]
    TooSmall {
        what: &'static str,
        built: usize,
        wanted: usize,
    },
    #[error("sulfur rate must lie in [0, 1], got {0}")]
    InvalidRate(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub n_molecules: usize,
    /// Probability that a generated molecule carries a sulfur substituent.
    pub sulfur_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pairs: 500,
            n_molecules: 150,
            sulfur_rate: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPair {
    pub smiles_a: String,
    pub smiles_b: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMono {
    pub smiles: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub pairs: Vec<SynthPair>,
    pub mono: Vec<SynthMono>,
}

fn molecule_notes(mol: &Molecule) -> [bool; 4] {
    [
        mol.contains_element(16),
        mol.contains_element(8),
        mol.atoms.iter().any(|a| a.aromatic),
        mol.contains_element(7),
    ]
}

const NOTES: [&str; 4] = [SULFUR_NOTE, "fruity", "floral", "green"];
const FALLBACK: &str = "woody";

fn notes_of(flags: [bool; 4]) -> Vec<String> {
    let out: Vec<String> = NOTES
        .iter()
        .zip(flags)
        .filter(|(_, f)| *f)
        .map(|(n, _)| n.to_string())
        .collect();
    if out.is_empty() {
        vec![FALLBACK.to_string()]
    } else {
        out
    }
}

fn random_smiles(rng: &mut impl Rng, sulfur: bool) -> String {
    let mut s = CORES.choose(rng).expect("non-empty").to_string();
    let n_subs = rng.gen_range(0..=2);
    for _ in 0..n_subs {
        s.push_str(PLAIN.choose(rng).expect("non-empty"));
    }
    if sulfur {
        s.push_str(SULFUR.choose(rng).expect("non-empty"));
    }
    s
}

/// Distinct parseable SMILES; each draws sulfur with probability `sulfur_rate`.
pub fn synth_molecules(n: usize, sulfur_rate: f64, rng: &mut impl Rng) -> Result<Vec<String>, SynthError> {
    if !(0.0..=1.0).contains(&sulfur_rate) {
        return Err(SynthError::InvalidRate(sulfur_rate));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n.saturating_mul(50).max(100) {
        if out.len() == n {
            break;
        }
        let sulfur = rng.gen_bool(sulfur_rate);
        let s = random_smiles(rng, sulfur);
        if parse_smiles(&s).is_ok() && seen.insert(s.clone()) {
            out.push(s);
        }
    }
    if out.len() < n {
        return Err(SynthError::TooSmall {
            what: "molecules",
            built: out.len(),
            wanted: n,
        });
    }
    Ok(out)
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let smiles = synth_molecules(cfg.n_molecules, cfg.sulfur_rate, &mut rng)?;
    let flags: Vec<[bool; 4]> = smiles
        .iter()
        .map(|s| molecule_notes(&parse_smiles(s).expect("generated SMILES parse")))
        .collect();
    let n = smiles.len();
    let max_pairs = n * n.saturating_sub(1) / 2;
    if cfg.n_pairs > max_pairs {
        return Err(SynthError::TooSmall {
            what: "pairs",
            built: max_pairs,
            wanted: cfg.n_pairs,
        });
    }
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    while pairs.len() < cfg.n_pairs {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        let joint = std::array::from_fn(|k| flags[a][k] || flags[b][k]);
        pairs.push(SynthPair {
            smiles_a: smiles[a].clone(),
            smiles_b: smiles[b].clone(),
            labels: notes_of(joint),
        });
    }
    let mono = smiles
        .iter()
        .zip(&flags)
        .map(|(s, &f)| SynthMono {
            smiles: s.clone(),
            labels: notes_of(f),
        })
        .collect();
    Ok(SynthDataset { pairs, mono })
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("plain records serialize") + "\n")
        .collect()
}

impl SynthDataset {
    pub fn pairs_jsonl(&self) -> String {
        jsonl(&self.pairs)
    }

    pub fn mono_jsonl(&self) -> String {
        jsonl(&self.mono)
    }

    /// Meta-graph and single-molecule records as the ingest path would build them.
    pub fn ingest(&self) -> Result<(MetaGraph, Vec<MonoRecord>), SynthError> {
        let origin = Path::new("<synthetic>");
        let (mut mg, _) = pairs_from_reader(Cursor::new(self.pairs_jsonl()), origin, LabelVocab::new())?;
        let (mono, _) = mono_from_reader(Cursor::new(self.mono_jsonl()), origin, &mut mg.vocab)?;
        Ok((mg, mono))
    }
}
