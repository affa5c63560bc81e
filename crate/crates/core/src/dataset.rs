//! Labeled pair/single-molecule ingestion and the molecule meta-graph.
//!
//! Input files are JSON lines:
//!
//! ```text
//! {"smiles_a": "CCO", "smiles_b": "CC(=O)O", "labels": ["fruity", "sour"]}   // pairs
//! {"smiles": "CCO", "labels": ["alcoholic"]}                                // mono
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{parse_smiles, Molecule, SmilesError};

/// Marker the source data uses for pairs that have no odor annotation.
pub const NO_LABEL_SENTINEL: &str = "no odor group found for these";

const RENAMES: [(&str, &str); 3] = [("anisic", "anise"), ("medicinal,", "medicinal"), ("corn chip", "corn")];

/// Trims, lowercases and applies the note rename table. Returns `None` for
/// the no-label sentinel and for blank input.
pub fn canonicalize_label(raw: &str) -> Option<String> {
    let note = raw.trim().to_lowercase();
    if note.is_empty() || note == NO_LABEL_SENTINEL {
        return None;
    }
    Some(
        RENAMES
            .iter()
            .find(|(from, _)| *from == note)
            .map_or(note, |(_, to)| to.to_string()),
    )
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabelVocab {
    notes: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for LabelVocab {
    fn eq(&self, other: &Self) -> bool {
        self.notes == other.notes
    }
}

impl Eq for LabelVocab {}

impl LabelVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_notes(notes: impl IntoIterator<Item = String>) -> Self {
        let mut v = Self::new();
        for n in notes {
            v.intern(&n);
        }
        v
    }

    /// Index of `note`, appending it when new.
    pub fn intern(&mut self, note: &str) -> usize {
        if self.index.len() != self.notes.len() {
            self.reindex();
        }
        if let Some(&i) = self.index.get(note) {
            return i;
        }
        self.notes.push(note.to_string());
        self.index.insert(note.to_string(), self.notes.len() - 1);
        self.notes.len() - 1
    }

    fn reindex(&mut self) {
        self.index = self.notes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    }

    pub fn get(&self, note: &str) -> Option<usize> {
        self.notes.iter().position(|n| n == note)
    }

    pub fn note(&self, i: usize) -> &str {
        &self.notes[i]
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Newline-delimited notes; line number = index.
    pub fn to_text(&self) -> String {
        self.notes.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn from_text(text: &str) -> Self {
        Self::from_notes(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from))
    }
}

/// Sorted, duplicate-free set of label indices (a sparse multi-hot vector).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        LabelVector(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::new(self.0.iter().chain(&other.0).copied().collect())
    }

    pub fn intersection(&self, other: &Self) -> Self {
        LabelVector(self.0.iter().copied().filter(|l| other.contains(*l)).collect())
    }

    /// Jaccard index with `J(∅, ∅) = 1`.
    pub fn jaccard(&self, other: &Self) -> f64 {
        let union = self.union(other).len();
        if union == 0 {
            return 1.0;
        }
        self.intersection(other).len() as f64 / union as f64
    }

    /// Dense 0/1 vector over `labels` (position `k` is `labels[k]`).
    pub fn dense_over(&self, labels: &[usize]) -> Vec<f64> {
        labels
            .iter()
            .map(|&l| if self.contains(l) { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub smiles_a: String,
    pub smiles_b: String,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonoRecord {
    pub smiles: String,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEdge {
    pub a: usize,
    pub b: usize,
    pub labels: LabelVector,
}

/// Molecules as nodes, labeled blends as edges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaGraph {
    pub vocab: LabelVocab,
    pub molecules: Vec<String>,
    pub edges: Vec<PairEdge>,
}

impl MetaGraph {
    pub fn num_nodes(&self) -> usize {
        self.molecules.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.molecules
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    /// Labels carried by at least one edge, ascending.
    pub fn edge_labels(&self) -> Vec<usize> {
        let mut seen = vec![false; self.vocab.len()];
        for e in &self.edges {
            for &l in e.labels.indices() {
                seen[l] = true;
            }
        }
        (0..seen.len()).filter(|&l| seen[l]).collect()
    }

    pub fn label_sets(&self) -> Vec<LabelVector> {
        self.edges.iter().map(|e| e.labels.clone()).collect()
    }

    pub fn parse_molecules(&self) -> Result<Vec<Molecule>, SmilesError> {
        self.molecules.iter().map(|s| parse_smiles(s)).collect()
    }

    /// Adds an edge, merging labels into an existing edge on the same
    /// unordered node pair. Returns `true` when merged.
    pub fn add_edge(&mut self, a: usize, b: usize, labels: LabelVector) -> bool {
        assert_ne!(a, b, "self-loop pair edge");
        if let Some(e) = self
            .edges
            .iter_mut()
            .find(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
        {
            e.labels = e.labels.union(&labels);
            return true;
        }
        self.edges.push(PairEdge { a, b, labels });
        false
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub read: usize,
    pub kept: usize,
    pub dropped_parse: usize,
    pub dropped_empty_labels: usize,
    pub dropped_self_pairs: usize,
    pub merged_duplicates: usize,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("no pair had labels for both constituents")]
    NoOverlap,
}

#[derive(Deserialize)]
struct RawPair {
    smiles_a: String,
    smiles_b: String,
    labels: Vec<String>,
}

#[derive(Deserialize)]
struct RawMono {
    smiles: String,
    labels: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    File::open(path).map(BufReader::new).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn json_lines<'a, T: for<'de> Deserialize<'de>>(
    reader: impl BufRead + 'a,
    path: &'a Path,
) -> impl Iterator<Item = Result<T, DatasetError>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Err(source) => Some(Err(DatasetError::Io {
            path: path.display().to_string(),
            source,
        })),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(|e| DatasetError::Format {
            line: i + 1,
            message: e.to_string(),
        })),
    })
}

fn clean_labels(raw: &[String], vocab: &mut LabelVocab) -> LabelVector {
    LabelVector::new(
        raw.iter()
            .filter_map(|r| canonicalize_label(r))
            .map(|n| vocab.intern(&n))
            .collect(),
    )
}

pub fn load_pairs(path: &Path) -> Result<(MetaGraph, IngestReport), DatasetError> {
    load_pairs_with_vocab(path, LabelVocab::new())
}

/// Like [`load_pairs`], starting from a persisted vocabulary so that known
/// notes keep their indices.
pub fn load_pairs_with_vocab(path: &Path, vocab: LabelVocab) -> Result<(MetaGraph, IngestReport), DatasetError> {
    pairs_from_reader(open(path)?, path, vocab)
}

pub fn pairs_from_reader(
    reader: impl BufRead,
    path: &Path,
    vocab: LabelVocab,
) -> Result<(MetaGraph, IngestReport), DatasetError> {
    let mut mg = MetaGraph {
        vocab,
        ..Default::default()
    };
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pair_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut report = IngestReport::default();

    for raw in json_lines::<RawPair>(reader, path) {
        let raw = raw?;
        report.read += 1;
        let (sa, sb) = (raw.smiles_a.trim(), raw.smiles_b.trim());
        if parse_smiles(sa).is_err() || parse_smiles(sb).is_err() {
            report.dropped_parse += 1;
            continue;
        }
        let labels = clean_labels(&raw.labels, &mut mg.vocab);
        if labels.is_empty() {
            report.dropped_empty_labels += 1;
            continue;
        }
        if sa == sb {
            report.dropped_self_pairs += 1;
            continue;
        }
        let mut node = |s: &str| {
            *index.entry(s.to_string()).or_insert_with(|| {
                mg.molecules.push(s.to_string());
                mg.molecules.len() - 1
            })
        };
        let (a, b) = (node(sa), node(sb));
        report.kept += 1;
        let key = (a.min(b), a.max(b));
        match pair_index.get(&key) {
            Some(&e) => {
                let edge = &mut mg.edges[e];
                edge.labels = edge.labels.union(&labels);
                report.merged_duplicates += 1;
            }
            None => {
                pair_index.insert(key, mg.edges.len());
                mg.edges.push(PairEdge { a, b, labels });
            }
        }
    }
    Ok((mg, report))
}

/// Loads single-molecule records, growing `vocab`. Duplicate SMILES are
/// merged by label union.
pub fn load_mono(path: &Path, vocab: &mut LabelVocab) -> Result<(Vec<MonoRecord>, IngestReport), DatasetError> {
    mono_from_reader(open(path)?, path, vocab)
}

pub fn mono_from_reader(
    reader: impl BufRead,
    path: &Path,
    vocab: &mut LabelVocab,
) -> Result<(Vec<MonoRecord>, IngestReport), DatasetError> {
    let mut out: Vec<MonoRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut report = IngestReport::default();
    for raw in json_lines::<RawMono>(reader, path) {
        let raw = raw?;
        report.read += 1;
        let s = raw.smiles.trim();
        if parse_smiles(s).is_err() {
            report.dropped_parse += 1;
            continue;
        }
        let labels = clean_labels(&raw.labels, vocab);
        if labels.is_empty() {
            report.dropped_empty_labels += 1;
            continue;
        }
        report.kept += 1;
        match index.get(s) {
            Some(&i) => {
                out[i].labels = out[i].labels.union(&labels);
                report.merged_duplicates += 1;
            }
            None => {
                index.insert(s.to_string(), out.len());
                out.push(MonoRecord {
                    smiles: s.to_string(),
                    labels,
                });
            }
        }
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub j_union: f64,
    pub j_intersection: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Mean Jaccard agreement between each blend's labels and the union /
/// intersection of its constituents' single-molecule labels.
pub fn jaccard_blend_analysis(mg: &MetaGraph, mono: &[MonoRecord]) -> Result<JaccardReport, DatasetError> {
    let by_smiles: HashMap<&str, &LabelVector> = mono.iter().map(|m| (m.smiles.as_str(), &m.labels)).collect();
    let (mut su, mut si, mut used, mut skipped) = (0.0, 0.0, 0, 0);
    for e in &mg.edges {
        let la = by_smiles.get(mg.molecules[e.a].as_str());
        let lb = by_smiles.get(mg.molecules[e.b].as_str());
        let (Some(la), Some(lb)) = (la, lb) else {
            skipped += 1;
            continue;
        };
        su += la.union(lb).jaccard(&e.labels);
        si += la.intersection(lb).jaccard(&e.labels);
        used += 1;
    }
    if used == 0 {
        return Err(DatasetError::NoOverlap);
    }
    Ok(JaccardReport {
        j_union: su / used as f64,
        j_intersection: si / used as f64,
        pairs_used: used,
        pairs_skipped: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependentNote {
    pub dependent: usize,
    pub parent: usize,
    pub frequency: usize,
}

fn occurrences(records: &[LabelVector]) -> BTreeMap<usize, Vec<usize>> {
    let mut occ: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, rec) in records.iter().enumerate() {
        for &l in rec.indices() {
            occ.entry(l).or_default().push(r);
        }
    }
    occ
}

/// Notes that only ever occur alongside a given parent note. A note with
/// several such parents yields one row per parent. Sorted by descending
/// frequency, then by (dependent, parent).
pub fn dependent_notes(records: &[LabelVector]) -> Vec<DependentNote> {
    let occ = occurrences(records);
    let mut out = Vec::new();
    for (&d, rows) in &occ {
        let mut parents: Option<LabelVector> = None;
        for &r in rows {
            let others = LabelVector(records[r].indices().iter().copied().filter(|&l| l != d).collect());
            parents = Some(match parents {
                None => others,
                Some(p) => p.intersection(&others),
            });
        }
        for &p in parents.unwrap_or_default().indices() {
            out.push(DependentNote {
                dependent: d,
                parent: p,
                frequency: rows.len(),
            });
        }
    }
    out.sort_by(|x, y| {
        y.frequency
            .cmp(&x.frequency)
            .then(x.dependent.cmp(&y.dependent))
            .then(x.parent.cmp(&y.parent))
    });
    out
}

/// Notes that never share a record with any other note, with their counts.
pub fn isolate_notes(records: &[LabelVector]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = occurrences(records)
        .into_iter()
        .filter(|(_, rows)| rows.iter().all(|&r| records[r].len() == 1))
        .map(|(l, rows)| (l, rows.len()))
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}
