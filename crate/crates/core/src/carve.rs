//! Train/test separation by carving the meta-graph into molecule components.
//!
//! Every molecule is assigned to one component; a pair edge is usable only
//! when both its molecules share a component, otherwise it is discarded.
//! The search draws random per-node assignments and keeps the best one that
//! gives every required label at least one usable edge in every component.
//!
//! Component ids: 0 = train, 1 = test, 2 = validation (three-way carvings).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::MetaGraph;

pub const TRAIN: u8 = 0;
pub const TEST: u8 = 1;
pub const VALID: u8 = 2;

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Maximize the number of usable (intra-component) edges.
    UsableEdges,
    /// Minimize the summed KL divergence of each component's label
    /// distribution from the whole graph's.
    KlScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Run the full iteration budget and keep the best valid carving.
    BestOf,
    /// Stop at the first carving that passes coverage.
    FirstValid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarveConfig {
    pub train_fraction: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Labels that need coverage; `None` means every label carried by an edge.
    pub required_labels: Option<Vec<usize>>,
    pub mode: SearchMode,
    pub kl_epsilon: f64,
}

impl Default for CarveConfig {
    fn default() -> Self {
        CarveConfig {
            train_fraction: 0.5,
            max_iterations: 100_000,
            seed: 0,
            objective: Objective::UsableEdges,
            required_labels: None,
            mode: SearchMode::BestOf,
            kl_epsilon: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CarveError {
    #[error("no carving covered every required label after {iterations} iterations")]
    NoCoverageFound {
        iterations: usize,
        /// Per uncovered label, usable-edge counts per component in the
        /// closest carving found.
        deficits: Vec<(usize, Vec<usize>)>,
    },
    #[error("distribution dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid carve configuration: {0}")]
    InvalidConfig(String),
    #[error("meta-graph has no molecules")]
    EmptyGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carving {
    pub n_components: usize,
    pub assignment: Vec<u8>,
    /// Edge ids per component.
    pub usable: Vec<Vec<usize>>,
    pub discarded: Vec<usize>,
    /// `coverage[label][component]` = usable edges carrying the label.
    pub coverage: Vec<Vec<usize>>,
    /// Labels this carving is required to (and does) cover, when known.
    pub labels: Vec<usize>,
    pub seed: u64,
    pub iterations_used: usize,
}

impl Carving {
    pub fn from_assignment(mg: &MetaGraph, assignment: Vec<u8>, n_components: usize) -> Self {
        let mut usable = vec![Vec::new(); n_components];
        let mut discarded = Vec::new();
        let mut coverage = vec![vec![0; n_components]; mg.vocab.len()];
        for (k, e) in mg.edges.iter().enumerate() {
            let (ca, cb) = (assignment[e.a], assignment[e.b]);
            if ca == cb {
                usable[ca as usize].push(k);
                for &l in e.labels.indices() {
                    coverage[l][ca as usize] += 1;
                }
            } else {
                discarded.push(k);
            }
        }
        Carving {
            n_components,
            assignment,
            usable,
            discarded,
            coverage,
            labels: Vec::new(),
            seed: 0,
            iterations_used: 0,
        }
    }

    pub fn usable_count(&self) -> usize {
        self.usable.iter().map(Vec::len).sum()
    }

    pub fn edges_in(&self, component: u8) -> &[usize] {
        &self.usable[component as usize]
    }

    pub fn nodes_in(&self, component: u8) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == component)
            .map(|(i, _)| i)
    }

    pub fn covers(&self, label: usize) -> bool {
        self.coverage.get(label).is_some_and(|c| c.iter().all(|&n| n > 0))
    }

    fn covered_count(&self, labels: &[usize]) -> usize {
        labels.iter().filter(|&&l| self.covers(l)).count()
    }
}

/// Component draw for one node: `u < f0` → 0, `u < f0 + f1` → 1, ...
fn draw(fractions: &[f64], rng: &mut impl Rng) -> u8 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, f) in fractions.iter().enumerate().take(fractions.len() - 1) {
        acc += f;
        if u < acc {
            return c as u8;
        }
    }
    (fractions.len() - 1) as u8
}

fn partition(mg: &MetaGraph, fractions: &[f64], rng: &mut impl Rng) -> Carving {
    let assignment = (0..mg.num_nodes()).map(|_| draw(fractions, rng)).collect();
    Carving::from_assignment(mg, assignment, fractions.len())
}

/// Independent per-node coin flips: train with probability `fraction`.
pub fn random_partition(mg: &MetaGraph, fraction: f64, rng: &mut impl Rng) -> Carving {
    partition(mg, &[fraction, 1.0 - fraction], rng)
}

/// True iff every label in `required` has a usable edge in every component.
pub fn coverage_ok(c: &Carving, required: &[usize]) -> bool {
    required.iter().all(|&l| c.covers(l))
}

/// Edges whose endpoints lie in different components.
pub fn edge_boundary_degree(c: &Carving) -> usize {
    c.discarded.len()
}

/// `Σ p_i ln(p_i / q_i)` after adding `epsilon` to every count and
/// normalizing.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64, CarveError> {
    if p.len() != q.len() {
        return Err(CarveError::DimensionMismatch(p.len(), q.len()));
    }
    let norm = |v: &[f64]| -> Vec<f64> {
        let total: f64 = v.iter().map(|x| x + epsilon).sum();
        v.iter().map(|x| (x + epsilon) / total).collect()
    };
    let (p, q) = (norm(p), norm(q));
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Sum over components of KL(component label distribution ‖ whole graph).
pub fn kl_score(c: &Carving, mg: &MetaGraph, epsilon: f64) -> f64 {
    let mut overall = vec![0.0; mg.vocab.len()];
    for e in &mg.edges {
        for &l in e.labels.indices() {
            overall[l] += 1.0;
        }
    }
    (0..c.n_components)
        .map(|comp| {
            let dist: Vec<f64> = c.coverage.iter().map(|per| per[comp] as f64).collect();
            kl_divergence(&dist, &overall, epsilon).unwrap_or(f64::INFINITY)
        })
        .sum()
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

struct Candidate {
    iteration: usize,
    carving: Carving,
    covered: usize,
    score: f64,
}

/// Higher is better; ties go to the lower iteration index.
fn better(a: &Candidate, b: &Candidate) -> bool {
    a.score > b.score || (a.score == b.score && a.iteration < b.iteration)
}

fn closer(a: &Candidate, b: &Candidate) -> bool {
    (a.covered, a.carving.usable_count(), std::cmp::Reverse(a.iteration))
        > (b.covered, b.carving.usable_count(), std::cmp::Reverse(b.iteration))
}

fn validate_fractions(fractions: &[f64]) -> Result<(), CarveError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CarveError::InvalidConfig(format!(
            "component fractions {fractions:?} must lie in (0,1) and sum to 1"
        )));
    }
    Ok(())
}

/// Searches random `fractions`-weighted partitions for the best carving that
/// covers `required`.
fn search(mg: &MetaGraph, fractions: &[f64], required: &[usize], cfg: &CarveConfig) -> Result<Carving, CarveError> {
    if mg.num_nodes() == 0 {
        return Err(CarveError::EmptyGraph);
    }
    if cfg.max_iterations == 0 {
        return Err(CarveError::InvalidConfig("max_iterations must be ≥ 1".into()));
    }
    validate_fractions(fractions)?;

    let evaluate = |iteration: usize| {
        let carving = partition(mg, fractions, &mut iteration_rng(cfg.seed, iteration));
        let covered = carving.covered_count(required);
        let score = match cfg.objective {
            Objective::UsableEdges => carving.usable_count() as f64,
            Objective::KlScore => -kl_score(&carving, mg, cfg.kl_epsilon),
        };
        Candidate {
            iteration,
            carving,
            covered,
            score,
        }
    };

    let mut best: Option<Candidate> = None;
    let mut closest: Option<Candidate> = None;
    let mut start = 0;
    while start < cfg.max_iterations {
        let end = (start + CHUNK).min(cfg.max_iterations);
        let (chunk_best, chunk_closest) = (start..end)
            .into_par_iter()
            .map(|i| {
                let c = evaluate(i);
                if c.covered == required.len() {
                    (Some(c), None)
                } else {
                    (None, Some(c))
                }
            })
            .reduce(
                || (None, None),
                |(b1, c1), (b2, c2)| {
                    let pick = |x: Option<Candidate>, y: Option<Candidate>, f: fn(&Candidate, &Candidate) -> bool| {
                        match (x, y) {
                            (Some(x), Some(y)) => Some(if f(&y, &x) { y } else { x }),
                            (x, y) => x.or(y),
                        }
                    };
                    (pick(b1, b2, better), pick(c1, c2, closer))
                },
            );
        for (slot, cand, cmp) in [
            (&mut best, chunk_best, better as fn(&Candidate, &Candidate) -> bool),
            (&mut closest, chunk_closest, closer),
        ] {
            if let Some(c) = cand {
                if slot.as_ref().is_none_or(|s| cmp(&c, s)) {
                    *slot = Some(c);
                }
            }
        }
        start = end;
        if cfg.mode == SearchMode::FirstValid {
            if let Some(b) = &best {
                // lowest valid index in the first chunk that has one
                let mut c = evaluate(b.iteration);
                let first = (b.iteration.saturating_sub(CHUNK)..end)
                    .find(|&i| evaluate(i).covered == required.len())
                    .unwrap_or(b.iteration);
                if first != b.iteration {
                    c = evaluate(first);
                }
                let mut carving = c.carving;
                carving.labels = required.to_vec();
                carving.seed = cfg.seed;
                carving.iterations_used = first + 1;
                return Ok(carving);
            }
        }
    }

    match best {
        Some(b) => {
            let mut carving = b.carving;
            carving.labels = required.to_vec();
            carving.seed = cfg.seed;
            carving.iterations_used = cfg.max_iterations;
            Ok(carving)
        }
        None => {
            let c = closest.expect("at least one iteration ran").carving;
            let deficits = required
                .iter()
                .filter(|&&l| !c.covers(l))
                .map(|&l| (l, c.coverage[l].clone()))
                .collect();
            Err(CarveError::NoCoverageFound {
                iterations: cfg.max_iterations,
                deficits,
            })
        }
    }
}

fn required_labels(mg: &MetaGraph, cfg: &CarveConfig) -> Vec<usize> {
    cfg.required_labels.clone().unwrap_or_else(|| mg.edge_labels())
}

/// Two-way train/test carving search.
pub fn carve_search(mg: &MetaGraph, cfg: &CarveConfig) -> Result<Carving, CarveError> {
    let f = cfg.train_fraction;
    search(mg, &[f, 1.0 - f], &required_labels(mg, cfg), cfg)
}

/// Carving maximizing (labels covered, usable edges) over `candidates`.
fn max_coverage(mg: &MetaGraph, fractions: &[f64], candidates: &[usize], iterations: usize, seed: u64) -> Carving {
    (0..iterations)
        .into_par_iter()
        .map(|i| {
            let c = partition(mg, fractions, &mut iteration_rng(seed, i));
            let covered: Vec<usize> = candidates.iter().copied().filter(|&l| c.covers(l)).collect();
            (covered.len(), c.usable_count(), std::cmp::Reverse(i), c, covered)
        })
        .max_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)))
        .map(|(_, _, _, mut c, covered)| {
            c.labels = covered;
            c.seed = seed;
            c.iterations_used = iterations;
            c
        })
        .expect("iterations ≥ 1")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarvableLabels {
    /// Covered set of the single best attempt.
    pub best: Vec<usize>,
    /// Union of all attempts' covered sets.
    pub union: Vec<usize>,
    pub per_attempt: Vec<Vec<usize>>,
}

/// Labels that can be covered by a train/test carving, estimated over
/// `attempts` independent searches of `cfg.max_iterations` partitions each
/// (attempt `k` uses seed `cfg.seed + k`).
pub fn carvable_labels(mg: &MetaGraph, cfg: &CarveConfig, attempts: usize) -> Result<CarvableLabels, CarveError> {
    if attempts == 0 || cfg.max_iterations == 0 {
        return Err(CarveError::InvalidConfig(
            "attempts and max_iterations must be ≥ 1".into(),
        ));
    }
    let candidates = required_labels(mg, cfg);
    if mg.num_nodes() == 0 || candidates.is_empty() {
        return Ok(CarvableLabels {
            best: vec![],
            union: vec![],
            per_attempt: vec![vec![]; attempts],
        });
    }
    let f = cfg.train_fraction;
    validate_fractions(&[f, 1.0 - f])?;
    let per_attempt: Vec<Vec<usize>> = (0..attempts)
        .map(|k| {
            max_coverage(
                mg,
                &[f, 1.0 - f],
                &candidates,
                cfg.max_iterations,
                cfg.seed.wrapping_add(k as u64),
            )
            .labels
        })
        .collect();
    let best = per_attempt
        .iter()
        .max_by_key(|s| (s.len(), std::cmp::Reverse(s.as_slice())))
        .cloned()
        .unwrap_or_default();
    let union: BTreeSet<usize> = per_attempt.iter().flatten().copied().collect();
    Ok(CarvableLabels {
        best,
        union: union.into_iter().collect(),
        per_attempt,
    })
}

/// `k` independent train/test/validation carvings; `ratios` = (train, valid, test).
/// Fold `f` uses seed `cfg.seed + f`. Without `cfg.required_labels`, each
/// fold covers the largest label set its search finds, recorded in
/// [`Carving::labels`].
pub fn kfold_carvings(
    mg: &MetaGraph,
    k: usize,
    ratios: (f64, f64, f64),
    cfg: &CarveConfig,
) -> Result<Vec<Carving>, CarveError> {
    if k < 2 {
        return Err(CarveError::InvalidConfig("k must be ≥ 2".into()));
    }
    if mg.num_nodes() == 0 {
        return Err(CarveError::EmptyGraph);
    }
    let (tr, va, te) = ratios;
    // component order: train, test, valid
    let fractions = [tr, te, va];
    validate_fractions(&fractions)?;
    (0..k)
        .map(|f| {
            let fold_cfg = CarveConfig {
                seed: cfg.seed.wrapping_add(f as u64),
                ..cfg.clone()
            };
            match &cfg.required_labels {
                Some(req) => search(mg, &fractions, req, &fold_cfg),
                None => {
                    let c = max_coverage(
                        mg,
                        &fractions,
                        &mg.edge_labels(),
                        cfg.max_iterations.max(1),
                        fold_cfg.seed,
                    );
                    if c.labels.is_empty() {
                        Err(CarveError::NoCoverageFound {
                            iterations: cfg.max_iterations,
                            deficits: vec![],
                        })
                    } else {
                        Ok(c)
                    }
                }
            }
        })
        .collect()
}

/// On-disk carving description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarvingFile {
    pub seed: u64,
    pub config: CarveConfig,
    pub n_components: usize,
    pub assignment: BTreeMap<String, u8>,
    pub discarded_count: usize,
    /// label -> [train, test(, valid)]
    pub coverage: BTreeMap<String, Vec<usize>>,
    pub labels: Vec<String>,
    pub iterations_used: usize,
}

impl CarvingFile {
    pub fn new(c: &Carving, mg: &MetaGraph, cfg: &CarveConfig) -> Self {
        CarvingFile {
            seed: c.seed,
            config: cfg.clone(),
            n_components: c.n_components,
            assignment: mg.molecules.iter().cloned().zip(c.assignment.iter().copied()).collect(),
            discarded_count: c.discarded.len(),
            coverage: c
                .coverage
                .iter()
                .enumerate()
                .filter(|(_, counts)| counts.iter().any(|&n| n > 0))
                .map(|(l, counts)| (mg.vocab.note(l).to_string(), counts.clone()))
                .collect(),
            labels: c.labels.iter().map(|&l| mg.vocab.note(l).to_string()).collect(),
            iterations_used: c.iterations_used,
        }
    }

    /// Rebuilds the carving against `mg`; molecules missing from the file
    /// are an error.
    pub fn to_carving(&self, mg: &MetaGraph) -> Result<Carving, CarveError> {
        let assignment = mg
            .molecules
            .iter()
            .map(|s| {
                self.assignment
                    .get(s)
                    .copied()
                    .ok_or_else(|| CarveError::InvalidConfig(format!("molecule {s} missing from carving")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut c = Carving::from_assignment(mg, assignment, self.n_components);
        c.labels = self
            .labels
            .iter()
            .map(|n| {
                mg.vocab
                    .get(n)
                    .ok_or_else(|| CarveError::InvalidConfig(format!("unknown label {n}")))
            })
            .collect::<Result<_, _>>()?;
        c.seed = self.seed;
        c.iterations_used = self.iterations_used;
        Ok(c)
    }
}
