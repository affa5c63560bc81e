//! Graph neural network models for pair and single-molecule odor prediction.
//!
//! Two architectures share one batching layer:
//!
//! - [`GinModel`] embeds each molecule separately with a weight-tied GIN,
//!   pools with concatenated mean and sum, then mixes the two graph embeddings
//!   through a pair network.
//! - [`MpnnModel`] runs edge-conditioned message passing over the disjoint
//!   union of the pair, folds bond embeddings into atoms and reads out the
//!   whole graph with [`set2set`].

mod gin;
mod mpnn;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabelVector;
use crate::featurize::{pair_graph, FeaturizeError, MolGraph, ATOM_FEATURES, BOND_FEATURES};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

pub use gin::{gin_step, readout_mean_add, GinModel, GinUpdate};
pub use mpnn::{set2set, MpnnModel, Set2Set};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error("component {0} has no nodes")]
    EmptyComponent(usize),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("this model needs a molecule pair")]
    PairRequired,
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Gin,
    Mpnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight each label's BCE by `ln(1 + IRLbl)`.
    pub weighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub hidden_dim: usize,
    pub mp_steps: usize,
    pub set2set_steps: usize,
    pub set2set_layers: usize,
    pub ffn_hidden: Vec<usize>,
    pub label_count: usize,
    pub loss: LossConfig,
    #[serde(default = "default_atom_width")]
    pub atom_width: usize,
    #[serde(default = "default_bond_width")]
    pub bond_width: usize,
    /// Hidden width of the MPNN edge network.
    #[serde(default = "default_edge_hidden")]
    pub edge_hidden: usize,
}

fn default_atom_width() -> usize {
    ATOM_FEATURES
}

fn default_bond_width() -> usize {
    BOND_FEATURES
}

fn default_edge_hidden() -> usize {
    32
}

impl ModelConfig {
    pub fn gin(hidden_dim: usize, label_count: usize) -> Self {
        ModelConfig {
            arch: Arch::Gin,
            hidden_dim,
            mp_steps: 3,
            set2set_steps: 0,
            set2set_layers: 0,
            ffn_hidden: vec![],
            label_count,
            loss: LossConfig { weighted: false },
            atom_width: ATOM_FEATURES,
            bond_width: BOND_FEATURES,
            edge_hidden: default_edge_hidden(),
        }
    }

    pub fn mpnn(hidden_dim: usize, label_count: usize) -> Self {
        ModelConfig {
            arch: Arch::Mpnn,
            hidden_dim,
            mp_steps: 3,
            set2set_steps: 3,
            set2set_layers: 3,
            ffn_hidden: vec![300],
            label_count,
            loss: LossConfig { weighted: true },
            atom_width: ATOM_FEATURES,
            bond_width: BOND_FEATURES,
            edge_hidden: default_edge_hidden(),
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: &str| Err(GnnError::InvalidConfig(m.into()));
        if self.hidden_dim == 0 || self.label_count == 0 || self.atom_width == 0 {
            return bad("hidden_dim, label_count and atom_width must be ≥ 1");
        }
        if self.mp_steps == 0 {
            return bad("mp_steps must be ≥ 1");
        }
        if self.arch == Arch::Mpnn && (self.set2set_steps == 0 || self.set2set_layers == 0 || self.edge_hidden == 0) {
            return bad("set2set_steps, set2set_layers and edge_hidden must be ≥ 1");
        }
        if self.ffn_hidden.contains(&0) {
            return bad("ffn_hidden widths must be ≥ 1");
        }
        Ok(())
    }
}

/// One model input: a single molecule or an ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub parts: Vec<Arc<MolGraph>>,
    /// Disjoint union of `parts` (equal to the only part for singles).
    pub union: Arc<MolGraph>,
}

impl GraphInput {
    pub fn single(g: MolGraph) -> Self {
        let g = Arc::new(g);
        GraphInput {
            parts: vec![g.clone()],
            union: g,
        }
    }

    pub fn pair(g1: MolGraph, g2: MolGraph) -> Result<Self, GnnError> {
        let union = Arc::new(pair_graph(&g1, &g2)?);
        Ok(GraphInput {
            parts: vec![Arc::new(g1), Arc::new(g2)],
            union,
        })
    }

    pub fn is_pair(&self) -> bool {
        self.parts.len() == 2
    }

    /// The same pair in the opposite order.
    pub fn swapped(&self) -> Result<Self, GnnError> {
        match self.parts.as_slice() {
            [a, b] => GraphInput::pair((**b).clone(), (**a).clone()),
            _ => Err(GnnError::PairRequired),
        }
    }
}

/// Several graphs stacked into one node set.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub node_features: Tensor,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub edge_features: Tensor,
    /// Graph index of every node.
    pub node_graph: Arc<[usize]>,
    pub n_graphs: usize,
    /// Distinct edge-feature rows and each edge's row in that table.
    pub edge_table: Tensor,
    pub edge_kinds: Arc<[usize]>,
}

impl GraphBatch {
    pub fn new(graphs: &[&MolGraph]) -> Result<Self, GnnError> {
        let fa = graphs.first().map_or(ATOM_FEATURES, |g| g.atom_width());
        let fb = graphs.first().map_or(BOND_FEATURES, |g| g.bond_width());
        let (mut x, mut e) = (Vec::new(), Vec::new());
        let (mut src, mut dst, mut node_graph) = (Vec::new(), Vec::new(), Vec::new());
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.num_nodes() == 0 {
                return Err(GnnError::EmptyComponent(gi));
            }
            if (g.atom_width(), g.bond_width()) != (fa, fb) {
                return Err(FeaturizeError::WidthMismatch((fa, fb), (g.atom_width(), g.bond_width())).into());
            }
            x.extend_from_slice(g.node_features.data());
            e.extend_from_slice(g.edge_features.data());
            for &(a, b) in &g.edge_index {
                src.push(a + offset);
                dst.push(b + offset);
            }
            node_graph.extend(std::iter::repeat_n(gi, g.num_nodes()));
            offset += g.num_nodes();
        }
        let n_edges = src.len();
        let mut table: Vec<f64> = Vec::new();
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let kinds: Vec<usize> = e
            .chunks(fb.max(1))
            .take(n_edges)
            .map(|row| {
                let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
                let next = seen.len();
                *seen.entry(key).or_insert_with(|| {
                    table.extend_from_slice(row);
                    next
                })
            })
            .collect();
        Ok(GraphBatch {
            node_features: Tensor::from_vec(vec![offset, fa], x),
            src: src.into(),
            dst: dst.into(),
            edge_features: Tensor::from_vec(vec![n_edges, fb], e),
            node_graph: node_graph.into(),
            n_graphs: graphs.len(),
            edge_table: Tensor::from_vec(vec![seen.len(), fb], table),
            edge_kinds: kinds.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_graph.len()
    }
}

/// Forward-pass mode; dropout is active only in training.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut dyn RngCore },
}

/// Dense layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![1, fan_out]));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    pub fn fan_out(&self, store: &ParamStore) -> usize {
        store.value(self.w).cols()
    }
}

/// Inverted dropout; identity in [`Mode::Eval`] or at `p = 0`.
pub fn dropout(tape: &mut Tape, x: Var, mode: &mut Mode) -> Var {
    match mode {
        Mode::Train { dropout, rng } if *dropout > 0.0 => {
            let p = *dropout;
            let keep = 1.0 / (1.0 - p);
            let shape = tape.value(x).shape().to_vec();
            let n = shape[0] * shape[1];
            let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
            let m = tape.constant(Tensor::from_vec(shape, mask));
            tape.mul(x, m).expect("mask matches input shape")
        }
        _ => x,
    }
}

/// Hidden layers (each Linear → ReLU → dropout) followed by an output Linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ffn {
    pub layers: Vec<Linear>,
}

impl Ffn {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Ffn { layers }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut x: Var,
        mode: &mut Mode,
    ) -> Result<Var, TensorError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if i < last {
                x = tape.relu(x);
                x = dropout(tape, x, mode);
            }
        }
        Ok(x)
    }
}

/// Outputs of one forward pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Pair (or molecule) embedding rows.
    pub embedding: Var,
    /// `[batch, label_count]` pre-sigmoid scores.
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gin(GinModel),
    Mpnn(MpnnModel),
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, GnnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match cfg.arch {
            Arch::Gin => Model::Gin(GinModel::new(cfg.clone(), &mut rng)),
            Arch::Mpnn => Model::Mpnn(MpnnModel::new(cfg.clone(), &mut rng)),
        })
    }

    /// Rebuilds a model from stored parameters; names and shapes must match
    /// a freshly initialized model of `cfg`.
    pub fn from_params(cfg: &ModelConfig, store: ParamStore) -> Result<Self, GnnError> {
        let mut model = Model::new(cfg, 0)?;
        let fresh = model.params();
        if fresh.manifest() != store.manifest() {
            return Err(GnnError::CheckpointMismatch(format!(
                "expected {} tensors, found {}",
                fresh.len(),
                store.len()
            )));
        }
        *model.params_mut() = store;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Gin(m) => &m.cfg,
            Model::Mpnn(m) => &m.cfg,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Gin(m) => &m.store,
            Model::Mpnn(m) => &m.store,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Gin(m) => &mut m.store,
            Model::Mpnn(m) => &mut m.store,
        }
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &[&GraphInput], mode: &mut Mode) -> Result<Forward, GnnError> {
        if inputs.is_empty() {
            return Err(GnnError::EmptyDataset);
        }
        match self {
            Model::Gin(m) => m.forward(tape, inputs, mode),
            Model::Mpnn(m) => m.forward(tape, inputs, mode),
        }
    }

    /// Sigmoid probabilities `[inputs, label_count]` in eval mode.
    pub fn predict(&self, inputs: &[&GraphInput]) -> Result<Tensor, GnnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, inputs, &mut Mode::Eval)?;
        Ok(tape.value(out.logits).map(crate::tensor::sigmoid))
    }

    /// Pair embeddings (`[inputs, width]`) in eval mode.
    pub fn embed(&self, inputs: &[&GraphInput]) -> Result<Tensor, GnnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, inputs, &mut Mode::Eval)?;
        Ok(tape.value(out.embedding).clone())
    }

    /// Embedding of each molecule on its own: the GIN graph readout, or the
    /// MPNN set2set vector of the single-molecule graph.
    pub fn embed_molecules(&self, graphs: &[&MolGraph]) -> Result<Tensor, GnnError> {
        match self {
            Model::Gin(m) => m.embed_molecules(graphs),
            Model::Mpnn(m) => {
                let inputs: Vec<GraphInput> = graphs.iter().map(|g| GraphInput::single((*g).clone())).collect();
                let refs: Vec<&GraphInput> = inputs.iter().collect();
                m.embed(&refs)
            }
        }
    }
}

/// Per-label counts and imbalance weights over a labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub counts: Vec<usize>,
    pub irlbl: Vec<f64>,
    pub weights: Vec<f64>,
    /// Labels with zero count, given the rarest observed label's ratio.
    pub imputed: Vec<usize>,
}

/// `irlbl(λ) = max_μ count(μ) / count(λ)`, `weight(λ) = ln(1 + irlbl(λ))`.
pub fn irlbl(label_sets: &[LabelVector], n_labels: usize) -> Result<LabelStats, GnnError> {
    let mut counts = vec![0usize; n_labels];
    for set in label_sets {
        for &l in set.indices() {
            if l < n_labels {
                counts[l] += 1;
            }
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let min_seen = counts.iter().copied().filter(|&c| c > 0).min();
    let Some(min_seen) = min_seen else {
        return Err(GnnError::EmptyDataset);
    };
    let imputed: Vec<usize> = (0..n_labels).filter(|&l| counts[l] == 0).collect();
    let irlbl: Vec<f64> = counts
        .iter()
        .map(|&c| max as f64 / if c == 0 { min_seen } else { c } as f64)
        .collect();
    let weights = irlbl.iter().map(|r| (1.0 + r).ln()).collect();
    Ok(LabelStats {
        counts,
        irlbl,
        weights,
        imputed,
    })
}

/// Records `Σ_λ w_λ Σ_i BCE(sigmoid(z_iλ), y_iλ)` on the tape.
pub fn weighted_bce(tape: &mut Tape, logits: Var, targets: Arc<Tensor>, weights: Arc<[f64]>) -> Result<Var, GnnError> {
    Ok(tape.bce_with_logits(logits, targets, weights)?)
}

/// Dense `[items, n_labels]` 0/1 target matrix.
pub fn target_matrix(sets: &[&LabelVector], n_labels: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![sets.len(), n_labels]);
    for (i, s) in sets.iter().enumerate() {
        for &l in s.indices() {
            if l < n_labels {
                t.data_mut()[i * n_labels + l] = 1.0;
            }
        }
    }
    t
}
