use std::sync::Arc;

use rand::Rng;

use super::{dropout, Forward, GnnError, GraphBatch, GraphInput, Linear, Mode, ModelConfig};
use crate::featurize::MolGraph;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// The update MLP and ε shared by every message-passing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GinUpdate {
    pub lin1: Linear,
    pub lin2: Linear,
    pub eps: ParamId,
}

impl GinUpdate {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        GinUpdate {
            lin1: Linear::new(store, &format!("{name}.mlp.0"), d, d, rng),
            lin2: Linear::new(store, &format!("{name}.mlp.1"), d, d, rng),
            eps: store.add(format!("{name}.eps"), Tensor::scalar(0.0)),
        }
    }
}

/// `h'_v = MLP((1 + ε) h_v + Σ_{w ∈ N(v)} h_w)` with `MLP = Linear → ReLU → Linear`.
pub fn gin_step(
    tape: &mut Tape,
    store: &ParamStore,
    upd: &GinUpdate,
    h: Var,
    batch: &GraphBatch,
) -> Result<Var, GnnError> {
    let (n, d) = (tape.value(h).rows(), tape.value(h).cols());
    let msgs = tape.gather_rows(h, batch.src.clone())?;
    let agg = tape.scatter_add_rows(msgs, batch.dst.clone(), n)?;
    let eps = tape.param(store, upd.eps);
    let one_eps = tape.add_scalar(eps, 1.0);
    let scale = tape.broadcast(one_eps, n, d)?;
    let self_term = tape.mul(scale, h)?;
    let z = tape.add(self_term, agg)?;
    let z = upd.lin1.forward(tape, store, z)?;
    let z = tape.relu(z);
    Ok(upd.lin2.forward(tape, store, z)?)
}

/// `concat(mean, sum)` of node rows per segment; `[n_segments, 2 * width]`.
pub fn readout_mean_add(tape: &mut Tape, h: Var, segments: Arc<[usize]>, n_segments: usize) -> Result<Var, GnnError> {
    let mut counts = vec![0usize; n_segments];
    for &s in segments.iter() {
        if s < n_segments {
            counts[s] += 1;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(GnnError::EmptyComponent(empty));
    }
    let sum = tape.scatter_add_rows(h, segments, n_segments)?;
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let inv = tape.constant(Tensor::from_vec(vec![n_segments, 1], inv));
    let mean = tape.mul_col(sum, inv)?;
    Ok(tape.concat_cols(&[mean, sum])?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GinModel {
    pub(super) cfg: ModelConfig,
    pub(super) store: ParamStore,
    lin_in: Linear,
    update: GinUpdate,
    pair1: Linear,
    pair2: Linear,
    head: Linear,
}

impl GinModel {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.hidden_dim;
        let mut store = ParamStore::new();
        let lin_in = Linear::new(&mut store, "gin.input", cfg.atom_width, d, rng);
        let update = GinUpdate::new(&mut store, "gin.update", d, rng);
        let pair1 = Linear::new(&mut store, "gin.pair.0", 4 * d, d, rng);
        let pair2 = Linear::new(&mut store, "gin.pair.1", d, d, rng);
        let head = Linear::new(&mut store, "gin.head", d, cfg.label_count, rng);
        GinModel {
            cfg,
            store,
            lin_in,
            update,
            pair1,
            pair2,
            head,
        }
    }

    pub fn update(&self) -> &GinUpdate {
        &self.update
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Per-graph readouts `[graphs, 2D]` for a batch.
    pub fn embed_batch(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var, GnnError> {
        let x = tape.constant(batch.node_features.clone());
        let mut h = self.lin_in.forward(tape, &self.store, x)?;
        for _ in 0..self.cfg.mp_steps {
            h = gin_step(tape, &self.store, &self.update, h, batch)?;
        }
        readout_mean_add(tape, h, batch.node_graph.clone(), batch.n_graphs)
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &[&GraphInput], mode: &mut Mode) -> Result<Forward, GnnError> {
        if inputs.iter().any(|i| !i.is_pair()) {
            return Err(GnnError::PairRequired);
        }
        let firsts: Vec<&MolGraph> = inputs.iter().map(|i| &*i.parts[0]).collect();
        let seconds: Vec<&MolGraph> = inputs.iter().map(|i| &*i.parts[1]).collect();
        let e1 = self.embed_batch(tape, &GraphBatch::new(&firsts)?)?;
        let e2 = self.embed_batch(tape, &GraphBatch::new(&seconds)?)?;
        let cat = tape.concat_cols(&[e1, e2])?;
        let z = self.pair1.forward(tape, &self.store, cat)?;
        let z = tape.relu(z);
        let z = dropout(tape, z, mode);
        let embedding = self.pair2.forward(tape, &self.store, z)?;
        let logits = self.head.forward(tape, &self.store, embedding)?;
        Ok(Forward { embedding, logits })
    }

    pub fn embed_molecules(&self, graphs: &[&MolGraph]) -> Result<Tensor, GnnError> {
        let mut tape = Tape::new();
        let v = self.embed_batch(&mut tape, &GraphBatch::new(graphs)?)?;
        Ok(tape.value(v).clone())
    }
}
