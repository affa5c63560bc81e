use std::sync::Arc;

use rand::Rng;

use super::{Ffn, Forward, GnnError, GraphBatch, GraphInput, Linear, Mode, ModelConfig};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// One LSTM layer: `gates = x W_x + b + h W_h`, split as `[i, f, g, o]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayer {
    pub wx: Linear,
    pub wh: ParamId,
}

/// Iterative attention readout; output width is twice the node width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Set2Set {
    pub layers: Vec<LstmLayer>,
    pub steps: usize,
    pub dim: usize,
}

impl Set2Set {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        steps: usize,
        n_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let fan_in = if l == 0 { 2 * dim } else { dim };
                LstmLayer {
                    wx: Linear::new(store, &format!("{name}.lstm.{l}.x"), fan_in, 4 * dim, rng),
                    wh: store.add_glorot(format!("{name}.lstm.{l}.h"), dim, 4 * dim, rng),
                }
            })
            .collect();
        Set2Set { layers, steps, dim }
    }
}

fn lstm_cell(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &LstmLayer,
    x: Var,
    h: Var,
    c: Var,
    d: usize,
) -> Result<(Var, Var), GnnError> {
    let gx = layer.wx.forward(tape, store, x)?;
    let wh = tape.param(store, layer.wh);
    let gh = tape.matmul(h, wh)?;
    let gates = tape.add(gx, gh)?;
    let i = tape.slice_cols(gates, 0, d)?;
    let f = tape.slice_cols(gates, d, 2 * d)?;
    let g = tape.slice_cols(gates, 2 * d, 3 * d)?;
    let o = tape.slice_cols(gates, 3 * d, 4 * d)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Set2Set readout of node rows `h` grouped by `segments`:
/// `q = LSTM(q*)`, `a = softmax_segment(h · q)`, `r = Σ a h`, `q* = [q, r]`,
/// repeated `steps` times starting from `q* = 0`.
pub fn set2set(
    tape: &mut Tape,
    store: &ParamStore,
    s2s: &Set2Set,
    h: Var,
    segments: Arc<[usize]>,
    n_segments: usize,
) -> Result<Var, GnnError> {
    if tape.value(h).rows() == 0 || n_segments == 0 {
        return Err(GnnError::EmptyGraph);
    }
    let mut counts = vec![0usize; n_segments];
    for &s in segments.iter() {
        if s < n_segments {
            counts[s] += 1;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(GnnError::EmptyComponent(empty));
    }
    let d = s2s.dim;
    let zeros = |tape: &mut Tape, w| tape.constant(Tensor::zeros(vec![n_segments, w]));
    let mut q_star = zeros(tape, 2 * d);
    let mut states: Vec<(Var, Var)> = (0..s2s.layers.len())
        .map(|_| (zeros(tape, d), zeros(tape, d)))
        .collect();
    for _ in 0..s2s.steps {
        let mut x = q_star;
        for (layer, state) in s2s.layers.iter().zip(states.iter_mut()) {
            *state = lstm_cell(tape, store, layer, x, state.0, state.1, d)?;
            x = state.0;
        }
        let q = x;
        let q_nodes = tape.gather_rows(q, segments.clone())?;
        let prod = tape.mul(h, q_nodes)?;
        let scores = tape.sum_cols(prod);
        let attn = tape.segment_softmax(scores, segments.clone(), n_segments)?;
        let weighted = tape.mul_col(h, attn)?;
        let read = tape.scatter_add_rows(weighted, segments.clone(), n_segments)?;
        q_star = tape.concat_cols(&[q, read])?;
    }
    Ok(q_star)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpnnModel {
    pub(super) cfg: ModelConfig,
    pub(super) store: ParamStore,
    lin_in: Linear,
    edge_net: Ffn,
    gru_x: Linear,
    gru_h: Linear,
    bond_embed: Linear,
    fold: Linear,
    s2s: Set2Set,
    head: Ffn,
}

impl MpnnModel {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.hidden_dim;
        let mut store = ParamStore::new();
        let s = &mut store;
        let lin_in = Linear::new(s, "mpnn.input", cfg.atom_width, d, rng);
        let edge_net = Ffn::new(s, "mpnn.edge_net", &[cfg.bond_width, cfg.edge_hidden, d * d], rng);
        let gru_x = Linear::new(s, "mpnn.gru.x", d, 3 * d, rng);
        let gru_h = Linear::new(s, "mpnn.gru.h", d, 3 * d, rng);
        let bond_embed = Linear::new(s, "mpnn.bond_embed", cfg.bond_width, d, rng);
        let fold = Linear::new(s, "mpnn.fold", 2 * d, d, rng);
        let s2s = Set2Set::new(s, "mpnn.set2set", d, cfg.set2set_steps, cfg.set2set_layers, rng);
        let mut widths = vec![2 * d];
        widths.extend(&cfg.ffn_hidden);
        widths.push(cfg.label_count);
        let head = Ffn::new(s, "mpnn.head", &widths, rng);
        MpnnModel {
            cfg,
            store,
            lin_in,
            edge_net,
            gru_x,
            gru_h,
            bond_embed,
            fold,
            s2s,
            head,
        }
    }

    pub fn set2set_params(&self) -> &Set2Set {
        &self.s2s
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn gru(&self, tape: &mut Tape, m: Var, h: Var) -> Result<Var, GnnError> {
        let d = self.cfg.hidden_dim;
        let gx = self.gru_x.forward(tape, &self.store, m)?;
        let gh = self.gru_h.forward(tape, &self.store, h)?;
        let (xr, xz, xn) = (
            tape.slice_cols(gx, 0, d)?,
            tape.slice_cols(gx, d, 2 * d)?,
            tape.slice_cols(gx, 2 * d, 3 * d)?,
        );
        let (hr, hz, hn) = (
            tape.slice_cols(gh, 0, d)?,
            tape.slice_cols(gh, d, 2 * d)?,
            tape.slice_cols(gh, 2 * d, 3 * d)?,
        );
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, hn)?;
        let n = tape.add(xn, rh)?;
        let n = tape.tanh(n);
        // h' = (1 - z) n + z h = n + z (h - n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        Ok(tape.add(n, zd)?)
    }

    /// Set2Set graph embeddings `[graphs, 2D]` for a batch.
    pub fn embed_batch(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var, GnnError> {
        let n = batch.num_nodes();
        let x = tape.constant(batch.node_features.clone());
        let h0 = self.lin_in.forward(tape, &self.store, x)?;
        let mut h = tape.relu(h0);
        if !batch.src.is_empty() {
            let table = tape.constant(batch.edge_table.clone());
            let mats = self.edge_net.forward(tape, &self.store, table, &mut Mode::Eval)?;
            for _ in 0..self.cfg.mp_steps {
                let hs = tape.gather_rows(h, batch.src.clone())?;
                let msgs = tape.edge_matvec(mats, batch.edge_kinds.clone(), hs)?;
                let m = tape.scatter_add_rows(msgs, batch.dst.clone(), n)?;
                h = self.gru(tape, m, h)?;
            }
        } else {
            let zero = tape.constant(Tensor::zeros(vec![n, self.cfg.hidden_dim]));
            for _ in 0..self.cfg.mp_steps {
                h = self.gru(tape, zero, h)?;
            }
        }
        // radius-0 fold: [h_v, Σ_incident bond embeddings] → D
        let ef = tape.constant(batch.edge_features.clone());
        let eb = self.bond_embed.forward(tape, &self.store, ef)?;
        let incident = tape.scatter_add_rows(eb, batch.dst.clone(), n)?;
        let cat = tape.concat_cols(&[h, incident])?;
        let folded = self.fold.forward(tape, &self.store, cat)?;
        set2set(
            tape,
            &self.store,
            &self.s2s,
            folded,
            batch.node_graph.clone(),
            batch.n_graphs,
        )
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &[&GraphInput], mode: &mut Mode) -> Result<Forward, GnnError> {
        let graphs: Vec<_> = inputs.iter().map(|i| &*i.union).collect();
        let embedding = self.embed_batch(tape, &GraphBatch::new(&graphs)?)?;
        let logits = self.head.forward(tape, &self.store, embedding, mode)?;
        Ok(Forward { embedding, logits })
    }

    pub fn embed(&self, inputs: &[&GraphInput]) -> Result<Tensor, GnnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, inputs, &mut Mode::Eval)?;
        Ok(tape.value(out.embedding).clone())
    }
}
