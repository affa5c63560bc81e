//! Property-level checks with independent oracles. Each returns a one-line
//! detail on success and a diagnosis on failure.

use std::sync::Arc;
use std::time::Instant;

use odor_core::analyze::{f_pvalue, fit_all_pairs, AnalyzeError, PairEmbedder};
use odor_core::carve::{carve_search, coverage_ok, CarveConfig, CarveError, Carving};
use odor_core::dataset::{LabelVector, LabelVocab, MetaGraph};
use odor_core::eval::auroc;
use odor_core::featurize::{featurize, MolGraph};
use odor_core::gnn::{irlbl, set2set, weighted_bce, GraphInput, Model, ModelConfig, Set2Set};
use odor_core::smiles::parse_smiles;
use odor_core::synth::{synth_dataset, synth_molecules, SynthConfig, SULFUR_NOTE};
use odor_core::tensor::{read_checkpoint, write_checkpoint, ParamStore, Tape, Tensor};
use odor_core::train::{pair_samples, predict_samples, train_model, LabelMap, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Relabels atom `i` as `perm[i]`.
pub fn permute_graph(g: &MolGraph, perm: &[usize]) -> MolGraph {
    let (n, w) = (g.num_nodes(), g.atom_width());
    let mut feats = vec![0.0; n * w];
    let mut comps = vec![0u8; n];
    for i in 0..n {
        feats[perm[i] * w..(perm[i] + 1) * w].copy_from_slice(g.node_features.row_slice(i));
        comps[perm[i]] = g.component_ids[i];
    }
    MolGraph {
        node_features: Tensor::from_vec(vec![n, w], feats),
        edge_index: g.edge_index.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
        edge_features: g.edge_features.clone(),
        component_ids: comps,
    }
}

fn random_pairs(rng: &mut impl Rng, n: usize) -> Vec<GraphInput> {
    let pool = synth_molecules(2 * n, 0.4, rng).unwrap();
    let graphs: Vec<MolGraph> = pool.iter().map(|s| featurize(&parse_smiles(s).unwrap())).collect();
    (0..n)
        .map(|i| GraphInput::pair(graphs[2 * i].clone(), graphs[2 * i + 1].clone()).unwrap())
        .collect()
}

pub const INVARIANCE_TOL: f64 = 1e-9;
pub const SET2SET_TOL: f64 = 1e-12;

/// MPNN pair swap and atom permutation, set2set row permutation, and the
/// single tied GIN update in a checkpoint.
pub fn invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let model = Model::new(&ModelConfig::mpnn(16, 4), seed).unwrap();
        let pairs = random_pairs(&mut rng, 4);
        let refs: Vec<&GraphInput> = pairs.iter().collect();
        let base = model.predict(&refs).unwrap();
        let swapped: Vec<GraphInput> = pairs.iter().map(|p| p.swapped().unwrap()).collect();
        let d = max_abs_diff(&base, &model.predict(&swapped.iter().collect::<Vec<_>>()).unwrap());
        worst.0 = worst.0.max(d);
        let permuted: Vec<GraphInput> = pairs
            .iter()
            .map(|p| {
                let parts: Vec<MolGraph> = p
                    .parts
                    .iter()
                    .map(|g| {
                        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
                        perm.shuffle(&mut rng);
                        permute_graph(g, &perm)
                    })
                    .collect();
                GraphInput::pair(parts[0].clone(), parts[1].clone()).unwrap()
            })
            .collect();
        let d = max_abs_diff(&base, &model.predict(&permuted.iter().collect::<Vec<_>>()).unwrap());
        worst.1 = worst.1.max(d);
    }
    if worst.0 > INVARIANCE_TOL || worst.1 > INVARIANCE_TOL {
        return Err(format!("MPNN swap {:e}, permutation {:e}", worst.0, worst.1));
    }

    let mut s2s_worst = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (dim, n, segs) = (rng.gen_range(2..6), rng.gen_range(3..12), rng.gen_range(1..3));
        let mut store = ParamStore::new();
        let s2s = Set2Set::new(&mut store, "s2s", dim, 3, 2, &mut rng);
        let h = Tensor::from_vec(vec![n, dim], (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut seg: Vec<usize> = (0..n).map(|i| i % segs).collect();
        seg.shuffle(&mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let run = |rows: &Tensor, seg: Vec<usize>| {
            let mut tape = Tape::new();
            let hv = tape.constant(rows.clone());
            let out = set2set(&mut tape, &store, &s2s, hv, seg.into(), segs).unwrap();
            tape.value(out).clone()
        };
        let mut ph = vec![0.0; n * dim];
        let mut pseg = vec![0; n];
        for i in 0..n {
            ph[perm[i] * dim..(perm[i] + 1) * dim].copy_from_slice(h.row_slice(i));
            pseg[perm[i]] = seg[i];
        }
        let a = run(&h, seg);
        let b = run(&Tensor::from_vec(vec![n, dim], ph), pseg);
        s2s_worst = s2s_worst.max(max_abs_diff(&a, &b));
    }
    if s2s_worst > SET2SET_TOL {
        return Err(format!("set2set permutation {s2s_worst:e}"));
    }

    let mut cfg = ModelConfig::gin(8, 3);
    let mut sizes = vec![];
    for steps in [1, 4] {
        cfg.mp_steps = steps;
        let model = Model::new(&cfg, 0).unwrap();
        let mut bytes = vec![];
        write_checkpoint(model.params(), &mut bytes).unwrap();
        let store = read_checkpoint(bytes.as_slice()).unwrap();
        let mlp: Vec<&String> = store.names().iter().filter(|n| n.contains("update.mlp")).collect();
        let expected = [
            "gin.update.mlp.0.w",
            "gin.update.mlp.0.b",
            "gin.update.mlp.1.w",
            "gin.update.mlp.1.b",
        ];
        if mlp.len() != 4 || !expected.iter().all(|e| mlp.iter().any(|m| m == e)) {
            return Err(format!("GIN checkpoint update tensors: {mlp:?}"));
        }
        sizes.push(store.num_scalars());
    }
    if sizes[0] != sizes[1] {
        return Err(format!("GIN parameter count depends on steps: {sizes:?}"));
    }
    Ok(format!(
        "swap {:.1e}, atom perm {:.1e}, set2set {:.1e}, one tied GIN MLP",
        worst.0, worst.1, s2s_worst
    ))
}

/// Up to 12 nodes, 3 labels, each edge carrying one or two labels.
pub fn random_metagraph(rng: &mut impl Rng) -> MetaGraph {
    let n = rng.gen_range(4..=12);
    let mut mg = MetaGraph {
        vocab: LabelVocab::from_notes(["a", "b", "c"].map(String::from)),
        molecules: (0..n).map(|i| format!("C{}", "C".repeat(i))).collect(),
        edges: vec![],
    };
    let p = rng.gen_range(0.25..0.7);
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(p) {
                let mut labels = vec![rng.gen_range(0..3)];
                if rng.gen_bool(0.3) {
                    labels.push(rng.gen_range(0..3));
                }
                mg.add_edge(a, b, LabelVector::new(labels));
            }
        }
    }
    mg
}

/// Exhaustive optimum usable-edge count over every two-way assignment that
/// covers every edge label; `None` when no assignment does.
pub fn exhaustive_optimum(mg: &MetaGraph) -> Option<usize> {
    let n = mg.num_nodes();
    let labels = mg.edge_labels();
    let mut best = None;
    for mask in 0u32..(1 << n) {
        let side = |v: usize| (mask >> v) & 1;
        let mut usable = 0;
        let mut seen = vec![[false; 2]; mg.vocab.len()];
        for e in &mg.edges {
            if side(e.a) == side(e.b) {
                usable += 1;
                for &l in e.labels.indices() {
                    seen[l][side(e.a) as usize] = true;
                }
            }
        }
        if labels.iter().all(|&l| seen[l][0] && seen[l][1]) {
            best = best.max(Some(usable));
        }
    }
    best
}

fn carving_valid(mg: &MetaGraph, c: &Carving) -> Result<(), String> {
    for (comp, edges) in c.usable.iter().enumerate() {
        for &k in edges {
            let e = &mg.edges[k];
            if c.assignment[e.a] as usize != comp || c.assignment[e.b] as usize != comp {
                return Err(format!("edge {k} listed in component {comp} crosses components"));
            }
        }
    }
    if c.usable_count() + c.discarded.len() != mg.num_edges() {
        return Err("usable and discarded edges do not partition the edge set".into());
    }
    if !coverage_ok(c, &mg.edge_labels()) {
        return Err("returned carving misses a required label".into());
    }
    Ok(())
}

pub const CARVE_GRAPHS: usize = 50;
pub const CARVE_MATCH_RATE: f64 = 0.95;

pub fn carve_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut matches = 0;
    for g in 0..CARVE_GRAPHS {
        let mg = random_metagraph(&mut rng);
        let cfg = CarveConfig {
            max_iterations: (1 << mg.num_nodes()) * 10,
            seed: g as u64,
            ..Default::default()
        };
        match (carve_search(&mg, &cfg), exhaustive_optimum(&mg)) {
            (Ok(c), Some(opt)) => {
                carving_valid(&mg, &c).map_err(|e| format!("graph {g}: {e}"))?;
                if c.usable_count() > opt {
                    return Err(format!("graph {g}: search beat the exhaustive optimum"));
                }
                matches += usize::from(c.usable_count() == opt);
            }
            (Err(CarveError::NoCoverageFound { .. }), None) => matches += 1,
            (Err(CarveError::NoCoverageFound { .. }), Some(_)) => {}
            (Ok(_), None) => return Err(format!("graph {g}: carving found where none exists")),
            (Err(e), _) => return Err(format!("graph {g}: {e}")),
        }
    }
    let rate = matches as f64 / CARVE_GRAPHS as f64;
    if rate < CARVE_MATCH_RATE {
        return Err(format!("{matches}/{CARVE_GRAPHS} optimal"));
    }
    Ok(format!("{matches}/{CARVE_GRAPHS} optimal, all separated and covering"))
}

/// `(2·wins + ties) / (2·P·N)` over every positive-negative pair.
pub fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0u64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            num += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    num as f64 / (2 * pairs) as f64
}

pub const AUROC_INSTANCES: usize = 1000;

pub fn auroc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..AUROC_INSTANCES {
        let n = rng.gen_range(2..60);
        let levels = rng.gen_range(1..8);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if k % 2 == 0 {
                    rng.gen_range(0..levels) as f64 / 7.0
                } else {
                    rng.gen()
                }
            })
            .collect();
        let got = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = brute_force_auroc(&scores, &labels);
        if got != want {
            return Err(format!("instance {k}: rank {got} vs pairs {want}"));
        }
        let constant = auroc(&vec![0.3; n], &labels).map_err(|e| e.to_string())?;
        if constant != 0.5 {
            return Err(format!("instance {k}: constant predictor gave {constant}"));
        }
    }
    Ok(format!("{AUROC_INSTANCES} instances equal, constant predictor 0.5"))
}

/// Molecule embeddings are fixed random vectors keyed by atom count and
/// feature sum; the pair embedding mixes them with `(w1, w2)` plus noise.
pub struct StubEmbedder {
    pub dim: usize,
    pub w1: f64,
    pub w2: f64,
    /// Replace the pair embedding by an unrelated random vector.
    pub unrelated: bool,
}

impl StubEmbedder {
    fn vector(&self, g: &MolGraph, salt: u64) -> Vec<f64> {
        let key = g.node_features.data().iter().enumerate().fold(salt, |h, (i, &x)| {
            h.wrapping_mul(0x100000001b3) ^ ((i as u64) << 1 | (x != 0.0) as u64)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(key ^ g.num_nodes() as u64);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl PairEmbedder for StubEmbedder {
    fn embed_molecules(&self, graphs: &[&MolGraph]) -> Result<Tensor, AnalyzeError> {
        let data = graphs.iter().flat_map(|g| self.vector(g, 0)).collect();
        Ok(Tensor::from_vec(vec![graphs.len(), self.dim], data))
    }

    fn embed_pairs(&self, pairs: &[&GraphInput]) -> Result<Tensor, AnalyzeError> {
        let mut data = vec![];
        for p in pairs {
            if self.unrelated {
                data.extend(
                    self.vector(&p.parts[0], 7)
                        .iter()
                        .zip(self.vector(&p.parts[1], 9))
                        .map(|(a, b)| a * b),
                );
            } else {
                let (a, b) = (self.vector(&p.parts[0], 0), self.vector(&p.parts[1], 0));
                data.extend(a.iter().zip(&b).map(|(x, y)| self.w1 * x + self.w2 * y));
            }
        }
        Ok(Tensor::from_vec(vec![pairs.len(), self.dim], data))
    }
}

/// Upper tail of F(d1, d2) by Simpson quadrature of the density, normalized
/// by the same quadrature over the whole support (`x = t / (1 − t)`).
pub fn f_tail_quadrature(f: f64, d1: f64, d2: f64) -> f64 {
    let dens = |x: f64| x.powf(d1 / 2.0 - 1.0) * (1.0 + d1 * x / d2).powf(-(d1 + d2) / 2.0);
    let mapped = |t: f64| {
        if t >= 1.0 {
            0.0
        } else {
            dens(t / (1.0 - t)) / (1.0 - t).powi(2)
        }
    };
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = mapped(a) + mapped(b);
        for i in 1..n {
            s += mapped(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let split = f / (1.0 + f);
    let n = 200_000;
    let tail = simpson(split, 1.0, n);
    let head = simpson(0.0, split, n);
    tail / (head + tail)
}

pub const REGRESSION_TOL: f64 = 1e-9;
pub const PVALUE_TOL: f64 = 1e-6;

pub fn embedding_regression() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs = random_pairs(&mut rng, 40);
    let half = StubEmbedder {
        dim: 24,
        w1: 0.5,
        w2: 0.5,
        unrelated: false,
    };
    let a = fit_all_pairs(&half, &pairs).map_err(|e| e.to_string())?;
    if (a.mean_r2 - 1.0).abs() > REGRESSION_TOL {
        return Err(format!("mean r² {}", a.mean_r2));
    }
    if let Some(f) = a
        .fits
        .iter()
        .find(|f| (f.alpha1 - 0.5).abs() > REGRESSION_TOL || (f.alpha2 - 0.5).abs() > REGRESSION_TOL)
    {
        return Err(format!("coefficients ({}, {})", f.alpha1, f.alpha2));
    }
    let p = f_pvalue(4.0, 2.0, 40.0);
    let q = f_tail_quadrature(4.0, 2.0, 40.0);
    if (p - q).abs() > PVALUE_TOL {
        return Err(format!("f_pvalue {p} vs quadrature {q}"));
    }
    Ok(format!(
        "r² {:.12}, p(4; 2, 40) = {p:.9} (quadrature {q:.9})",
        a.mean_r2
    ))
}

pub const BCE_TOL: f64 = 1e-10;

/// Naive `Σ_i Σ_l w_l [−y ln σ(z) − (1 − y) ln(1 − σ(z))]`.
pub fn bce_double_loop(z: &Tensor, y: &Tensor, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..z.rows() {
        for l in 0..z.cols() {
            let s = 1.0 / (1.0 + (-z.get(i, l)).exp());
            let t = y.get(i, l);
            total += w[l] * (-t * s.ln() - (1.0 - t) * (1.0 - s).ln());
        }
    }
    total
}

pub fn label_weights() -> Check {
    let mut sets = vec![];
    for i in 0..100 {
        let mut l = vec![0];
        if i < 50 {
            l.push(1);
        }
        if i < 25 {
            l.push(2);
        }
        sets.push(LabelVector::new(l));
    }
    let stats = irlbl(&sets, 3).map_err(|e| e.to_string())?;
    let want = [2f64.ln(), 3f64.ln(), 5f64.ln()];
    if stats.counts != [100, 50, 25] || stats.weights != want {
        return Err(format!("counts {:?} weights {:?}", stats.counts, stats.weights));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, l) = (rng.gen_range(1..12), rng.gen_range(1..6));
        let z = Tensor::from_vec(vec![n, l], (0..n * l).map(|_| rng.gen_range(-6.0..6.0)).collect());
        let y = Tensor::from_vec(vec![n, l], (0..n * l).map(|_| rng.gen_range(0..2) as f64).collect());
        let w: Vec<f64> = (0..l).map(|_| rng.gen_range(0.1..3.0)).collect();
        let mut tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let loss = weighted_bce(&mut tape, zv, Arc::new(y.clone()), w.clone().into()).map_err(|e| e.to_string())?;
        let got = tape.value(loss).item();
        let want = bce_double_loop(&z, &y, &w);
        worst = worst.max((got - want).abs());
    }
    if worst > BCE_TOL {
        return Err(format!("weighted BCE off by {worst:e}"));
    }
    Ok(format!("weights (ln2, ln3, ln5) exact, BCE max diff {worst:.1e}"))
}

pub const SULFUR_WIDTH: usize = 64;
pub const SULFUR_EPOCHS: usize = 100;
pub const SULFUR_MIN_AUROC: f64 = 0.95;

/// Test AUROC of the sulfur note for `base` trained on the 500-pair synthetic
/// set (random 70/10/20 edge split).
pub fn sulfur_auroc(base: ModelConfig) -> Result<(f64, f64), String> {
    let start = Instant::now();
    let ds = synth_dataset(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let (mg, _) = ds.ingest().map_err(|e| e.to_string())?;
    let graphs: Vec<MolGraph> = mg
        .molecules
        .iter()
        .map(|s| featurize(&parse_smiles(s).unwrap()))
        .collect();
    let map = LabelMap::new(&mg.edge_labels());
    let mut order: Vec<usize> = (0..mg.num_edges()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let (n_train, n_valid) = (order.len() * 7 / 10, order.len() / 10);
    let split = |r: std::ops::Range<usize>| pair_samples(&mg, &graphs, &order[r], &map).map_err(|e| e.to_string());
    let train = split(0..n_train)?;
    let valid = split(n_train..n_train + n_valid)?;
    let test = split(n_train + n_valid..order.len())?;
    let mut cfg = base;
    cfg.label_count = map.len();
    let tcfg = TrainConfig {
        epochs: SULFUR_EPOCHS,
        batch_size: 32,
        lr0: 1e-3,
        patience: None,
        ..Default::default()
    };
    let out = train_model(&cfg, &tcfg, &train, &valid).map_err(|e| e.to_string())?;
    let sulfur = mg.vocab.get(SULFUR_NOTE).ok_or("no sulfur note")?;
    let col = map.labels.binary_search(&sulfur).map_err(|_| "sulfur note unmapped")?;
    let probs = predict_samples(&out.model, &test, 64).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = (0..test.len()).map(|i| probs.get(i, col)).collect();
    let labels: Vec<bool> = test.iter().map(|s| s.labels.contains(col)).collect();
    let a = auroc(&scores, &labels).map_err(|e| e.to_string())?;
    Ok((a, start.elapsed().as_secs_f64()))
}

pub fn sulfur_task() -> Check {
    let gin = sulfur_auroc(ModelConfig::gin(SULFUR_WIDTH, 1))?;
    let mpnn = sulfur_auroc(ModelConfig::mpnn(SULFUR_WIDTH, 1))?;
    let detail = format!("GIN {:.4} ({:.0}s), MPNN {:.4} ({:.0}s)", gin.0, gin.1, mpnn.0, mpnn.1);
    if gin.0 >= SULFUR_MIN_AUROC && mpnn.0 >= SULFUR_MIN_AUROC {
        Ok(detail)
    } else {
        Err(detail)
    }
}
