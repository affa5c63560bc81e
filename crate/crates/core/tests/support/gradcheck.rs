//! Central finite-difference checks of every tape op and of both models.

use std::sync::Arc;

use odor_core::featurize::featurize;
pub use odor_core::gnn::Arch;
use odor_core::gnn::{weighted_bce, GraphInput, Mode, Model, ModelConfig};
use odor_core::smiles::parse_smiles;
use odor_core::synth::synth_molecules;
use odor_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 100;
pub const STEP: f64 = 1e-6;
pub const MAX_REL: f64 = 1e-4;
/// Denominator floor, so near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

/// Values bounded away from the ReLU kink.
fn off_kink(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    rand_tensor(rng, r, c).map(|x| if x.abs() < 0.05 { x + 0.1f64.copysign(x) } else { x })
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// `Σ out ⊙ R` for a fixed random `R` of the output's shape.
fn scalar_loss(tape: &mut Tape, inputs: &[Tensor], build: &Build, probe: &Tensor) -> (Var, Vec<Var>) {
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(tape, &vars);
    let r = tape.constant(probe.clone());
    let prod = tape.mul(out, r).unwrap();
    let rows = tape.sum_rows(prod);
    (tape.sum_cols(rows), vars)
}

fn check_op(name: &str, seed: u64, inputs: Vec<Tensor>, build: &Build) -> Result<(), String> {
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).shape().to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let probe = rand_tensor(&mut rng, shape[0], shape[1]);
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let (loss, _) = scalar_loss(&mut tape, xs, build, &probe);
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let (loss, vars) = scalar_loss(&mut tape, &inputs, build, &probe);
    let grads = tape.backward(loss).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let e = rel_err(g.data()[j], numeric);
            if !(e < MAX_REL) {
                return Err(format!(
                    "{name} seed {seed} input {k}[{j}]: analytic {} numeric {numeric} (rel {e:e})",
                    g.data()[j]
                ));
            }
        }
    }
    Ok(())
}

fn idx(v: Vec<usize>) -> Arc<[usize]> {
    v.into()
}

pub fn elementwise_and_linear_ops() -> Result<(), String> {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let a = rand_tensor(&mut rng, m, k);
        let b = rand_tensor(&mut rng, k, n);
        let c = rand_tensor(&mut rng, m, k);
        check_op("matmul", seed, vec![a.clone(), b], &|t, v| {
            t.matmul(v[0], v[1]).unwrap()
        })?;
        check_op("add", seed, vec![a.clone(), c.clone()], &|t, v| {
            t.add(v[0], v[1]).unwrap()
        })?;
        check_op("sub", seed, vec![a.clone(), c.clone()], &|t, v| {
            t.sub(v[0], v[1]).unwrap()
        })?;
        check_op("mul", seed, vec![a.clone(), c.clone()], &|t, v| {
            t.mul(v[0], v[1]).unwrap()
        })?;
        let s = rng.gen_range(-2.0..2.0);
        check_op("scale", seed, vec![a.clone()], &|t, v| t.scale(v[0], s))?;
        check_op("add_scalar", seed, vec![a.clone()], &|t, v| t.add_scalar(v[0], s))?;
        check_op("relu", seed, vec![off_kink(&mut rng, m, k)], &|t, v| t.relu(v[0]))?;
        check_op("sigmoid", seed, vec![a.clone()], &|t, v| t.sigmoid(v[0]))?;
        check_op("tanh", seed, vec![a.clone()], &|t, v| t.tanh(v[0]))?;
        check_op("softmax_rows", seed, vec![a.clone()], &|t, v| t.softmax_rows(v[0]))?;
        check_op("mean_rows", seed, vec![a.clone()], &|t, v| t.mean_rows(v[0]))?;
        check_op("sum_rows", seed, vec![a.clone()], &|t, v| t.sum_rows(v[0]))?;
        check_op("sum_cols", seed, vec![a.clone()], &|t, v| t.sum_cols(v[0]))?;
    }
    Ok(())
}

pub fn shape_ops() -> Result<(), String> {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let a = rand_tensor(&mut rng, m, n);
        let row = rand_tensor(&mut rng, 1, n);
        let col = rand_tensor(&mut rng, m, 1);
        let one = rand_tensor(&mut rng, 1, 1);
        check_op("broadcast_row", seed, vec![row.clone()], &|t, v| {
            t.broadcast(v[0], m, n).unwrap()
        })?;
        check_op("broadcast_col", seed, vec![col.clone()], &|t, v| {
            t.broadcast(v[0], m, n).unwrap()
        })?;
        check_op("broadcast_scalar", seed, vec![one], &|t, v| {
            t.broadcast(v[0], m, n).unwrap()
        })?;
        check_op("add_row", seed, vec![a.clone(), row], &|t, v| {
            t.add_row(v[0], v[1]).unwrap()
        })?;
        check_op("mul_col", seed, vec![a.clone(), col], &|t, v| {
            t.mul_col(v[0], v[1]).unwrap()
        })?;
        let extra = rng.gen_range(1..4);
        let b = rand_tensor(&mut rng, m, extra);
        check_op("concat_cols", seed, vec![a.clone(), b], &|t, v| {
            t.concat_cols(&[v[0], v[1]]).unwrap()
        })?;
        let start = rng.gen_range(0..n);
        let end = rng.gen_range(start + 1..=n);
        check_op("slice_cols", seed, vec![a.clone()], &|t, v| {
            t.slice_cols(v[0], start, end).unwrap()
        })?;
    }
    Ok(())
}

pub fn index_ops() -> Result<(), String> {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n, k) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..7));
        let a = rand_tensor(&mut rng, m, n);
        let gather = idx((0..k).map(|_| rng.gen_range(0..m)).collect());
        check_op("gather_rows", seed, vec![a.clone()], &|t, v| {
            t.gather_rows(v[0], gather.clone()).unwrap()
        })?;
        let targets = rng.gen_range(1..4);
        let scatter = idx((0..m).map(|_| rng.gen_range(0..targets)).collect());
        check_op("scatter_add_rows", seed, vec![a.clone()], &|t, v| {
            t.scatter_add_rows(v[0], scatter.clone(), targets).unwrap()
        })?;
        let segs = rng.gen_range(1..4);
        let seg = idx((0..m).map(|_| rng.gen_range(0..segs)).collect());
        let column = rand_tensor(&mut rng, m, 1);
        check_op("segment_softmax", seed, vec![column], &|t, v| {
            t.segment_softmax(v[0], seg.clone(), segs).unwrap()
        })?;
        let (d, kinds_n, edges) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..6));
        let mats = rand_tensor(&mut rng, kinds_n, d * d);
        let x = rand_tensor(&mut rng, edges, d);
        let kinds = idx((0..edges).map(|_| rng.gen_range(0..kinds_n)).collect());
        check_op("edge_matvec", seed, vec![mats, x], &|t, v| {
            t.edge_matvec(v[0], kinds.clone(), v[1]).unwrap()
        })?;
        let y = Arc::new(Tensor::from_vec(
            vec![m, n],
            (0..m * n).map(|_| rng.gen_range(0..2) as f64).collect(),
        ));
        let w: Arc<[f64]> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect::<Vec<_>>().into();
        let logits = rand_tensor(&mut rng, m, n).map(|z| 3.0 * z);
        check_op("bce_with_logits", seed, vec![logits], &|t, v| {
            t.bce_with_logits(v[0], y.clone(), w.clone()).unwrap()
        })?;
    }
    Ok(())
}

fn small_config(arch: Arch, labels: usize) -> ModelConfig {
    let mut cfg = match arch {
        Arch::Gin => ModelConfig::gin(4, labels),
        Arch::Mpnn => ModelConfig::mpnn(4, labels),
    };
    cfg.mp_steps = 2;
    if arch == Arch::Mpnn {
        cfg.set2set_steps = 2;
        cfg.set2set_layers = 2;
        cfg.ffn_hidden = vec![5];
        cfg.edge_hidden = 6;
    }
    cfg
}

fn check_model(arch: Arch, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = synth_molecules(6, 0.5, &mut rng).unwrap();
    let graphs: Vec<_> = pool.iter().map(|s| featurize(&parse_smiles(s).unwrap())).collect();
    let inputs: Vec<GraphInput> = (0..3)
        .map(|i| GraphInput::pair(graphs[2 * i].clone(), graphs[2 * i + 1].clone()).unwrap())
        .collect();
    let refs: Vec<&GraphInput> = inputs.iter().collect();
    let labels = 3;
    let y = Arc::new(Tensor::from_vec(
        vec![3, labels],
        (0..3 * labels).map(|_| rng.gen_range(0..2) as f64).collect(),
    ));
    let w: Arc<[f64]> = vec![1.0, 0.7, 1.9].into();
    let mut model = Model::new(&small_config(arch, labels), seed).unwrap();
    // zero-initialized biases put ReLU inputs exactly on the kink; check at a generic point
    for t in model.params_mut().values_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    }
    let loss_of = |m: &Model| {
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &refs, &mut Mode::Eval).unwrap();
        let l = weighted_bce(&mut tape, out.logits, y.clone(), w.clone()).unwrap();
        tape.value(l).item()
    };
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &refs, &mut Mode::Eval).unwrap();
    let loss = weighted_bce(&mut tape, out.logits, y.clone(), w.clone()).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    model.params_mut().zero_grad();
    model.params_mut().accumulate(&tape, &mut grads);
    let analytic = model.params().grads().to_vec();
    let names = model.params().names().to_vec();
    for p in 0..analytic.len() {
        let len = analytic[p].len();
        for j in 0..len {
            let orig = model.params().values()[p].data()[j];
            model.params_mut().values_mut()[p].data_mut()[j] = orig + STEP;
            let up = loss_of(&model);
            model.params_mut().values_mut()[p].data_mut()[j] = orig - STEP;
            let down = loss_of(&model);
            model.params_mut().values_mut()[p].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(analytic[p].data()[j], numeric);
            if !(e < MAX_REL) {
                return Err(format!(
                    "{arch:?} seed {seed} {}[{j}]: analytic {} numeric {numeric} (rel {e:e})",
                    names[p],
                    analytic[p].data()[j]
                ));
            }
        }
    }
    Ok(())
}

/// Every parameter coordinate of `arch` over [`INSTANCES`] seeded inputs.
pub fn model_gradients(arch: Arch) -> Result<(), String> {
    (0..INSTANCES).try_for_each(|seed| check_model(arch, seed))
}
