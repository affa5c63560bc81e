//! Mini-batch training with early stopping, cross-validated random search
//! and seed ensembles.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::carve::{Carving, TEST, TRAIN, VALID};
use crate::dataset::{LabelVector, MetaGraph};
use crate::eval::{evaluate, EvalError};
use crate::featurize::MolGraph;
use crate::gnn::{irlbl, target_matrix, weighted_bce, GnnError, GraphInput, Mode, Model, ModelConfig};
use crate::tensor::{adam_step, AdamConfig, AdamState, LrSchedule, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Epochs without validation improvement tolerated; `None` disables
    /// early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            batch_size: 64,
            lr0: 1e-3,
            schedule: LrSchedule::Constant,
            weight_decay: 0.0,
            dropout: 0.0,
            patience: Some(0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("epochs and batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(TrainError::InvalidConfig("lr0 must be positive".into()));
        }
        Ok(())
    }
}

/// A model input with its label set in model column space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: GraphInput,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    /// Mean per-sample training loss.
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<Option<f64>>,
    pub valid_auroc: Vec<Option<f64>>,
    /// Learning rate at the start of each epoch.
    pub lr: Vec<f64>,
    /// Number of epochs run.
    pub stop_epoch: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl RunHistory {
    /// `epoch,train_loss,valid_loss,valid_auroc,lr`
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "valid_loss", "valid_auroc", "lr"])
            .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in 0..self.train_loss.len() {
            w.write_record([
                (e + 1).to_string(),
                self.train_loss[e].to_string(),
                opt(self.valid_loss[e]),
                opt(self.valid_auroc[e]),
                self.lr[e].to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: RunHistory,
    pub label_weights: Vec<f64>,
    pub wall_time: Duration,
}

fn refs(samples: &[Sample]) -> Vec<&GraphInput> {
    samples.iter().map(|s| &s.input).collect()
}

fn targets_of(samples: &[&Sample], l: usize) -> Arc<Tensor> {
    let sets: Vec<&LabelVector> = samples.iter().map(|s| &s.labels).collect();
    Arc::new(target_matrix(&sets, l))
}

/// Eval-mode summed loss over `samples` divided by their count, plus the
/// probability matrix.
pub fn evaluate_loss(
    model: &Model,
    samples: &[Sample],
    weights: &Arc<[f64]>,
    batch_size: usize,
) -> Result<(f64, Tensor), TrainError> {
    let l = model.config().label_count;
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(samples.len() * l);
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &refs(chunk), &mut Mode::Eval)?;
        let chunk_refs: Vec<&Sample> = chunk.iter().collect();
        let loss = weighted_bce(&mut tape, out.logits, targets_of(&chunk_refs, l), weights.clone())?;
        total += tape.value(loss).item();
        probs.extend(tape.value(out.logits).data().iter().map(|&z| crate::tensor::sigmoid(z)));
    }
    Ok((
        total / samples.len().max(1) as f64,
        Tensor::from_vec(vec![samples.len(), l], probs),
    ))
}

/// Macro AUROC of `model` on `samples` (`None` when no label is defined).
pub fn macro_auroc(model: &Model, samples: &[Sample]) -> Result<Option<f64>, TrainError> {
    let probs = predict_samples(model, samples, 64)?;
    let l = model.config().label_count;
    let sample_refs: Vec<&Sample> = samples.iter().collect();
    let names: Vec<String> = (0..l).map(|i| i.to_string()).collect();
    Ok(evaluate(&probs, &targets_of(&sample_refs, l), &names)?.macro_auroc)
}

pub fn predict_samples(model: &Model, samples: &[Sample], batch_size: usize) -> Result<Tensor, TrainError> {
    let l = model.config().label_count;
    let mut data = Vec::with_capacity(samples.len() * l);
    for chunk in samples.chunks(batch_size.max(1)) {
        data.extend_from_slice(model.predict(&refs(chunk))?.data());
    }
    Ok(Tensor::from_vec(vec![samples.len(), l], data))
}

/// Label weights used by the loss: `ln(1 + IRLbl)` over `train` when the
/// config asks for weighting, otherwise ones.
pub fn loss_weights(cfg: &ModelConfig, train: &[Sample]) -> Result<Vec<f64>, TrainError> {
    if cfg.loss.weighted {
        let sets: Vec<LabelVector> = train.iter().map(|s| s.labels.clone()).collect();
        Ok(irlbl(&sets, cfg.label_count)?.weights)
    } else {
        Ok(vec![1.0; cfg.label_count])
    }
}

/// Trains a fresh model seeded with `cfg.seed`. Early stopping tracks the
/// validation loss; the parameters of the best validation epoch are
/// returned (the last epoch's when `valid` is empty).
pub fn train_model(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &[Sample],
    valid: &[Sample],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training set"));
    }
    if valid.is_empty() && cfg.patience.is_some() {
        return Err(TrainError::EmptyDataset("validation set (needed for early stopping)"));
    }
    let start = Instant::now();
    let mut model = Model::new(model_cfg, cfg.seed)?;
    let weights_vec = loss_weights(model_cfg, train)?;
    let weights: Arc<[f64]> = weights_vec.clone().into();
    let l = model_cfg.label_count;
    let adam = AdamConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut state = AdamState::new(model.params().values());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut history = RunHistory {
        train_loss: vec![],
        valid_loss: vec![],
        valid_auroc: vec![],
        lr: vec![],
        stop_epoch: 0,
        best_epoch: 0,
    };
    let mut best: Option<(f64, crate::tensor::ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        history.lr.push(cfg.schedule.lr(cfg.lr0, state.step, epoch, cfg.epochs));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let inputs: Vec<&GraphInput> = batch.iter().map(|s| &s.input).collect();
            let mut tape = Tape::new();
            let mut mode = Mode::Train {
                dropout: cfg.dropout,
                rng: &mut rng,
            };
            let out = model.forward(&mut tape, &inputs, &mut mode)?;
            let loss = weighted_bce(&mut tape, out.logits, targets_of(&batch, l), weights.clone())?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Divergence { epoch: epoch + 1 });
            }
            total += value;
            let mut grads = tape.backward(loss).map_err(GnnError::from)?;
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&tape, &mut grads);
            let g = store.grads().to_vec();
            let lr = cfg.schedule.lr(cfg.lr0, state.step, epoch, cfg.epochs);
            adam_step(store.values_mut(), &g, &mut state, lr, &adam).map_err(GnnError::from)?;
        }
        history.train_loss.push(total / train.len() as f64);
        history.stop_epoch = epoch + 1;

        if valid.is_empty() {
            history.valid_loss.push(None);
            history.valid_auroc.push(None);
            history.best_epoch = epoch + 1;
            continue;
        }
        let (vloss, _) = evaluate_loss(&model, valid, &weights, cfg.batch_size)?;
        if !vloss.is_finite() {
            return Err(TrainError::Divergence { epoch: epoch + 1 });
        }
        history.valid_loss.push(Some(vloss));
        history.valid_auroc.push(macro_auroc(&model, valid)?);
        if best.as_ref().is_none_or(|(b, _)| vloss < *b) {
            best = Some((vloss, model.params().clone()));
            history.best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best > p) {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(TrainOutcome {
        model,
        history,
        label_weights: weights_vec,
        wall_time: start.elapsed(),
    })
}

/// Maps vocabulary labels to model output columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(labels: &[usize]) -> Self {
        let mut labels = labels.to_vec();
        labels.sort_unstable();
        labels.dedup();
        LabelMap { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn project(&self, set: &LabelVector) -> LabelVector {
        LabelVector::new(
            set.indices()
                .iter()
                .filter_map(|l| self.labels.binary_search(l).ok())
                .collect(),
        )
    }
}

/// Samples for the given meta-graph edges. `graphs[i]` is molecule `i`'s
/// featurized graph.
pub fn pair_samples(
    mg: &MetaGraph,
    graphs: &[MolGraph],
    edges: &[usize],
    labels: &LabelMap,
) -> Result<Vec<Sample>, TrainError> {
    edges
        .iter()
        .map(|&k| {
            let e = &mg.edges[k];
            Ok(Sample {
                input: GraphInput::pair(graphs[e.a].clone(), graphs[e.b].clone())?,
                labels: labels.project(&e.labels),
            })
        })
        .collect()
}

/// Train/validation/test samples of a carving. Two-way carvings take the
/// validation set from a seeded `valid_fraction` of training edges.
pub fn carving_samples(
    mg: &MetaGraph,
    graphs: &[MolGraph],
    carving: &Carving,
    labels: &LabelMap,
    valid_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), TrainError> {
    let test = pair_samples(mg, graphs, carving.edges_in(TEST), labels)?;
    let (train_edges, valid_edges): (Vec<usize>, Vec<usize>) = if carving.n_components > 2 {
        (carving.edges_in(TRAIN).to_vec(), carving.edges_in(VALID).to_vec())
    } else {
        let all = carving.edges_in(TRAIN);
        let k = ((all.len() as f64) * valid_fraction).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut held: Vec<usize> = (0..all.len()).choose_multiple(&mut rng, k.min(all.len()));
        held.sort_unstable();
        let mut train = vec![];
        let mut valid = vec![];
        for (i, &e) in all.iter().enumerate() {
            if held.binary_search(&i).is_ok() {
                valid.push(e);
            } else {
                train.push(e);
            }
        }
        (train, valid)
    };
    Ok((
        pair_samples(mg, graphs, &train_edges, labels)?,
        pair_samples(mg, graphs, &valid_edges, labels)?,
        test,
    ))
}

/// Hyperparameter enumerations for random search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dropout: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub lr0: Vec<f64>,
    pub decay_rate: Vec<f64>,
    pub decay_steps: Vec<f64>,
    pub set2set_steps: Vec<usize>,
    pub set2set_layers: Vec<usize>,
    pub ffn_hidden: Vec<Vec<usize>>,
}

impl SearchSpace {
    /// Blended-pair task space.
    pub fn pair_task() -> Self {
        SearchSpace {
            dropout: vec![0.12, 0.25, 0.5],
            weight_decay: vec![1e-3, 1e-4, 1e-5],
            lr0: vec![0.001, 0.0001, 0.005, 0.0005],
            decay_rate: vec![0.25, 0.5, 0.75],
            decay_steps: [5.0, 10.0, 15.0, 20.0].iter().map(|k| 42.0 * k).collect(),
            set2set_steps: vec![2, 3, 4],
            set2set_layers: vec![2, 3, 4],
            ffn_hidden: vec![vec![200], vec![60, 60], vec![300], vec![500, 500], vec![300, 300]],
        }
    }

    /// Single-molecule task space.
    pub fn single_task() -> Self {
        SearchSpace {
            decay_steps: [5.0, 10.0, 15.0, 20.0].iter().map(|k| 4.0 * k).collect(),
            ffn_hidden: vec![vec![200], vec![60, 60], vec![300], vec![500, 500], vec![392, 392]],
            ..Self::pair_task()
        }
    }

    pub fn size(&self) -> usize {
        self.dropout.len()
            * self.weight_decay.len()
            * self.lr0.len()
            * self.decay_rate.len()
            * self.decay_steps.len()
            * self.set2set_steps.len()
            * self.set2set_layers.len()
            * self.ffn_hidden.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TrialParams {
        fn pick<T: Clone>(v: &[T], rng: &mut impl Rng) -> T {
            v.choose(rng).expect("non-empty search dimension").clone()
        }
        TrialParams {
            dropout: pick(&self.dropout, rng),
            weight_decay: pick(&self.weight_decay, rng),
            lr0: pick(&self.lr0, rng),
            decay_rate: pick(&self.decay_rate, rng),
            decay_steps: pick(&self.decay_steps, rng),
            set2set_steps: pick(&self.set2set_steps, rng),
            set2set_layers: pick(&self.set2set_layers, rng),
            ffn_hidden: pick(&self.ffn_hidden, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub dropout: f64,
    pub weight_decay: f64,
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    pub set2set_steps: usize,
    pub set2set_layers: usize,
    pub ffn_hidden: Vec<usize>,
}

impl TrialParams {
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                set2set_steps: self.set2set_steps,
                set2set_layers: self.set2set_layers,
                ffn_hidden: self.ffn_hidden.clone(),
                ..model.clone()
            },
            TrainConfig {
                dropout: self.dropout,
                weight_decay: self.weight_decay,
                lr0: self.lr0,
                schedule: LrSchedule::ExponentialSteps {
                    rate: self.decay_rate,
                    decay_steps: self.decay_steps,
                },
                ..train.clone()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: TrialParams,
    pub fold_scores: Vec<Option<f64>>,
    /// Mean over folds with a defined score.
    pub mean_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub best_index: usize,
    pub trials: Vec<Trial>,
}

impl SearchReport {
    pub fn best(&self) -> &Trial {
        &self.trials[self.best_index]
    }
}

/// Samples `trials` configurations (trial `t` draws from its own stream of
/// `seed`) and scores each with `score(params, fold)` over `n_folds`
/// folds. The best trial has the highest mean score, ties to the lower
/// index; trials without any defined score rank last.
pub fn random_search<F>(
    space: &SearchSpace,
    trials: usize,
    n_folds: usize,
    seed: u64,
    score: F,
) -> Result<SearchReport, TrainError>
where
    F: Fn(&TrialParams, usize) -> Result<Option<f64>, TrainError> + Sync,
{
    if trials == 0 || n_folds == 0 {
        return Err(TrainError::InvalidConfig("trials and folds must be ≥ 1".into()));
    }
    let params: Vec<TrialParams> = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            space.sample(&mut rng)
        })
        .collect();
    let trials: Vec<Trial> = params
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| {
            let fold_scores = (0..n_folds).map(|f| score(&params, f)).collect::<Result<Vec<_>, _>>()?;
            let defined: Vec<f64> = fold_scores.iter().flatten().copied().collect();
            let mean_score = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            Ok(Trial {
                index,
                params,
                fold_scores,
                mean_score,
            })
        })
        .collect::<Result<_, TrainError>>()?;
    let mut best_index = 0;
    for t in &trials {
        let cur = trials[best_index].mean_score;
        if t.mean_score.is_some_and(|s| cur.is_none_or(|c| s > c)) {
            best_index = t.index;
        }
    }
    Ok(SearchReport { best_index, trials })
}

/// Cross-validated search over carving folds: each trial trains on a fold's
/// training component and scores macro AUROC on its validation component.
pub fn random_search_folds(
    space: &SearchSpace,
    trials: usize,
    folds: &[(Vec<Sample>, Vec<Sample>)],
    model: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<SearchReport, TrainError> {
    random_search(space, trials, folds.len(), seed, |params, f| {
        let (mc, tc) = params.apply(model, train);
        let (tr, va) = &folds[f];
        let out = train_model(&mc, &tc, tr, va)?;
        macro_auroc(&out.model, va)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub seeds: Vec<u64>,
    pub per_model: Vec<Option<f64>>,
    pub mean: f64,
    /// Half-width of the 95% Student-t interval over replicas.
    pub ci_half_width: f64,
    /// AUROC of the averaged probabilities.
    pub ensemble_score: Option<f64>,
}

pub fn ensemble_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| base.wrapping_add(k)).collect()
}

/// 95% half-width `t_{0.975, n−1} · s / √n`.
pub fn t_interval(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 || values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("dof ≥ 1")
        .inverse_cdf(0.975);
    t * var.sqrt() / (n as f64).sqrt()
}

/// Trains one replica per seed (in parallel) and scores each and their
/// probability average on `test`.
pub fn seed_ensemble(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    train: &[Sample],
    valid: &[Sample],
    test: &[Sample],
) -> Result<(EnsembleReport, Vec<TrainOutcome>), TrainError> {
    if seeds.len() < 2 {
        return Err(TrainError::InvalidConfig("an ensemble needs ≥ 2 replicas".into()));
    }
    if test.is_empty() {
        return Err(TrainError::EmptyDataset("test set"));
    }
    let outcomes: Vec<TrainOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let c = TrainConfig { seed, ..cfg.clone() };
            train_model(model_cfg, &c, train, valid)
        })
        .collect::<Result<_, _>>()?;
    let l = model_cfg.label_count;
    let names: Vec<String> = (0..l).map(|i| i.to_string()).collect();
    let test_refs: Vec<&Sample> = test.iter().collect();
    let targets = targets_of(&test_refs, l);
    let mut sum = Tensor::zeros(vec![test.len(), l]);
    let mut per_model = vec![];
    for o in &outcomes {
        let p = predict_samples(&o.model, test, 64)?;
        per_model.push(evaluate(&p, &targets, &names)?.macro_auroc);
        for (s, v) in sum.data_mut().iter_mut().zip(p.data()) {
            *s += v;
        }
    }
    let avg = sum.map(|v| v / seeds.len() as f64);
    let ensemble_score = evaluate(&avg, &targets, &names)?.macro_auroc;
    let defined: Vec<f64> = per_model.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok((
        EnsembleReport {
            seeds: seeds.to_vec(),
            per_model,
            mean,
            ci_half_width: t_interval(&defined),
            ensemble_score,
        },
        outcomes,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::featurize;
    use crate::smiles::parse_smiles;

    fn sample(a: &str, b: &str, labels: &[usize]) -> Sample {
        let g = |s: &str| featurize(&parse_smiles(s).unwrap());
        Sample {
            input: GraphInput::pair(g(a), g(b)).unwrap(),
            labels: LabelVector::new(labels.to_vec()),
        }
    }

    fn toy() -> Vec<Sample> {
        let mols = ["CCS", "CCO", "c1ccccc1", "CSC", "CC(=O)O", "CCCCO", "SCCS", "CN"];
        let mut out = vec![];
        for (i, a) in mols.iter().enumerate() {
            for b in &mols[i + 1..] {
                let s = a.contains('S') || b.contains('S');
                out.push(sample(a, b, if s { &[0] } else { &[1] }));
            }
        }
        out
    }

    #[test]
    fn history_is_reproducible() {
        let data = toy();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            patience: None,
            dropout: 0.25,
            ..Default::default()
        };
        let mc = ModelConfig {
            ffn_hidden: vec![8],
            ..ModelConfig::mpnn(6, 2)
        };
        let a = train_model(&mc, &cfg, &data[..20], &data[20..]).unwrap();
        let b = train_model(&mc, &cfg, &data[..20], &data[20..]).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.history.train_loss.len(), 3);
    }

    #[test]
    fn stops_at_first_non_improvement() {
        let data = toy();
        // a huge step makes validation loss rise quickly
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            lr0: 0.5,
            patience: Some(0),
            ..Default::default()
        };
        let out = train_model(&ModelConfig::gin(6, 2), &cfg, &data[..20], &data[20..]).unwrap();
        let h = &out.history;
        assert!(h.stop_epoch < 50);
        assert_eq!(h.best_epoch + 1, h.stop_epoch);
        let vl: Vec<f64> = h.valid_loss.iter().map(|v| v.unwrap()).collect();
        let min = vl.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(vl[h.best_epoch - 1], min);
        let (loss, _) = evaluate_loss(&out.model, &data[20..], &out.label_weights.clone().into(), 64).unwrap();
        assert!((loss - min).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_model(&ModelConfig::gin(4, 2), &cfg, &[], &toy()),
            Err(TrainError::EmptyDataset(_))
        ));
        assert!(matches!(
            train_model(&ModelConfig::gin(4, 2), &cfg, &toy(), &[]),
            Err(TrainError::EmptyDataset(_))
        ));
    }

    #[test]
    fn search_single_trial_and_determinism() {
        let space = SearchSpace::pair_task();
        let r = random_search(&space, 1, 2, 3, |_, _| Ok(Some(0.5))).unwrap();
        assert_eq!(r.best_index, 0);
        let score = |p: &TrialParams, f: usize| Ok(Some(p.lr0 + f as f64));
        let a = random_search(&space, 10, 2, 9, score).unwrap();
        let b = random_search(&space, 10, 2, 9, score).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rigged_search_finds_dominant_config() {
        let space = SearchSpace::pair_task();
        let mut hits = 0;
        for rep in 0..20u64 {
            let r = random_search(&space, 20, 3, 100 + rep, |p, f| {
                let mut rng = ChaCha8Rng::seed_from_u64(f as u64 * 7919 + (p.lr0 * 1e5) as u64);
                let noise: f64 = rng.gen_range(-0.02..0.02);
                Ok(Some(if p.dropout == 0.12 { 0.9 } else { 0.6 } + noise))
            })
            .unwrap();
            if r.best().params.dropout == 0.12 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "{hits}/20");
    }

    #[test]
    fn identical_seeds_zero_width() {
        assert_eq!(t_interval(&[0.8, 0.8, 0.8]), 0.0);
        // t_{0.975,2} from scipy.stats.t.ppf
        let hw = t_interval(&[1.0, 2.0, 3.0]);
        assert!((hw - 4.302652729696142 / 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn label_map_projects() {
        let m = LabelMap::new(&[7, 2, 9]);
        assert_eq!(m.project(&LabelVector::new(vec![2, 3, 9])).indices(), &[0, 2]);
    }

    #[test]
    fn space_sizes() {
        assert_eq!(SearchSpace::pair_task().decay_steps, vec![210.0, 420.0, 630.0, 840.0]);
        assert_eq!(SearchSpace::single_task().decay_steps, vec![20.0, 40.0, 60.0, 80.0]);
        assert_eq!(SearchSpace::pair_task().size(), 3 * 3 * 4 * 3 * 4 * 3 * 3 * 5);
    }
}
