use std::fs;
use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use odor_core::analyze::{fit_all_pairs, kde, kde_csv};
use odor_core::carve::{
    carve_search, kfold_carvings, CarveConfig, Carving, CarvingFile, Objective, SearchMode, TEST, TRAIN,
};
use odor_core::dataset::{
    dependent_notes, isolate_notes, jaccard_blend_analysis, load_mono, load_pairs_with_vocab, LabelVector, LabelVocab,
    MetaGraph, MonoRecord,
};
use odor_core::eval::{evaluate, logreg_fit, zero_r, LogRegConfig};
use odor_core::featurize::{featurize, MolGraph};
use odor_core::fingerprint::{concat_pair, morgan_fingerprint, smiles_hash, write_cache, BitFingerprint};
use odor_core::gnn::{target_matrix, Arch, GraphInput, Model, ModelConfig};
use odor_core::smiles::parse_smiles;
use odor_core::synth::{synth_dataset, SynthConfig};
use odor_core::tensor::{load_checkpoint, save_checkpoint, LrSchedule, Tensor};
use odor_core::train::{
    carving_samples, ensemble_seeds, pair_samples, predict_samples, random_search_folds, seed_ensemble, train_model,
    LabelMap, SearchSpace, TrainConfig, TrainOutcome,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::manifest::{RunDir, RunManifest};
use crate::{
    AnalyzeArgs, ArchArg, CarveArgs, EvalArgs, FpArgs, GlobalArgs, IngestArgs, ModeArg, NotesArgs, ObjectiveArg,
    Predictor, SearchArgs, SpaceArg, SynthArgs, TrainArgs, VerifyArgs,
};

pub const METAGRAPH_FILE: &str = "metagraph.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_bincode<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    bincode::deserialize(&read_bytes(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn to_bincode<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    bincode::serialize(value).map_err(|e| CliError::internal(e.to_string()))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = header.join(",") + "\n";
    for row in rows {
        out += &row.join(",");
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read_metagraph(path: &Path) -> Result<MetaGraph, CliError> {
    read_bincode(path)
}

fn read_carving(path: &Path, mg: &MetaGraph) -> Result<Carving, CliError> {
    let file: CarvingFile = read_json(path)?;
    file.to_carving(mg).map_err(|e| CliError::from_carve(e, mg))
}

fn featurize_all(mg: &MetaGraph) -> Result<Vec<MolGraph>, CliError> {
    Ok(mg.parse_molecules()?.iter().map(featurize).collect())
}

/// Labels a model predicts: the carving's covered set when it records one,
/// otherwise every label carried by an edge.
fn carving_label_map(mg: &MetaGraph, carving: &Carving) -> LabelMap {
    if carving.labels.is_empty() {
        LabelMap::new(&mg.edge_labels())
    } else {
        LabelMap::new(&carving.labels)
    }
}

fn label_names(mg: &MetaGraph, map: &LabelMap) -> Vec<String> {
    map.labels.iter().map(|&l| mg.vocab.note(l).to_string()).collect()
}

fn label_map_from_names(mg: &MetaGraph, names: &[String]) -> Result<LabelMap, CliError> {
    let indices = names
        .iter()
        .map(|n| {
            mg.vocab
                .get(n)
                .ok_or_else(|| CliError::input(format!("label {n:?} is not in the meta-graph vocabulary")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let map = LabelMap::new(&indices);
    if label_names(mg, &map) != names {
        return Err(CliError::input("model labels are not in vocabulary order"));
    }
    Ok(map)
}

fn projected_sets(mg: &MetaGraph, edges: &[usize], map: &LabelMap) -> Vec<LabelVector> {
    edges.iter().map(|&k| map.project(&mg.edges[k].labels)).collect()
}

fn targets(sets: &[LabelVector], n_labels: usize) -> Tensor {
    let refs: Vec<&LabelVector> = sets.iter().collect();
    target_matrix(&refs, n_labels)
}

pub fn ingest(g: &GlobalArgs, a: &IngestArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let vocab = match &a.vocab {
        Some(p) => LabelVocab::from_text(&read_text(p)?),
        None => LabelVocab::new(),
    };
    let (mut mg, pairs_report) = load_pairs_with_vocab(&a.pairs, vocab)?;
    let mono = match &a.mono {
        Some(p) => Some(load_mono(p, &mut mg.vocab)?),
        None => None,
    };

    let config = json!({ "pairs": a.pairs, "mono": a.mono, "vocab": a.vocab });
    let mut manifest = RunManifest::new("ingest", g.seed, config);
    for p in [Some(&a.pairs), a.mono.as_ref(), a.vocab.as_ref()]
        .into_iter()
        .flatten()
    {
        manifest.add_input(p)?;
    }
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write(METAGRAPH_FILE, &to_bincode(&mg)?)?;
    if let Some((records, _)) = &mono {
        run.write("mono.bin", &to_bincode(records)?)?;
    }
    run.write("vocab.txt", mg.vocab.to_text().as_bytes())?;
    run.write_json(
        "ingest_report.json",
        &json!({
            "pairs": pairs_report,
            "mono": mono.as_ref().map(|(_, r)| r),
            "molecules": mg.num_nodes(),
            "edges": mg.num_edges(),
            "labels": mg.vocab.len(),
        }),
    )?;
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

pub fn carve(g: &GlobalArgs, a: &CarveArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mg = read_metagraph(&a.metagraph)?;
    let required_labels = match &a.labels {
        Some(p) => Some(
            read_text(p)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|n| {
                    mg.vocab
                        .get(n)
                        .ok_or_else(|| CliError::input(format!("unknown label {n:?} in {}", p.display())))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let cfg = CarveConfig {
        train_fraction: a.fraction,
        max_iterations: a.max_iters,
        seed: g.seed,
        objective: match a.objective {
            ObjectiveArg::UsableEdges => Objective::UsableEdges,
            ObjectiveArg::Kl => Objective::KlScore,
        },
        required_labels,
        mode: match a.mode {
            ModeArg::BestOf => SearchMode::BestOf,
            ModeArg::FirstValid => SearchMode::FirstValid,
        },
        ..Default::default()
    };
    let carvings: Vec<(String, Carving)> = match a.kfold {
        None => vec![(
            "carving.json".into(),
            carve_search(&mg, &cfg).map_err(|e| CliError::from_carve(e, &mg))?,
        )],
        Some(k) => {
            let ratios = (a.ratios[0], a.ratios[1], a.ratios[2]);
            kfold_carvings(&mg, k, ratios, &cfg)
                .map_err(|e| CliError::from_carve(e, &mg))?
                .into_iter()
                .enumerate()
                .map(|(f, c)| (format!("carving_fold{f}.json"), c))
                .collect()
        }
    };
    let elapsed = start.elapsed().as_secs_f64();

    let config = json!({
        "metagraph": a.metagraph,
        "carve": cfg,
        "kfold": a.kfold,
        "ratios": a.kfold.map(|_| &a.ratios),
    });
    let mut manifest = RunManifest::new("carve", g.seed, config);
    manifest.add_input(&a.metagraph)?;
    let mut run = RunDir::create(&g.out, manifest)?;
    let mut coverage = vec![];
    let mut summary = vec![];
    for (name, c) in &carvings {
        let file = CarvingFile::new(c, &mg, &cfg);
        run.write_json(name, &file)?;
        for (label, counts) in &file.coverage {
            let mut row = vec![name.clone(), label.clone()];
            row.extend((0..3).map(|i| counts.get(i).map(|n| n.to_string()).unwrap_or_default()));
            coverage.push(row);
        }
        summary.push(json!({
            "file": name,
            "usable_edges": c.usable_count(),
            "discarded_edges": c.discarded.len(),
            "labels_covered": c.labels.len(),
            "iterations_used": c.iterations_used,
        }));
    }
    run.write(
        "coverage.csv",
        &csv_bytes(&["carving", "label", "train", "test", "valid"], coverage),
    )?;
    run.write_json("carve_summary.json", &summary)?;
    run.manifest.timings.insert("search".into(), elapsed);
    run.finish()?;
    Ok(())
}

/// Training settings as read from a `--config` file. Unset model fields
/// take the architecture's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub arch: Arch,
    pub hidden_dim: usize,
    pub mp_steps: Option<usize>,
    pub set2set_steps: Option<usize>,
    pub set2set_layers: Option<usize>,
    pub ffn_hidden: Option<Vec<usize>>,
    pub edge_hidden: Option<usize>,
    pub weighted_loss: Option<bool>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub dropout: f64,
    pub patience: Option<usize>,
    /// Share of training edges held out for validation in two-way carvings.
    pub valid_fraction: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            arch: Arch::Mpnn,
            hidden_dim: 64,
            mp_steps: None,
            set2set_steps: None,
            set2set_layers: None,
            ffn_hidden: None,
            edge_hidden: None,
            weighted_loss: None,
            epochs: 100,
            batch_size: 64,
            lr0: 1e-3,
            schedule: LrSchedule::Constant,
            weight_decay: 0.0,
            dropout: 0.0,
            patience: Some(10),
            valid_fraction: 0.1,
        }
    }
}

impl TrainSettings {
    pub fn load(
        path: Option<&Path>,
        arch: Option<ArchArg>,
        hidden: Option<usize>,
        epochs: Option<usize>,
    ) -> Result<Self, CliError> {
        let mut s = match path {
            Some(p) => read_json(p)?,
            None => TrainSettings::default(),
        };
        if let Some(a) = arch {
            s.arch = match a {
                ArchArg::Gin => Arch::Gin,
                ArchArg::Mpnn => Arch::Mpnn,
            };
        }
        s.hidden_dim = hidden.unwrap_or(s.hidden_dim);
        s.epochs = epochs.unwrap_or(s.epochs);
        Ok(s)
    }

    pub fn model_config(&self, label_count: usize) -> ModelConfig {
        let mut m = match self.arch {
            Arch::Gin => ModelConfig::gin(self.hidden_dim, label_count),
            Arch::Mpnn => ModelConfig::mpnn(self.hidden_dim, label_count),
        };
        m.mp_steps = self.mp_steps.unwrap_or(m.mp_steps);
        m.set2set_steps = self.set2set_steps.unwrap_or(m.set2set_steps);
        m.set2set_layers = self.set2set_layers.unwrap_or(m.set2set_layers);
        m.ffn_hidden = self.ffn_hidden.clone().unwrap_or(m.ffn_hidden);
        m.edge_hidden = self.edge_hidden.unwrap_or(m.edge_hidden);
        m.loss.weighted = self.weighted_loss.unwrap_or(m.loss.weighted);
        m
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            schedule: self.schedule,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            patience: self.patience,
            seed,
        }
    }
}

/// Resolved configuration of a training run, stored as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub valid_fraction: f64,
    /// Output column names, in column order.
    pub labels: Vec<String>,
}

fn write_model(run: &mut RunDir, prefix: &str, out: &TrainOutcome) -> Result<(), CliError> {
    let ckpt = format!("{prefix}{CHECKPOINT_FILE}");
    let tensors = format!("{prefix}checkpoint.json");
    if let Some(parent) = run.path(&ckpt).parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    save_checkpoint(out.model.params(), &run.path(&ckpt), Some(&run.path(&tensors)))?;
    run.record(&ckpt)?;
    run.record(&tensors)?;
    run.write(&format!("{prefix}history.csv"), out.history.to_csv().as_bytes())?;
    run.write_json(
        &format!("{prefix}train.json"),
        &json!({
            "stop_epoch": out.history.stop_epoch,
            "best_epoch": out.history.best_epoch,
            "label_weights": out.label_weights,
        }),
    )?;
    Ok(())
}

pub fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let settings = TrainSettings::load(a.config.as_deref(), a.arch, a.hidden, a.epochs)?;
    let mg = read_metagraph(&a.metagraph)?;
    let carving = read_carving(&a.carving, &mg)?;
    let map = carving_label_map(&mg, &carving);
    if map.is_empty() {
        return Err(CliError::input("the carving leaves no labels to train on"));
    }
    let graphs = featurize_all(&mg)?;
    let (tr, va, te) = carving_samples(&mg, &graphs, &carving, &map, settings.valid_fraction, g.seed)?;
    let run_cfg = RunConfig {
        model: settings.model_config(map.len()),
        train: settings.train_config(g.seed),
        valid_fraction: settings.valid_fraction,
        labels: label_names(&mg, &map),
    };
    let replicas = a.ensemble.unwrap_or(1);
    let prepared = start.elapsed().as_secs_f64();

    let mut manifest = RunManifest::new(
        "train",
        g.seed,
        json!({ "run": run_cfg, "ensemble": replicas, "metagraph": a.metagraph, "carving": a.carving }),
    );
    for p in [Some(&a.metagraph), Some(&a.carving), a.config.as_ref()]
        .into_iter()
        .flatten()
    {
        manifest.add_input(p)?;
    }
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write_json(CONFIG_FILE, &run_cfg)?;
    run.write_json(
        "split.json",
        &json!({ "train": tr.len(), "valid": va.len(), "test": te.len() }),
    )?;
    if replicas <= 1 {
        let out = train_model(&run_cfg.model, &run_cfg.train, &tr, &va)?;
        write_model(&mut run, "", &out)?;
    } else {
        let seeds = ensemble_seeds(g.seed, replicas);
        let (report, outcomes) = seed_ensemble(&run_cfg.model, &run_cfg.train, &seeds, &tr, &va, &te)?;
        write_model(&mut run, "", &outcomes[0])?;
        for (k, out) in outcomes.iter().enumerate() {
            write_model(&mut run, &format!("replica_{k}/"), out)?;
        }
        run.write_json("ensemble.json", &report)?;
    }
    run.manifest.timings.insert("prepare".into(), prepared);
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

pub fn search(g: &GlobalArgs, a: &SearchArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let settings = TrainSettings::load(a.config.as_deref(), a.arch, a.hidden, a.epochs)?;
    let mg = read_metagraph(&a.metagraph)?;
    let carvings = a
        .carvings
        .iter()
        .map(|p| read_carving(p, &mg))
        .collect::<Result<Vec<_>, _>>()?;
    if carvings.iter().any(|c| c.n_components < 3) {
        return Err(CliError::input(
            "search needs train/valid/test carvings (carve --kfold)",
        ));
    }
    // one label space across folds: labels every fold covers
    let maps: Vec<LabelMap> = carvings.iter().map(|c| carving_label_map(&mg, c)).collect();
    let shared: Vec<usize> = maps[0]
        .labels
        .iter()
        .copied()
        .filter(|l| maps.iter().all(|m| m.labels.binary_search(l).is_ok()))
        .collect();
    let map = LabelMap::new(&shared);
    if map.is_empty() {
        return Err(CliError::input("the folds share no covered label"));
    }
    let graphs = featurize_all(&mg)?;
    let folds = carvings
        .iter()
        .map(|c| carving_samples(&mg, &graphs, c, &map, settings.valid_fraction, g.seed).map(|(tr, va, _)| (tr, va)))
        .collect::<Result<Vec<_>, _>>()?;
    let space = match a.space {
        SpaceArg::Pair => SearchSpace::pair_task(),
        SpaceArg::Single => SearchSpace::single_task(),
    };
    let model = settings.model_config(map.len());
    let train = settings.train_config(g.seed);
    let report = random_search_folds(&space, a.trials, &folds, &model, &train, g.seed)?;
    let (best_model, best_train) = report.best().params.apply(&model, &train);

    let mut manifest = RunManifest::new(
        "search",
        g.seed,
        json!({ "settings": settings, "space": space, "trials": a.trials, "carvings": a.carvings }),
    );
    manifest.add_input(&a.metagraph)?;
    for p in &a.carvings {
        manifest.add_input(p)?;
    }
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write_json("search.json", &report)?;
    run.write_json(
        "best.json",
        &RunConfig {
            model: best_model,
            train: best_train,
            valid_fraction: settings.valid_fraction,
            labels: label_names(&mg, &map),
        },
    )?;
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

fn load_model(dir: &Path, mg: &MetaGraph) -> Result<(RunConfig, LabelMap, Model), CliError> {
    let rc: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    let map = label_map_from_names(mg, &rc.labels)?;
    let model = Model::from_params(&rc.model, load_checkpoint(&dir.join(CHECKPOINT_FILE))?)?;
    Ok((rc, map, model))
}

fn pair_fingerprints(mg: &MetaGraph, edges: &[usize], fps: &[BitFingerprint]) -> Result<Vec<BitFingerprint>, CliError> {
    edges
        .iter()
        .map(|&k| Ok(concat_pair(&fps[mg.edges[k].a], &fps[mg.edges[k].b])?))
        .collect()
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mg = read_metagraph(&a.metagraph)?;
    let carving = read_carving(&a.carving, &mg)?;
    let test_edges = carving.edges_in(TEST);
    let train_edges = carving.edges_in(TRAIN);
    if test_edges.is_empty() {
        return Err(CliError::input("the carving has no test pairs"));
    }

    let mut inputs = vec![a.metagraph.clone(), a.carving.clone()];
    let (map, probs) = match a.predictor {
        Predictor::Gin | Predictor::Mpnn => {
            let dir = a
                .model
                .as_deref()
                .ok_or_else(|| CliError::input("--model is required for gin and mpnn"))?;
            let (rc, map, model) = load_model(dir, &mg)?;
            let want = if a.predictor == Predictor::Gin {
                Arch::Gin
            } else {
                Arch::Mpnn
            };
            if rc.model.arch != want {
                return Err(CliError::input(format!(
                    "{} holds a {:?} model, not {want:?}",
                    dir.display(),
                    rc.model.arch
                )));
            }
            inputs.push(dir.join(CONFIG_FILE));
            inputs.push(dir.join(CHECKPOINT_FILE));
            let graphs = featurize_all(&mg)?;
            let samples = pair_samples(&mg, &graphs, test_edges, &map)?;
            let probs = predict_samples(&model, &samples, 64)?;
            (map, probs)
        }
        Predictor::ZeroR => {
            let map = carving_label_map(&mg, &carving);
            let probs = zero_r(&projected_sets(&mg, train_edges, &map), map.len())?.predict(test_edges.len());
            (map, probs)
        }
        Predictor::LogregMfp => {
            let map = carving_label_map(&mg, &carving);
            let fps = mg
                .parse_molecules()?
                .iter()
                .map(|m| morgan_fingerprint(m, a.radius, a.nbits))
                .collect::<Result<Vec<_>, _>>()?;
            let train_y = targets(&projected_sets(&mg, train_edges, &map), map.len());
            let cfg = LogRegConfig {
                l2: a.l2,
                ..Default::default()
            };
            let model = logreg_fit(&pair_fingerprints(&mg, train_edges, &fps)?, &train_y, &cfg)?;
            let probs = model.predict(&pair_fingerprints(&mg, test_edges, &fps)?)?;
            (map, probs)
        }
    };
    let names = label_names(&mg, &map);
    let test_y = targets(&projected_sets(&mg, test_edges, &map), map.len());
    let report = evaluate(&probs, &test_y, &names)?;

    let predictor = a
        .predictor
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    let mut manifest = RunManifest::new(
        "eval",
        g.seed,
        json!({ "predictor": predictor, "radius": a.radius, "nbits": a.nbits, "l2": a.l2, "model": a.model }),
    );
    for p in &inputs {
        manifest.add_input(p)?;
    }
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write("report.csv", report.to_csv().as_bytes())?;
    let s = report.summary();
    run.write_json(
        SUMMARY_FILE,
        &json!({
            "predictor": predictor,
            "n_labels": names.len(),
            "n_labels_defined": s.n_labels_defined,
            "n_items": s.n_items,
            "macro_auroc": s.macro_auroc,
            "micro_auroc": s.micro_auroc,
        }),
    )?;
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

pub fn analyze(g: &GlobalArgs, a: &AnalyzeArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mg = read_metagraph(&a.metagraph)?;
    let (_, _, model) = load_model(&a.model, &mg)?;
    let edges: Vec<usize> = match &a.carving {
        Some(p) => read_carving(p, &mg)?.edges_in(TEST).to_vec(),
        None => (0..mg.num_edges()).collect(),
    };
    let graphs = featurize_all(&mg)?;
    let pairs = edges
        .iter()
        .map(|&k| {
            let e = &mg.edges[k];
            GraphInput::pair(graphs[e.a].clone(), graphs[e.b].clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let analysis = fit_all_pairs(&model, &pairs)?;

    let mut manifest = RunManifest::new(
        "analyze",
        g.seed,
        json!({ "model": a.model, "carving": a.carving, "grid": a.grid }),
    );
    manifest.add_input(&a.metagraph)?;
    manifest.add_input(&a.model.join(CHECKPOINT_FILE))?;
    if let Some(p) = &a.carving {
        manifest.add_input(p)?;
    }
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write("regression.csv", analysis.scatter_csv().as_bytes())?;
    let columns: [(&str, Vec<f64>); 3] = [
        ("r2", analysis.fits.iter().map(|f| f.r2).collect()),
        ("alpha1", analysis.fits.iter().map(|f| f.alpha1).collect()),
        ("alpha2", analysis.fits.iter().map(|f| f.alpha2).collect()),
    ];
    for (name, values) in columns {
        let finite: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        run.write(
            &format!("kde_{name}.csv"),
            kde_csv(&kde(&finite, None, a.grid)?).as_bytes(),
        )?;
    }
    run.write_json(
        "analysis.json",
        &json!({
            "n_pairs": analysis.fits.len(),
            "mean_r2": analysis.mean_r2,
            "mean_p": analysis.mean_p,
            "corr_alpha": analysis.corr_alpha,
            "degenerate_fits": analysis.fits.iter().filter(|f| f.degenerate).count(),
            "pca_explained_variance": analysis.reduction.as_ref().map(|p| &p.explained_variance_ratio),
        }),
    )?;
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

pub fn fp(g: &GlobalArgs, a: &FpArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (input, smiles): (&Path, Vec<String>) = match (&a.metagraph, &a.smiles) {
        (Some(p), _) => (p, read_metagraph(p)?.molecules),
        (None, Some(p)) => (
            p,
            read_text(p)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        ),
        (None, None) => return Err(CliError::input("one of --metagraph or --smiles is required")),
    };
    let mut records = vec![];
    let mut rejected = vec![];
    for s in &smiles {
        match parse_smiles(s) {
            Ok(mol) => records.push((smiles_hash(s), morgan_fingerprint(&mol, a.radius, a.nbits)?)),
            Err(e) => rejected.push(json!({ "smiles": s, "error": e.to_string() })),
        }
    }
    let mut bytes = vec![];
    write_cache(&mut bytes, a.nbits, a.radius, &records).map_err(|e| CliError::internal(e.to_string()))?;
    let mean_popcount = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|(_, f)| f.popcount()).sum::<usize>() as f64 / records.len() as f64
    };

    let mut manifest = RunManifest::new("fp", g.seed, json!({ "radius": a.radius, "nbits": a.nbits }));
    manifest.add_input(input)?;
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write("fingerprints.bin", &bytes)?;
    run.write_json(
        "fp_summary.json",
        &json!({
            "count": records.len(),
            "radius": a.radius,
            "nbits": a.nbits,
            "mean_popcount": mean_popcount,
            "rejected": rejected,
        }),
    )?;
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

pub fn notes(g: &GlobalArgs, a: &NotesArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mg = read_metagraph(&a.metagraph)?;
    let sets = mg.label_sets();
    let note = |l: usize| mg.vocab.note(l).to_string();
    let dependent = dependent_notes(&sets)
        .into_iter()
        .map(|d| vec![note(d.dependent), note(d.parent), d.frequency.to_string()]);
    let isolated = isolate_notes(&sets)
        .into_iter()
        .map(|(l, n)| vec![note(l), n.to_string()]);

    let mut manifest = RunManifest::new("notes", g.seed, json!({ "mono": a.mono }));
    manifest.add_input(&a.metagraph)?;
    if let Some(p) = &a.mono {
        manifest.add_input(p)?;
    }
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write(
        "dependent_notes.csv",
        &csv_bytes(&["dependent", "parent", "frequency"], dependent),
    )?;
    run.write("isolate_notes.csv", &csv_bytes(&["note", "count"], isolated))?;
    if let Some(p) = &a.mono {
        let mono: Vec<MonoRecord> = read_bincode(p)?;
        run.write_json("jaccard.json", &jaccard_blend_analysis(&mg, &mono)?)?;
    }
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

pub fn synth(g: &GlobalArgs, a: &SynthArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = SynthConfig {
        n_pairs: a.pairs,
        n_molecules: a.molecules,
        sulfur_rate: a.sulfur_rate,
        seed: g.seed,
    };
    let ds = synth_dataset(&cfg)?;
    let manifest = RunManifest::new("synth", g.seed, json!(cfg));
    let mut run = RunDir::create(&g.out, manifest)?;
    run.write("pairs.jsonl", ds.pairs_jsonl().as_bytes())?;
    run.write("mono.jsonl", ds.mono_jsonl().as_bytes())?;
    run.manifest
        .timings
        .insert("total".into(), start.elapsed().as_secs_f64());
    run.finish()?;
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    let manifest = RunManifest::read(&a.manifest)?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let bad = manifest.mismatches(dir);
    if !bad.is_empty() {
        return Err(
            CliError::input(format!("{} file(s) differ from the manifest", bad.len()))
                .with_details(json!({ "mismatched": bad })),
        );
    }
    println!(
        "{}",
        json!({ "verified": manifest.inputs.len() + manifest.artifacts.len() })
    );
    Ok(())
}
