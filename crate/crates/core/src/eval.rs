//! AUROC scoring, aggregate reports and the two non-neural baselines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabelVector;
use crate::fingerprint::BitFingerprint;
use crate::tensor::{sigmoid, softplus, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("labels are all positive or all negative")]
    DegenerateLabels,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("feature width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
}

/// Mann-Whitney AUROC with average ranks for ties: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled ranks keep tie averages integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, doubled average = i + j + 2
        let avg2 = (i + j + 2) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum2 += avg2;
            }
        }
        i = j + 1;
    }
    let u2 = rank_sum2 - (n_pos as u128) * (n_pos as u128 + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub support_pos: usize,
    pub support_neg: usize,
    /// `None` when the label has no positives or no negatives.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub macro_auroc: Option<f64>,
    pub micro_auroc: Option<f64>,
    pub n_items: usize,
    pub n_labels_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_label: Vec<LabelScore>,
    /// Mean of defined per-label AUROCs.
    pub macro_auroc: Option<f64>,
    /// AUROC pooled over every (item, label) entry.
    pub micro_auroc: Option<f64>,
    pub n_items: usize,
}

impl ScoreReport {
    pub fn n_labels_defined(&self) -> usize {
        self.per_label.iter().filter(|l| l.auroc.is_some()).count()
    }

    pub fn summary(&self) -> Summary {
        Summary {
            macro_auroc: self.macro_auroc,
            micro_auroc: self.micro_auroc,
            n_items: self.n_items,
            n_labels_defined: self.n_labels_defined(),
        }
    }

    /// `label,support_pos,support_neg,auroc`; undefined AUROCs are empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "support_pos", "support_neg", "auroc"])
            .expect("in-memory write");
        for l in &self.per_label {
            w.write_record([
                l.label.clone(),
                l.support_pos.to_string(),
                l.support_neg.to_string(),
                l.auroc.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// Scores a `[items, labels]` prediction matrix against 0/1 targets.
pub fn evaluate(probs: &Tensor, targets: &Tensor, label_names: &[String]) -> Result<ScoreReport, EvalError> {
    if probs.shape() != targets.shape() {
        return Err(EvalError::LengthMismatch(probs.len(), targets.len()));
    }
    if probs.cols() != label_names.len() {
        return Err(EvalError::WidthMismatch {
            expected: label_names.len(),
            found: probs.cols(),
        });
    }
    let (n, l) = (probs.rows(), probs.cols());
    let per_label: Vec<LabelScore> = (0..l)
        .map(|j| {
            let s: Vec<f64> = (0..n).map(|i| probs.get(i, j)).collect();
            let y: Vec<bool> = (0..n).map(|i| targets.get(i, j) > 0.5).collect();
            let pos = y.iter().filter(|&&v| v).count();
            LabelScore {
                label: label_names[j].clone(),
                support_pos: pos,
                support_neg: n - pos,
                auroc: auroc(&s, &y).ok(),
            }
        })
        .collect();
    let defined: Vec<f64> = per_label.iter().filter_map(|l| l.auroc).collect();
    let macro_auroc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let pooled_y: Vec<bool> = targets.data().iter().map(|&v| v > 0.5).collect();
    let micro_auroc = auroc(probs.data(), &pooled_y).ok();
    Ok(ScoreReport {
        per_label,
        macro_auroc,
        micro_auroc,
        n_items: n,
    })
}

/// Constant predictor emitting each label's training frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroR {
    pub frequencies: Vec<f64>,
}

pub fn zero_r(train: &[LabelVector], n_labels: usize) -> Result<ZeroR, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut counts = vec![0usize; n_labels];
    for set in train {
        for &l in set.indices() {
            if l < n_labels {
                counts[l] += 1;
            }
        }
    }
    Ok(ZeroR {
        frequencies: counts.iter().map(|&c| c as f64 / train.len() as f64).collect(),
    })
}

impl ZeroR {
    pub fn predict(&self, n_items: usize) -> Tensor {
        let l = self.frequencies.len();
        let data = (0..n_items).flat_map(|_| self.frequencies.iter().copied()).collect();
        Tensor::from_vec(vec![n_items, l], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub max_steps: usize,
    /// Step size; `None` derives separate weight and bias steps from a
    /// curvature bound.
    pub lr: Option<f64>,
    /// Stop once the full gradient norm drops below this.
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            max_steps: 5000,
            lr: None,
            tol: 1e-6,
        }
    }
}

/// One-vs-rest logistic regression over binary fingerprint features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    /// `[n_features, n_labels]`
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub l2: f64,
    pub steps: usize,
    pub grad_norm: f64,
}

fn check_widths(features: &[BitFingerprint], width: usize) -> Result<(), EvalError> {
    match features.iter().find(|f| f.nbits() != width) {
        Some(f) => Err(EvalError::WidthMismatch {
            expected: width,
            found: f.nbits(),
        }),
        None => Ok(()),
    }
}

fn logits(w: &Tensor, b: &[f64], bits: &[Vec<usize>]) -> Vec<f64> {
    let l = b.len();
    let mut z = Vec::with_capacity(bits.len() * l);
    for row in bits {
        let start = z.len();
        z.extend_from_slice(b);
        for &j in row {
            for (zk, wk) in z[start..].iter_mut().zip(w.row_slice(j)) {
                *zk += wk;
            }
        }
    }
    z
}

/// Mean BCE over items (summed over labels) plus `l2/2 ‖W‖²`.
pub fn logreg_objective(model: &LogRegModel, features: &[BitFingerprint], targets: &Tensor) -> f64 {
    let bits: Vec<Vec<usize>> = features.iter().map(|f| f.ones().collect()).collect();
    let z = logits(&model.weights, &model.bias, &bits);
    let n = features.len().max(1) as f64;
    let bce: f64 = z
        .iter()
        .zip(targets.data())
        .map(|(&zi, &yi)| softplus(zi) - zi * yi)
        .sum();
    let reg: f64 = model.weights.data().iter().map(|w| w * w).sum();
    bce / n + 0.5 * model.l2 * reg
}

/// Full-batch gradient descent on the L2-regularized objective of
/// [`logreg_objective`]; the bias is not regularized.
pub fn logreg_fit(features: &[BitFingerprint], targets: &Tensor, cfg: &LogRegConfig) -> Result<LogRegModel, EvalError> {
    let Some(first) = features.first() else {
        return Err(EvalError::EmptyDataset);
    };
    let width = first.nbits();
    check_widths(features, width)?;
    if targets.rows() != features.len() {
        return Err(EvalError::LengthMismatch(features.len(), targets.rows()));
    }
    let l = targets.cols();
    let n = features.len() as f64;
    let bits: Vec<Vec<usize>> = features.iter().map(|f| f.ones().collect()).collect();
    let max_nnz = bits.iter().map(Vec::len).max().unwrap_or(0) as f64;
    // Hessian of the mean BCE is ≤ ¼ max‖[x,1]‖² in operator norm; with
    // these per-block steps the preconditioned Hessian stays below 2.
    let (lr_w, lr_b) = match cfg.lr {
        Some(lr) => (lr, lr),
        None => (1.0 / (0.25 * (max_nnz + 1.0) + cfg.l2), 1.0 / (0.5 * (max_nnz + 1.0))),
    };

    let mut w = Tensor::zeros(vec![width, l]);
    let mut b = vec![0.0; l];
    let mut gw = Tensor::zeros(vec![width, l]);
    let mut gb = vec![0.0; l];
    let mut grad_norm = f64::INFINITY;
    let mut steps = 0;
    while steps < cfg.max_steps {
        let z = logits(&w, &b, &bits);
        for (g, &wv) in gw.data_mut().iter_mut().zip(w.data()) {
            *g = cfg.l2 * wv;
        }
        gb.fill(0.0);
        for (i, row) in bits.iter().enumerate() {
            for k in 0..l {
                let r = (sigmoid(z[i * l + k]) - targets.get(i, k)) / n;
                gb[k] += r;
                for &j in row {
                    gw.data_mut()[j * l + k] += r;
                }
            }
        }
        grad_norm = (gw.data().iter().chain(&gb).map(|g| g * g).sum::<f64>()).sqrt();
        if grad_norm < cfg.tol {
            break;
        }
        for (wv, g) in w.data_mut().iter_mut().zip(gw.data()) {
            *wv -= lr_w * g;
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= lr_b * g;
        }
        steps += 1;
    }
    Ok(LogRegModel {
        weights: w,
        bias: b,
        l2: cfg.l2,
        steps,
        grad_norm,
    })
}

impl LogRegModel {
    pub fn predict(&self, features: &[BitFingerprint]) -> Result<Tensor, EvalError> {
        check_widths(features, self.weights.rows())?;
        let bits: Vec<Vec<usize>> = features.iter().map(|f| f.ones().collect()).collect();
        let z = logits(&self.weights, &self.bias, &bits);
        Ok(Tensor::from_vec(
            vec![features.len(), self.bias.len()],
            z.into_iter().map(sigmoid).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auroc_examples() {
        let a = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(auroc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.2, 0.9], &[false, false, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), Err(EvalError::DegenerateLabels));
    }

    proptest! {
        #[test]
        fn rank_equals_pair_count(v in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = v.iter().map(|p| p.0 as f64 / 5.0).collect();
            let labels: Vec<bool> = v.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), brute(&scores, &labels));
        }

        #[test]
        fn monotone_invariance_and_complement(v in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)) {
            let s: Vec<f64> = v.iter().map(|p| p.0).collect();
            let y: Vec<bool> = v.iter().map(|p| p.1).collect();
            prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
            let base = auroc(&s, &y).unwrap();
            let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let aff: Vec<f64> = s.iter().map(|x| 3.0 * x + 1.0).collect();
            prop_assert_eq!(auroc(&e, &y).unwrap(), base);
            prop_assert_eq!(auroc(&aff, &y).unwrap(), base);
            let flipped: Vec<bool> = y.iter().map(|l| !l).collect();
            prop_assert!((base + auroc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    fn names(l: usize) -> Vec<String> {
        (0..l).map(|i| format!("l{i}")).collect()
    }

    #[test]
    fn report_aggregates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, l) = (1000, 10);
        let targets = Tensor::from_vec(
            vec![n, l],
            (0..n * l).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect(),
        );
        let oracle = evaluate(&targets, &targets, &names(l)).unwrap();
        assert_eq!(oracle.macro_auroc, Some(1.0));
        let random = Tensor::from_vec(vec![n, l], (0..n * l).map(|_| rng.gen()).collect());
        let r = evaluate(&random, &targets, &names(l)).unwrap();
        assert!((r.macro_auroc.unwrap() - 0.5).abs() < 0.05);

        let sets: Vec<LabelVector> = (0..n)
            .map(|i| LabelVector::new((0..l).filter(|&j| targets.get(i, j) > 0.5).collect()))
            .collect();
        let zr = zero_r(&sets[..500], l).unwrap();
        let z = evaluate(&zr.predict(n), &targets, &names(l)).unwrap();
        assert_eq!(z.macro_auroc, Some(0.5));
        assert_eq!(z.summary().n_labels_defined, l);
    }

    #[test]
    fn micro_over_one_label_is_that_label() {
        let p = Tensor::from_vec(vec![4, 1], vec![0.1, 0.4, 0.35, 0.8]);
        let y = Tensor::from_vec(vec![4, 1], vec![0.0, 0.0, 1.0, 1.0]);
        let r = evaluate(&p, &y, &names(1)).unwrap();
        assert_eq!(r.micro_auroc, r.per_label[0].auroc);
    }

    #[test]
    fn undefined_labels_excluded() {
        let p = Tensor::from_rows(&[vec![0.2, 0.9], vec![0.8, 0.1]]);
        let y = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]);
        let r = evaluate(&p, &y, &names(2)).unwrap();
        assert_eq!(r.per_label[1].auroc, None);
        assert_eq!(r.macro_auroc, Some(1.0));
        assert!(r
            .to_csv()
            .starts_with("label,support_pos,support_neg,auroc\nl0,1,1,1\nl1,2,0,\n"));
    }

    #[test]
    fn zero_r_frequencies() {
        let sets = vec![
            LabelVector::new(vec![0]),
            LabelVector::new(vec![]),
            LabelVector::new(vec![0, 1]),
        ];
        let z = zero_r(&sets, 2).unwrap();
        assert_eq!(z.frequencies, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(zero_r(&[], 2), Err(EvalError::EmptyDataset));
    }

    fn fp(bits: &[usize], nbits: usize) -> BitFingerprint {
        let mut f = BitFingerprint::zeros(nbits, 0).unwrap();
        for &b in bits {
            f.set(b);
        }
        f
    }

    #[test]
    fn separable_fixture() {
        let feats: Vec<BitFingerprint> = (0..20).map(|i| fp(if i % 2 == 0 { &[3] } else { &[] }, 64)).collect();
        let y = Tensor::from_vec(
            vec![20, 1],
            (0..20).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(),
        );
        let m = logreg_fit(
            &feats,
            &y,
            &LogRegConfig {
                l2: 1e-2,
                max_steps: 20_000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.grad_norm < 1e-6);
        let p = m.predict(&feats).unwrap();
        let r = evaluate(&p, &y, &names(1)).unwrap();
        assert_eq!(r.macro_auroc, Some(1.0));
    }

    #[test]
    fn heavy_l2_shrinks_to_prior() {
        let feats: Vec<BitFingerprint> = (0..10).map(|i| fp(&[i % 4], 64)).collect();
        let y = Tensor::from_vec(vec![10, 1], (0..10).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect());
        let m = logreg_fit(
            &feats,
            &y,
            &LogRegConfig {
                l2: 1e6,
                max_steps: 20_000,
                lr: None,
                tol: 1e-10,
            },
        )
        .unwrap();
        assert!(m.weights.data().iter().all(|w| w.abs() < 1e-5));
        for p in m.predict(&feats).unwrap().data() {
            assert!((p - 0.3).abs() < 1e-4);
        }
    }

    #[test]
    fn width_mismatch() {
        let feats = vec![fp(&[1], 64), fp(&[1], 128)];
        let y = Tensor::zeros(vec![2, 1]);
        assert!(matches!(
            logreg_fit(&feats, &y, &LogRegConfig::default()),
            Err(EvalError::WidthMismatch {
                expected: 64,
                found: 128
            })
        ));
    }
}
