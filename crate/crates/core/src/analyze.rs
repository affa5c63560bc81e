//! Embedding-space analysis: per-pair linear decomposition of pair
//! embeddings, PCA reduction and kernel density curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::MolGraph;
use crate::gnn::{GnnError, GraphInput, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyzeError {
    #[error("embedding widths differ: {0:?}")]
    DimensionMismatch(Vec<usize>),
    #[error("regression needs at least 3 dimensions, got {0}")]
    TooFewDimensions(usize),
    #[error("target dimension {target} exceeds source_dim dimension {source_dim}")]
    InvalidTarget { target: usize, source_dim: usize },
    #[error("no samples")]
    Empty,
    #[error("KDE grid needs at least 2 points")]
    GridTooSmall,
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub alpha1: f64,
    pub alpha2: f64,
    /// `1 − SS_res / SS_tot`; not clamped, so poor fits go negative.
    pub r2: f64,
    pub f: f64,
    pub p: f64,
    /// `e1` and `e2` were collinear; the minimum-norm solution is reported.
    pub degenerate: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least squares `α1 e1 + α2 e2 ≈ ep` without intercept, with an F test of
/// `(2, D − 2)` degrees of freedom.
pub fn pair_regression(e1: &[f64], e2: &[f64], ep: &[f64]) -> Result<RegressionFit, AnalyzeError> {
    let d = ep.len();
    if e1.len() != d || e2.len() != d {
        return Err(AnalyzeError::DimensionMismatch(vec![e1.len(), e2.len(), d]));
    }
    if d < 3 {
        return Err(AnalyzeError::TooFewDimensions(d));
    }
    let (a, b, c) = (dot(e1, e1), dot(e1, e2), dot(e2, e2));
    let (r1, r2) = (dot(e1, ep), dot(e2, ep));
    let det = a * c - b * b;
    let degenerate = !(det > 1e-12 * a * c);
    let (alpha1, alpha2) = if !degenerate {
        ((c * r1 - b * r2) / det, (a * r2 - b * r1) / det)
    } else {
        // rank ≤ 1: pinv(G) = G / tr(G)²
        let tr = a + c;
        if tr == 0.0 {
            (0.0, 0.0)
        } else {
            let s = tr * tr;
            ((a * r1 + b * r2) / s, (b * r1 + c * r2) / s)
        }
    };
    let ss_res: f64 = (0..d).map(|i| (ep[i] - alpha1 * e1[i] - alpha2 * e2[i]).powi(2)).sum();
    let mean = ep.iter().sum::<f64>() / d as f64;
    let ss_tot: f64 = ep.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let f = if ss_res == 0.0 {
        f64::INFINITY
    } else {
        ((ss_tot - ss_res) / 2.0) / (ss_res / (d - 2) as f64)
    };
    let p = f_pvalue(f.max(0.0), 2.0, (d - 2) as f64);
    Ok(RegressionFit {
        alpha1,
        alpha2,
        r2,
        f,
        p,
        degenerate,
    })
}

/// Lanczos approximation (g = 7, n = 9) of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper-tail probability `P(F(d1, d2) > f)`.
pub fn f_pvalue(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// PCA projection fitted by power iteration with deflation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[target_dim, source_dim]`, unit rows (zero rows when padded).
    pub components: Tensor,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Fewer non-zero eigenvalues than requested components.
    pub rank_deficient: bool,
}

impl Pca {
    pub fn transform(&self, x: &Tensor) -> Result<Tensor, AnalyzeError> {
        let d = self.mean.len();
        if x.cols() != d {
            return Err(AnalyzeError::DimensionMismatch(vec![x.cols(), d]));
        }
        let k = self.components.rows();
        let mut out = Vec::with_capacity(x.rows() * k);
        for i in 0..x.rows() {
            let centered: Vec<f64> = x.row_slice(i).iter().zip(&self.mean).map(|(v, m)| v - m).collect();
            for c in 0..k {
                out.push(dot(&centered, self.components.row_slice(c)));
            }
        }
        Ok(Tensor::from_vec(vec![x.rows(), k], out))
    }

    pub fn inverse_transform(&self, z: &Tensor) -> Tensor {
        let d = self.mean.len();
        let mut out = Vec::with_capacity(z.rows() * d);
        for i in 0..z.rows() {
            for j in 0..d {
                out.push(
                    self.mean[j]
                        + (0..z.cols())
                            .map(|c| z.get(i, c) * self.components.get(c, j))
                            .sum::<f64>(),
                );
            }
        }
        Tensor::from_vec(vec![z.rows(), d], out)
    }
}

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 1_000_000;

/// Fits a `target_dim` PCA on the rows of `x` (mean-centered covariance).
pub fn fit_pca(x: &Tensor, target_dim: usize) -> Result<Pca, AnalyzeError> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 {
        return Err(AnalyzeError::Empty);
    }
    if target_dim > d {
        return Err(AnalyzeError::InvalidTarget {
            target: target_dim,
            source_dim: d,
        });
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let denom = (n.max(2) - 1) as f64;
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let r: Vec<f64> = x.row_slice(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += r[a] * r[b] / denom;
            }
        }
    }
    let trace: f64 = (0..d).map(|a| cov[a * d + a]).sum();
    let floor = 1e-12 * trace.max(f64::MIN_POSITIVE);
    let mut components = vec![0.0; target_dim * d];
    let mut eigenvalues = vec![0.0; target_dim];
    let mut rank_deficient = false;
    for k in 0..target_dim {
        // start off any axis-aligned subspace
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 0.1 * ((j * 7 + k * 3) % 11) as f64).collect();
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let mut w: Vec<f64> = (0..d).map(|a| dot(&cov[a * d..(a + 1) * d], &v)).collect();
            let wn = dot(&w, &w).sqrt();
            if wn <= floor {
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|x| *x /= wn);
            let delta = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            lambda = wn;
            if delta < POWER_TOL * 1e-3 {
                break;
            }
        }
        if lambda <= floor {
            rank_deficient = true;
            continue;
        }
        // sign: largest-magnitude entry positive
        let big = v
            .iter()
            .copied()
            .fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        lambda = (0..d).map(|a| v[a] * dot(&cov[a * d..(a + 1) * d], &v)).sum();
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] -= lambda * v[a] * v[b];
            }
        }
        components[k * d..(k + 1) * d].copy_from_slice(&v);
        eigenvalues[k] = lambda;
    }
    let explained_variance_ratio = eigenvalues
        .iter()
        .map(|l| if trace > 0.0 { l / trace } else { 0.0 })
        .collect();
    Ok(Pca {
        mean,
        components: Tensor::from_vec(vec![target_dim, d], components),
        eigenvalues,
        explained_variance_ratio,
        rank_deficient,
    })
}

/// Projects rows of `x` onto their top `target_dim` principal components.
pub fn reduce_dim(x: &Tensor, target_dim: usize) -> Result<(Tensor, Pca), AnalyzeError> {
    let pca = fit_pca(x, target_dim)?;
    Ok((pca.transform(x)?, pca))
}

/// Silverman's rule `(4 / 3n)^{1/5} σ`; 1 when the spread is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 1.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if sd > 0.0 {
        (4.0 / (3.0 * n as f64)).powf(0.2) * sd
    } else {
        1.0
    }
}

/// Gaussian KDE on `grid` evenly spaced points over `[min − 3h, max + 3h]`.
pub fn kde(samples: &[f64], bandwidth: Option<f64>, grid: usize) -> Result<Vec<(f64, f64)>, AnalyzeError> {
    if samples.is_empty() {
        return Err(AnalyzeError::Empty);
    }
    if grid < 2 {
        return Err(AnalyzeError::GridTooSmall);
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..grid)
        .map(|g| {
            let x = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
            let density = samples
                .iter()
                .map(|s| (-0.5 * ((x - s) / h).powi(2)).exp())
                .sum::<f64>()
                * norm;
            (x, density)
        })
        .collect())
}

pub fn kde_csv(points: &[(f64, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "density"]).expect("in-memory write");
    for (x, d) in points {
        w.write_record([x.to_string(), d.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Sample Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Source of molecule and pair embeddings.
pub trait PairEmbedder {
    fn embed_molecules(&self, graphs: &[&MolGraph]) -> Result<Tensor, AnalyzeError>;
    fn embed_pairs(&self, pairs: &[&GraphInput]) -> Result<Tensor, AnalyzeError>;
}

impl PairEmbedder for Model {
    fn embed_molecules(&self, graphs: &[&MolGraph]) -> Result<Tensor, AnalyzeError> {
        Ok(Model::embed_molecules(self, graphs)?)
    }

    fn embed_pairs(&self, pairs: &[&GraphInput]) -> Result<Tensor, AnalyzeError> {
        Ok(self.embed(pairs)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub fits: Vec<RegressionFit>,
    /// Means over fits with a finite value.
    pub mean_r2: f64,
    pub mean_p: f64,
    pub corr_alpha: Option<f64>,
    /// Present when molecule embeddings were reduced to the pair width.
    pub reduction: Option<Pca>,
}

impl PairAnalysis {
    /// `pair_id,alpha1,alpha2,r2,p`
    pub fn scatter_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["pair_id", "alpha1", "alpha2", "r2", "p"])
            .expect("in-memory write");
        for (i, f) in self.fits.iter().enumerate() {
            w.write_record([
                i.to_string(),
                f.alpha1.to_string(),
                f.alpha2.to_string(),
                f.r2.to_string(),
                f.p.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

fn finite_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v
        .filter(|x| x.is_finite())
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

const EMBED_BATCH: usize = 64;

/// Fits `α1 e1 + α2 e2 ≈ ep` for every pair. When molecule embeddings are
/// wider than pair embeddings, they are first projected by one PCA fitted on
/// all molecule embeddings of both positions.
pub fn fit_all_pairs<E: PairEmbedder + ?Sized>(
    embedder: &E,
    pairs: &[GraphInput],
) -> Result<PairAnalysis, AnalyzeError> {
    if pairs.is_empty() {
        return Err(AnalyzeError::Empty);
    }
    let (mut e1, mut e2, mut ep) = (vec![], vec![], vec![]);
    let mut width = (0, 0);
    for chunk in pairs.chunks(EMBED_BATCH) {
        let firsts: Vec<&MolGraph> = chunk.iter().map(|p| &*p.parts[0]).collect();
        let seconds: Vec<&MolGraph> = chunk
            .iter()
            .map(|p| p.parts.get(1).map(|g| &**g).ok_or(GnnError::PairRequired))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&GraphInput> = chunk.iter().collect();
        let (a, b, p) = (
            embedder.embed_molecules(&firsts)?,
            embedder.embed_molecules(&seconds)?,
            embedder.embed_pairs(&refs)?,
        );
        width = (a.cols(), p.cols());
        e1.extend_from_slice(a.data());
        e2.extend_from_slice(b.data());
        ep.extend_from_slice(p.data());
    }
    let n = pairs.len();
    let (dm, dp) = width;
    let (mut m1, mut m2) = (Tensor::from_vec(vec![n, dm], e1), Tensor::from_vec(vec![n, dm], e2));
    let pe = Tensor::from_vec(vec![n, dp], ep);
    let mut reduction = None;
    if dm != dp {
        if dp > dm {
            return Err(AnalyzeError::DimensionMismatch(vec![dm, dp]));
        }
        let mut both = m1.data().to_vec();
        both.extend_from_slice(m2.data());
        let pca = fit_pca(&Tensor::from_vec(vec![2 * n, dm], both), dp)?;
        m1 = pca.transform(&m1)?;
        m2 = pca.transform(&m2)?;
        reduction = Some(pca);
    }
    let fits: Vec<RegressionFit> = (0..n)
        .into_par_iter()
        .map(|i| pair_regression(m1.row_slice(i), m2.row_slice(i), pe.row_slice(i)))
        .collect::<Result<_, _>>()?;
    let a1: Vec<f64> = fits.iter().map(|f| f.alpha1).collect();
    let a2: Vec<f64> = fits.iter().map(|f| f.alpha2).collect();
    Ok(PairAnalysis {
        mean_r2: finite_mean(fits.iter().map(|f| f.r2)),
        mean_p: finite_mean(fits.iter().map(|f| f.p)),
        corr_alpha: pearson(&a1, &a2),
        fits,
        reduction,
    })
}
