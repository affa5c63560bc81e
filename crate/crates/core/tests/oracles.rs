mod support;

use nalgebra::{DMatrix, SymmetricEigen};
use odor_core::analyze::{f_pvalue, fit_all_pairs, fit_pca, reduce_dim};
use odor_core::eval::{logreg_fit, logreg_objective, LogRegConfig};
use odor_core::fingerprint::BitFingerprint;
use odor_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use support::criteria::{f_tail_quadrature, StubEmbedder};

/// Optimum of the same objective from an L-BFGS-B run (scipy), frozen.
const LOGREG_OPTIMUM: f64 = 0.779927503318111;

#[test]
fn logreg_reaches_reference_optimum() {
    let bits: [&[usize]; 12] = [
        &[0, 3, 7],
        &[1, 3],
        &[2, 5, 9],
        &[0, 1, 2],
        &[4, 7, 9],
        &[3, 5],
        &[6, 8],
        &[0, 9],
        &[2, 4, 6],
        &[1, 7, 8],
        &[5, 6, 9],
        &[0, 2, 8],
    ];
    let y: [[f64; 2]; 12] = [
        [1., 0.],
        [1., 0.],
        [0., 1.],
        [1., 1.],
        [0., 1.],
        [1., 0.],
        [0., 0.],
        [1., 1.],
        [0., 1.],
        [0., 0.],
        [0., 1.],
        [1., 0.],
    ];
    let features: Vec<BitFingerprint> = bits
        .iter()
        .map(|b| {
            let mut fp = BitFingerprint::zeros(64, 2).unwrap();
            b.iter().for_each(|&i| fp.set(i));
            fp
        })
        .collect();
    let targets = Tensor::from_vec(vec![12, 2], y.iter().flatten().copied().collect());
    let cfg = LogRegConfig {
        l2: 0.05,
        max_steps: 200_000,
        tol: 1e-10,
        ..Default::default()
    };
    let model = logreg_fit(&features, &targets, &cfg).unwrap();
    let obj = logreg_objective(&model, &features, &targets);
    assert!((obj - LOGREG_OPTIMUM).abs() < 1e-4, "{obj}");
}

fn random_matrix(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    // correlated columns so the spectrum is well separated
    let base: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut data = base.clone();
    for i in 0..n {
        for j in 0..d {
            data[i * d + j] = base[i * d + j] * (d - j) as f64 + 0.5 * base[i * d];
        }
    }
    Tensor::from_vec(vec![n, d], data)
}

#[test]
fn pca_matches_symmetric_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_matrix(&mut rng, 20, 10);
    let k = 4;
    let pca = fit_pca(&x, k).unwrap();

    let (n, d) = (20, 10);
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (c, &o) in order.iter().take(k).enumerate() {
        assert!((pca.eigenvalues[c] - eig.eigenvalues[o]).abs() < 1e-6 * eig.eigenvalues[o].abs().max(1.0));
        let v = eig.eigenvectors.column(o);
        let dotp: f64 = (0..d).map(|j| v[j] * pca.components.get(c, j)).sum();
        // equal up to sign
        let sign = dotp.signum();
        for j in 0..d {
            assert!(
                (pca.components.get(c, j) - sign * v[j]).abs() < 1e-6,
                "component {c} entry {j}"
            );
        }
    }

    // projected coordinates are decorrelated
    let (z, _) = reduce_dim(&x, k).unwrap();
    for a in 0..k {
        for b in 0..a {
            let cov: f64 = (0..n).map(|i| z.get(i, a) * z.get(i, b)).sum::<f64>() / (n - 1) as f64;
            assert!(cov.abs() < 1e-6, "{a},{b}: {cov}");
        }
    }
}

#[test]
fn f_pvalue_agrees_with_reference_distribution() {
    for &(f, d1, d2) in &[(4.0, 2.0, 40.0), (1.3, 5.0, 12.0), (0.2, 3.0, 7.0), (9.0, 2.0, 62.0)] {
        let reference = 1.0 - FisherSnedecor::new(d1, d2).unwrap().cdf(f);
        assert!((f_pvalue(f, d1, d2) - reference).abs() < 1e-9, "({f}, {d1}, {d2})");
        assert!((f_pvalue(f, d1, d2) - f_tail_quadrature(f, d1, d2)).abs() < 1e-6);
    }
}

fn stub_pairs() -> Vec<odor_core::gnn::GraphInput> {
    use odor_core::featurize::featurize;
    use odor_core::smiles::parse_smiles;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pool = odor_core::synth::synth_molecules(60, 0.4, &mut rng).unwrap();
    let graphs: Vec<_> = pool.iter().map(|s| featurize(&parse_smiles(s).unwrap())).collect();
    (0..30)
        .map(|i| odor_core::gnn::GraphInput::pair(graphs[2 * i].clone(), graphs[2 * i + 1].clone()).unwrap())
        .collect()
}

#[test]
fn first_molecule_stub_gives_unit_alpha1() {
    let stub = StubEmbedder {
        dim: 16,
        w1: 1.0,
        w2: 0.0,
        unrelated: false,
    };
    let a = fit_all_pairs(&stub, &stub_pairs()).unwrap();
    for f in &a.fits {
        assert!((f.alpha1 - 1.0).abs() < 1e-9 && f.alpha2.abs() < 1e-9);
    }
}

#[test]
fn unrelated_stub_explains_little() {
    let stub = StubEmbedder {
        dim: 64,
        w1: 0.0,
        w2: 0.0,
        unrelated: true,
    };
    let a = fit_all_pairs(&stub, &stub_pairs()).unwrap();
    assert!(a.mean_r2 < 0.15, "{}", a.mean_r2);
    assert!(a.corr_alpha.unwrap().abs() < 0.5);
    assert!(a.mean_p > 0.1, "{}", a.mean_p);
}
