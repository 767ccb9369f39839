#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

mod support;

use approx::assert_relative_eq;
use heartvec::container::{decode, encode};
use heartvec::gmm::GmmClassifier;
use heartvec::ivector::{posteriors_batch, residual};
use heartvec::reduce::pca::sample_covariance;
use heartvec::reduce::vae::VaeLayout;
use heartvec::svm::{dual_objective, median_heuristic};
use heartvec::{
    accumulate_stats, em_fit, extract_ivector, llr_score, pca_fit, pca_project, posterior_wi, svm_decision, svm_train,
    update_t, vae_encode, BaumWelchStats, EmConfig, FeatureMatrix, Gmm, PcaModel, SvmModel, SvmParams,
    TotalVariabilityModel, VaeModel,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn tv_model(seed: u64, k: usize, d: usize, r: usize) -> (Gmm, TotalVariabilityModel) {
    let mut g = support::rng(seed);
    let ubm = support::random_gmm(&mut g, k, d, 2.0);
    let t = DMatrix::from_fn(k * d, r, |_, _| 0.5 * support::normal(&mut g));
    let tv = TotalVariabilityModel::from_ubm(&ubm, t).unwrap();
    (ubm, tv)
}

fn two_blobs(seed: u64, n: usize, gap: f64) -> (FeatureMatrix, Vec<f64>) {
    let mut g = support::rng(seed);
    let mut rows = Vec::new();
    let mut t = Vec::new();
    for i in 0..n {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        rows.push(vec![s * gap + support::normal(&mut g), support::normal(&mut g)]);
        t.push(s);
    }
    (FeatureMatrix::from_rows(&rows).unwrap(), t)
}

#[test]
fn em_recovers_separated_components() {
    let mut g = support::rng(5);
    let means = [-6.0, 0.0, 6.0, 3.0];
    let data = support::sample_gmm_frames(&mut g, &[0.5, 0.5], &means, &[1.0; 4], 2, 2000);
    let fit = em_fit(&data, &EmConfig::new(2, 30, 1)).unwrap();
    let mut found: Vec<f64> = (0..2).map(|c| fit.model.mean(c)[0]).collect();
    found.sort_by(f64::total_cmp);
    assert!(
        (found[0] + 6.0).abs() < 0.2 && (found[1] - 6.0).abs() < 0.2,
        "{found:?}"
    );
    assert!(fit.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn llr_separates_classes() {
    let n = Gmm::new(vec![1.0], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let a = Gmm::new(vec![1.0], vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    assert!(llr_score(&n, &a, &[0.8, 1.2]).unwrap() > 0.0);
    assert_relative_eq!(llr_score(&n, &a, &[0.0, 0.0]).unwrap(), 0.0, epsilon = 1e-12);
    let c = GmmClassifier { normal: n, abnormal: a };
    let back: GmmClassifier = decode(&encode(&c)).unwrap();
    assert_eq!(back, c);
}

#[test]
fn stats_match_brute_force() {
    let mut g = support::rng(12);
    let ubm = support::random_gmm(&mut g, 4, 3, 1.5);
    let x = support::random_matrix(&mut g, 30, 3, 2.0);
    let s = accumulate_stats(&ubm, &x).unwrap();
    let (n, f) = support::brute_stats(&ubm, &x);
    for (a, b) in s.zero.iter().zip(&n) {
        assert_relative_eq!(a, b, epsilon = 1e-10);
    }
    for (a, b) in s.first.iter().zip(&f) {
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }
}

#[test]
fn empty_record_gives_prior_ivector() {
    let (_, tv) = tv_model(3, 3, 2, 4);
    let w = extract_ivector(&tv, &BaumWelchStats::zeros(3, 2)).unwrap();
    assert!(w.iter().all(|v| *v == 0.0));
    let p = posterior_wi(&tv, &BaumWelchStats::zeros(3, 2)).unwrap();
    assert_relative_eq!(p.covariance, DMatrix::identity(4, 4), epsilon = 1e-12);
}

#[test]
fn t_update_does_not_increase_residual() {
    let (ubm, tv) = tv_model(21, 3, 2, 2);
    let mut g = support::rng(22);
    let stats: Vec<BaumWelchStats> = (0..15)
        .map(|_| accumulate_stats(&ubm, &support::random_matrix(&mut g, 40, 2, 2.0)).unwrap())
        .collect();
    let post = posteriors_batch(&tv, &stats).unwrap();
    let before = residual(&tv, &stats, &post);
    let next = TotalVariabilityModel::from_ubm(&ubm, update_t(&tv, &stats, &post).unwrap()).unwrap();
    assert!(residual(&next, &stats, &post) <= before * (1.0 + 1e-9));
}

#[test]
fn pca_matches_jacobi_oracle() {
    let mut g = support::rng(31);
    let x = support::random_matrix(&mut g, 60, 5, 1.0);
    let rows: Vec<Vec<f64>> = x
        .to_rows()
        .into_iter()
        .map(|r| vec![r[0], 2.0 * r[0] + r[1], r[2] * 0.5, r[3] - r[0], r[4] * 3.0])
        .collect();
    let data = FeatureMatrix::from_rows(&rows).unwrap();
    let model = pca_fit(&data, 3).unwrap();
    let (_, cov) = sample_covariance(&data);
    let dense: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| cov[(i, j)]).collect()).collect();
    let (vals, vecs) = support::jacobi_eigen(&dense);
    for k in 0..3 {
        assert_relative_eq!(model.eigenvalues[k], vals[k], epsilon = 1e-9 * vals[0]);
        let dot: f64 = (0..5).map(|i| model.components[(i, k)] * vecs[k][i]).sum();
        assert_relative_eq!(dot.abs(), 1.0, epsilon = 1e-8);
    }
    let back: PcaModel = decode(&encode(&model)).unwrap();
    assert_eq!(back, model);
}

#[test]
fn svm_matches_dual_grid_oracle() {
    let (x, t) = two_blobs(41, 4, 0.7);
    let fit = svm_train(
        &x,
        &t,
        &SvmParams {
            sigma: Some(1.0),
            tolerance: 1e-6,
            ..Default::default()
        },
    )
    .unwrap();
    let got = dual_objective(&x, &t, &fit.alphas, 1.0);
    let want = support::svm_dual_grid_max(&x.to_rows(), &t, 1.0, 1.0);
    assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn svm_single_class_is_rejected() {
    let (x, _) = two_blobs(1, 6, 1.0);
    assert!(svm_train(&x, &[1.0; 6], &SvmParams::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gmm_posteriors_sum_to_one(seed in 0u64..1000, k in 1usize..6, d in 1usize..4) {
        let mut g = support::rng(seed);
        let gmm = support::random_gmm(&mut g, k, d, 3.0);
        let x: Vec<f64> = (0..d).map(|_| 10.0 * support::normal(&mut g)).collect();
        let p = gmm.posteriors(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gmm_log_pdf_matches_naive(seed in 0u64..1000, k in 1usize..5, d in 1usize..4) {
        let mut g = support::rng(seed);
        let gmm = support::random_gmm(&mut g, k, d, 1.0);
        let x: Vec<f64> = (0..d).map(|_| support::normal(&mut g)).collect();
        let want = heartvec::gmm::naive_pdf(&gmm, &x).ln();
        prop_assert!((gmm.log_pdf(&x).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn gmm_container_roundtrip(seed in 0u64..1000, k in 1usize..5, d in 1usize..4) {
        let gmm = support::random_gmm(&mut support::rng(seed), k, d, 2.0);
        let back: Gmm = decode(&encode(&gmm)).unwrap();
        prop_assert_eq!(back, gmm);
    }

    #[test]
    fn em_trace_is_monotone_and_weights_normalized(seed in 0u64..200, k in 1usize..4) {
        let mut g = support::rng(seed);
        let x = support::random_matrix(&mut g, 80, 2, 1.0);
        let fit = em_fit(&x, &EmConfig::new(k, 8, seed)).unwrap();
        prop_assert_eq!(fit.log_likelihood_trace.len(), 9);
        prop_assert!(fit.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0)));
        prop_assert!((fit.model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_sums_to_frame_count(seed in 0u64..1000, frames in 1usize..50) {
        let mut g = support::rng(seed);
        let ubm = support::random_gmm(&mut g, 4, 3, 2.0);
        let x = support::random_matrix(&mut g, frames, 3, 3.0);
        let s = accumulate_stats(&ubm, &x).unwrap();
        prop_assert!((s.total_occupancy() - frames as f64).abs() < 1e-9 * frames as f64);
    }

    #[test]
    fn ivector_posterior_matches_dense_formula(seed in 0u64..500) {
        let (ubm, tv) = tv_model(seed, 3, 2, 3);
        let mut g = support::rng(seed + 1);
        let x = support::random_matrix(&mut g, 25, 2, 2.0);
        let s = accumulate_stats(&ubm, &x).unwrap();
        let p = posterior_wi(&tv, &s).unwrap();
        let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..3).map(|j| tv.t[(i, j)]).collect()).collect();
        let (cov, mean) = support::dense_ivector_posterior(&rows, ubm.variances(), &s.zero, &s.first, 2);
        for i in 0..3 {
            prop_assert!((p.mean[i] - mean[i]).abs() < 1e-8 * (1.0 + mean[i].abs()));
            for j in 0..3 {
                prop_assert!((p.covariance[(i, j)] - cov[i][j]).abs() < 1e-9);
                prop_assert!((p.covariance[(i, j)] - p.covariance[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tv_container_roundtrip(seed in 0u64..500) {
        let (_, tv) = tv_model(seed, 2, 3, 2);
        let back: TotalVariabilityModel = decode(&encode(&tv)).unwrap();
        prop_assert_eq!(back, tv);
    }

    #[test]
    fn pca_components_orthonormal_and_projections_uncorrelated(seed in 0u64..500, l in 1usize..4) {
        let mut g = support::rng(seed);
        let x = support::random_matrix(&mut g, 40, 4, 1.0);
        let m = pca_fit(&x, l).unwrap();
        let gram = m.components.transpose() * &m.components;
        prop_assert!((gram - DMatrix::identity(l, l)).abs().max() < 1e-10);
        prop_assert!(m.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let proj: Vec<Vec<f64>> = x.iter_rows().map(|r| pca_project(&m, r).unwrap()).collect();
        let p = FeatureMatrix::from_rows(&proj).unwrap();
        let (mean, cov) = sample_covariance(&p);
        prop_assert!(mean.amax() < 1e-10);
        for i in 0..l {
            prop_assert!((cov[(i, i)] - m.eigenvalues[i]).abs() < 1e-9 * (1.0 + m.eigenvalues[0]));
            for j in 0..l {
                if i != j {
                    prop_assert!(cov[(i, j)].abs() < 1e-9 * (1.0 + m.eigenvalues[0]));
                }
            }
        }
    }

    #[test]
    fn vae_container_roundtrip_and_encode_deterministic(seed in 0u64..500) {
        let mut g = support::rng(seed);
        let m = VaeModel::random(VaeLayout { input: 3, hidden: 4, latent: 2 }, &mut g).unwrap();
        let back: VaeModel = decode(&encode(&m)).unwrap();
        let x = [0.1, -0.4, 2.0];
        prop_assert_eq!(vae_encode(&back, &x).unwrap(), vae_encode(&m, &x).unwrap());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn svm_dual_is_feasible(seed in 0u64..300, n in 4usize..24, c in 0.1f64..10.0) {
        let (x, t) = two_blobs(seed, n, 0.8);
        let fit = svm_train(&x, &t, &SvmParams { c, seed, ..Default::default() }).unwrap();
        prop_assert!(fit.alphas.iter().all(|a| (-1e-12..=c + 1e-12).contains(a)));
        let balance: f64 = fit.alphas.iter().zip(&t).map(|(a, y)| a * y).sum();
        prop_assert!(balance.abs() < 1e-9 * c.max(1.0) * n as f64);
    }

    #[test]
    fn svm_decision_is_permutation_invariant(seed in 0u64..300) {
        let (x, t) = two_blobs(seed, 12, 1.0);
        let fit = svm_train(&x, &t, &SvmParams::default()).unwrap();
        let mut perm: Vec<usize> = (0..fit.model.support_vectors.rows()).collect();
        let mut g = support::rng(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, g.random_range(0..=i));
        }
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| fit.model.support_vectors.row(i).to_vec()).collect();
        let shuffled = SvmModel {
            support_vectors: FeatureMatrix::from_rows(&rows).unwrap(),
            dual_coeffs: perm.iter().map(|&i| fit.model.dual_coeffs[i]).collect(),
            ..fit.model.clone()
        };
        let q = [0.3, -0.2];
        let (a, b) = (svm_decision(&fit.model, &q).unwrap(), svm_decision(&shuffled, &q).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        let back: SvmModel = decode(&encode(&fit.model)).unwrap();
        prop_assert_eq!(back, fit.model);
    }

    #[test]
    fn median_heuristic_scales(seed in 0u64..300, s in 0.1f64..10.0) {
        let x = support::random_matrix(&mut support::rng(seed), 9, 3, 1.0);
        let y = FeatureMatrix::new(9, 3, x.as_slice().iter().map(|v| v * s).collect()).unwrap();
        prop_assert!((median_heuristic(&y) - s * median_heuristic(&x)).abs() < 1e-9 * s);
    }
}
