//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::f64::consts::PI;

use heartvec::gmm::naive_pdf;
use heartvec::{FeatureMatrix, Gmm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `|Σ_n x[n] e^{-2πikn/N}|` for `k = 0..=N/2`, zero-padding `x` to `N`.
pub fn naive_dft_magnitudes(x: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Type-II DCT with 1-based filter index, coefficients `1..=m`.
pub fn naive_dct(x: &[f64], m: usize) -> Vec<f64> {
    let l = x.len() as f64;
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let mi = (i + 1) as f64;
        for (j0, v) in x.iter().enumerate() {
            let j = (j0 + 1) as f64;
            *o += v * (PI * mi * (j - 0.5) / l).cos();
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues descending and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (vals, vecs)
}

/// Dense `n × n` inverse by Gauss–Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

/// Random diagonal GMM with weights bounded away from zero.
pub fn random_gmm(rng: &mut impl Rng, k: usize, d: usize, spread: f64) -> Gmm {
    let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let means = (0..k * d).map(|_| spread * normal(rng)).collect();
    let vars = (0..k * d).map(|_| rng.random_range(0.3..2.0)).collect();
    Gmm::new(w, means, vars).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> FeatureMatrix {
    FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| scale * normal(rng)).collect()).unwrap()
}

/// Zero- and centered first-order statistics by direct double loop over
/// frames and components, with posteriors from linear-domain densities.
pub fn brute_stats(ubm: &Gmm, x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let (k, d) = (ubm.components(), ubm.dim());
    let mut n = vec![0.0; k];
    let mut f = vec![0.0; k * d];
    for t in 0..x.rows() {
        let xt = x.row(t);
        let total = naive_pdf(ubm, xt);
        for c in 0..k {
            let single = Gmm::new(vec![1.0], ubm.mean(c).to_vec(), ubm.variance(c).to_vec()).unwrap();
            let gamma = ubm.weights()[c] * naive_pdf(&single, xt) / total;
            n[c] += gamma;
            for j in 0..d {
                f[c * d + j] += gamma * (xt[j] - ubm.mean(c)[j]);
            }
        }
    }
    (n, f)
}

/// Posterior covariance and mean of `w` from dense formulas.
/// `t` is `CD × R` as rows, `vars` the stacked diagonal covariances.
pub fn dense_ivector_posterior(
    t: &[Vec<f64>],
    vars: &[f64],
    zero: &[f64],
    first: &[f64],
    d: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let r = t[0].len();
    let mut prec: Vec<Vec<f64>> = (0..r)
        .map(|i| (0..r).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut lin = vec![0.0; r];
    for (row, (tr, &v)) in t.iter().zip(vars).enumerate() {
        let n = zero[row / d];
        for i in 0..r {
            lin[i] += tr[i] / v * first[row];
            for j in 0..r {
                prec[i][j] += n * tr[i] * tr[j] / v;
            }
        }
    }
    let cov = invert(&prec);
    let mean = (0..r).map(|i| (0..r).map(|j| cov[i][j] * lin[j]).sum()).collect();
    (cov, mean)
}

pub fn rbf(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn dual_value(x: &[Vec<f64>], t: &[f64], a: &[f64], sigma: f64) -> f64 {
    let n = x.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += a[i] * a[j] * t[i] * t[j] * rbf(&x[i], &x[j], sigma);
        }
    }
    a.iter().sum::<f64>() - 0.5 * q
}

/// Maximizes the SVM dual by grid search over the first `n - 1` multipliers
/// (the last follows from `Σ a t = 0`), zooming in around the best cell.
pub fn svm_dual_grid_max(x: &[Vec<f64>], t: &[f64], c: f64, sigma: f64) -> f64 {
    let n = x.len();
    let free = n - 1;
    let steps = 20usize;
    let mut lo = vec![0.0; free];
    let mut hi = vec![c; free];
    let mut best = f64::NEG_INFINITY;
    let mut best_a = vec![0.0; free];
    for _round in 0..30 {
        let mut idx = vec![0usize; free];
        loop {
            let a: Vec<f64> = (0..free)
                .map(|i| lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / steps as f64)
                .collect();
            let s: f64 = a.iter().zip(t).map(|(ai, ti)| ai * ti).sum();
            let last = -s * t[n - 1];
            if (-1e-12..=c + 1e-12).contains(&last) {
                let mut full = a.clone();
                full.push(last.clamp(0.0, c));
                let v = dual_value(x, t, &full, sigma);
                if v > best {
                    best = v;
                    best_a = a;
                }
            }
            let mut k = 0;
            while k < free {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == free {
                break;
            }
        }
        for i in 0..free {
            let w = (hi[i] - lo[i]) / 4.0;
            lo[i] = (best_a[i] - w).max(0.0);
            hi[i] = (best_a[i] + w).min(c);
        }
    }
    best
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Cosine between `T` and `T*` after the best orthogonal rotation of `T`'s
/// latent axes (Procrustes), since `T` is identifiable only up to rotation.
pub fn aligned_cosine(t: &nalgebra::DMatrix<f64>, t_star: &nalgebra::DMatrix<f64>) -> f64 {
    let m = t.transpose() * t_star;
    let svd = m.svd(true, true);
    let q = svd.u.unwrap() * svd.v_t.unwrap();
    let aligned = t * q;
    aligned.dot(t_star) / (aligned.norm() * t_star.norm())
}

/// Sample of `n` frames from a diagonal GMM with the given component means.
pub fn sample_gmm_frames(
    rng: &mut impl Rng,
    weights: &[f64],
    means: &[f64],
    vars: &[f64],
    d: usize,
    n: usize,
) -> FeatureMatrix {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        for j in 0..d {
            data.push(means[c * d + j] + vars[c * d + j].sqrt() * normal(rng));
        }
    }
    FeatureMatrix::new(n, d, data).unwrap()
}
