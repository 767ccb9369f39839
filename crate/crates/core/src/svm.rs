//! Two-class RBF-kernel SVM trained with sequential minimal optimization.
//!
//! Decision function: `y(x) = Σ_n a_n t_n k(x_n, x) + b` with
//! `k(x, x') = exp(-‖x - x'‖² / 2σ²)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{expect_dims, expect_len, ContainerModel, ModelKind, PayloadReader};
use crate::error::{Error, Result};
use crate::mfcc::FeatureMatrix;

pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("kernel width {sigma} must be positive")));
    }
    if x.len() != y.len() {
        return Err(Error::dims(x.len(), y.len()));
    }
    Ok(rbf(x, y, sigma))
}

fn rbf(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// `m × D`.
    pub support_vectors: FeatureMatrix,
    /// `a_n t_n` per support vector.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub sigma: f64,
    pub c: f64,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.cols()
    }
}

pub fn svm_decision(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if model.dual_coeffs.is_empty() && model.dim() == 0 {
        return Ok(model.bias);
    }
    if x.len() != model.dim() {
        return Err(Error::dims(model.dim(), x.len()));
    }
    Ok(model
        .support_vectors
        .iter_rows()
        .zip(&model.dual_coeffs)
        .map(|(sv, a)| a * rbf(sv, x, model.sigma))
        .sum::<f64>()
        + model.bias)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// `None` selects the median pairwise distance of the training data.
    pub sigma: Option<f64>,
    pub tolerance: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            sigma: None,
            tolerance: 1e-3,
            max_passes: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    /// Full dual vector `a_n` over the training set.
    pub alphas: Vec<f64>,
    pub converged: bool,
    pub passes: usize,
}

/// Median of pairwise Euclidean distances; 1.0 when all points coincide.
pub fn median_heuristic(x: &FeatureMatrix) -> f64 {
    let n = x.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = if d.len() % 2 == 1 {
        d[d.len() / 2]
    } else {
        0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
    };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// `Σ a_n - ½ Σ_ij a_i a_j t_i t_j k(x_i, x_j)`.
pub fn dual_objective(x: &FeatureMatrix, t: &[f64], alphas: &[f64], sigma: f64) -> f64 {
    let n = x.rows();
    let mut quad = 0.0;
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alphas[i] * alphas[j] * t[i] * t[j] * rbf(x.row(i), x.row(j), sigma);
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

struct Smo<'a> {
    kernel: Vec<f64>,
    n: usize,
    t: &'a [f64],
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    /// `E_i = y(x_i) - t_i`
    errors: Vec<f64>,
    bias: f64,
    rng: ChaCha8Rng,
}

const ALPHA_EPS: f64 = 1e-12;

impl Smo<'_> {
    fn k(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.n + j]
    }

    fn is_free(&self, i: usize) -> bool {
        self.alpha[i] > ALPHA_EPS && self.alpha[i] < self.c - ALPHA_EPS
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.t[i1], self.t[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;
        let (lo, hi) = if s < 0.0 {
            ((a2 - a1).max(0.0), (self.c + a2 - a1).min(self.c))
        } else {
            ((a1 + a2 - self.c).max(0.0), (a1 + a2).min(self.c))
        };
        if hi - lo < ALPHA_EPS {
            return false;
        }
        let (k11, k12, k22) = (self.k(i1, i1), self.k(i1, i2), self.k(i2, i2));
        let eta = k11 + k22 - 2.0 * k12;
        let mut new_a2 = if eta > 1e-12 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // flat direction: move to whichever end has the larger objective
            let f1 = y1 * e1 - a1 * k11 - s * a2 * k12;
            let f2 = y2 * e2 - s * a1 * k12 - a2 * k22;
            let obj = |a2n: f64| {
                let a1n = a1 + s * (a2 - a2n);
                -(a1n * f1 + a2n * f2 + 0.5 * a1n * a1n * k11 + 0.5 * a2n * a2n * k22 + s * a1n * a2n * k12)
            };
            let (ol, oh) = (obj(lo), obj(hi));
            if ol > oh + 1e-12 {
                lo
            } else if oh > ol + 1e-12 {
                hi
            } else {
                a2
            }
        };
        if new_a2 < ALPHA_EPS {
            new_a2 = 0.0;
        } else if new_a2 > self.c - ALPHA_EPS {
            new_a2 = self.c;
        }
        if (new_a2 - a2).abs() < ALPHA_EPS * (new_a2 + a2 + ALPHA_EPS) {
            return false;
        }
        let mut new_a1 = a1 + s * (a2 - new_a2);
        if new_a1 < ALPHA_EPS {
            new_a1 = 0.0;
        } else if new_a1 > self.c - ALPHA_EPS {
            new_a1 = self.c;
        }

        let d1 = y1 * (new_a1 - a1);
        let d2 = y2 * (new_a2 - a2);
        let b1 = self.bias - e1 - d1 * k11 - d2 * k12;
        let b2 = self.bias - e2 - d1 * k12 - d2 * k22;
        let free = |a: f64| a > 0.0 && a < self.c;
        let new_bias = if free(new_a1) {
            b1
        } else if free(new_a2) {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = new_bias - self.bias;
        for k in 0..self.n {
            self.errors[k] += d1 * self.k(i1, k) + d2 * self.k(i2, k) + db;
        }
        self.alpha[i1] = new_a1;
        self.alpha[i2] = new_a2;
        self.bias = new_bias;
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        let r2 = self.errors[i2] * self.t[i2];
        let a2 = self.alpha[i2];
        if !((r2 < -self.tol && a2 < self.c) || (r2 > self.tol && a2 > 0.0)) {
            return false;
        }
        // second choice: maximize |E1 - E2| over free points
        let e2 = self.errors[i2];
        let best = (0..self.n).filter(|&i| i != i2 && self.is_free(i)).max_by(|&a, &b| {
            (self.errors[a] - e2)
                .abs()
                .total_cmp(&(self.errors[b] - e2).abs())
                .then(b.cmp(&a))
        });
        if let Some(i1) = best {
            if self.take_step(i1, i2) {
                return true;
            }
        }
        let start = self.rng.random_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if self.is_free(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        let start = self.rng.random_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }

    /// Bias from the free support vectors, or the midpoint of the feasible
    /// interval when none are free.
    fn final_bias(&self) -> f64 {
        let f_wo_b = |i: usize| self.errors[i] + self.t[i] - self.bias;
        let free: Vec<usize> = (0..self.n).filter(|&i| self.is_free(i)).collect();
        if !free.is_empty() {
            return free.iter().map(|&i| self.t[i] - f_wo_b(i)).sum::<f64>() / free.len() as f64;
        }
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.n {
            let g = self.t[i] - f_wo_b(i);
            let at_upper = self.alpha[i] >= self.c;
            // t·y ≥ 1 for a = 0, t·y ≤ 1 for a = C
            if (self.t[i] > 0.0) != at_upper {
                lo = lo.max(g);
            } else {
                hi = hi.min(g);
            }
        }
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            _ => self.bias,
        }
    }
}

pub fn svm_train(x: &FeatureMatrix, t: &[f64], params: &SvmParams) -> Result<SvmFit> {
    let n = x.rows();
    if n != t.len() {
        return Err(Error::dims(n, t.len()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("SVM needs at least two training points".into()));
    }
    if t.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidInput("SVM labels must be +1 or -1".into()));
    }
    if !(t.contains(&1.0) && t.contains(&-1.0)) {
        return Err(Error::InvalidInput("SVM training data has a single class".into()));
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "box constraint {} must be positive",
            params.c
        )));
    }
    if !(params.tolerance > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidInput("SVM data contains non-finite values".into()));
    }
    let sigma = params.sigma.unwrap_or_else(|| median_heuristic(x));
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("kernel width {sigma} must be positive")));
    }

    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        kernel[i * n + i] = 1.0;
        for j in i + 1..n {
            let k = rbf(x.row(i), x.row(j), sigma);
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }
    let mut smo = Smo {
        kernel,
        n,
        t,
        c: params.c,
        tol: params.tolerance,
        alpha: vec![0.0; n],
        errors: t.iter().map(|v| -v).collect(),
        bias: 0.0,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
    };

    let mut examine_all = true;
    let mut passes = 0;
    let mut converged = false;
    while passes < params.max_passes {
        passes += 1;
        let mut changed = 0;
        for i in 0..n {
            if (examine_all || smo.is_free(i)) && smo.examine(i) {
                changed += 1;
            }
        }
        if examine_all {
            if changed == 0 {
                converged = true;
                break;
            }
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
    }
    if !converged {
        log::warn!("svm_train: SMO did not converge within {} passes", params.max_passes);
    }

    let bias = smo.final_bias();
    let support: Vec<usize> = (0..n).filter(|&i| smo.alpha[i] > 0.0).collect();
    let rows: Vec<&[f64]> = support.iter().map(|&i| x.row(i)).collect();
    let support_vectors = if rows.is_empty() {
        FeatureMatrix::new(0, x.cols(), Vec::new())?
    } else {
        FeatureMatrix::from_rows(&rows)?
    };
    let model = SvmModel {
        support_vectors,
        dual_coeffs: support.iter().map(|&i| smo.alpha[i] * t[i]).collect(),
        bias,
        sigma,
        c: params.c,
    };
    Ok(SvmFit {
        model,
        alphas: smo.alpha,
        converged,
        passes,
    })
}

impl ContainerModel for SvmModel {
    const KIND: ModelKind = ModelKind::Svm;

    fn dims(&self) -> Vec<u64> {
        vec![self.dual_coeffs.len() as u64, self.dim() as u64]
    }

    fn payload(&self) -> Vec<f64> {
        let mut p = vec![self.sigma, self.c, self.bias];
        p.extend_from_slice(&self.dual_coeffs);
        p.extend_from_slice(self.support_vectors.as_slice());
        p
    }

    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self> {
        let d = expect_dims(dims, 2, "svm")?;
        let (m, dim) = (d[0], d[1]);
        expect_len(&payload, 3 + m + m * dim, "svm")?;
        let mut r = PayloadReader::new(payload);
        let sigma = r.scalar();
        let c = r.scalar();
        let bias = r.scalar();
        let dual_coeffs = r.take(m);
        let support_vectors = FeatureMatrix::new(m, dim, r.take(m * dim))?;
        Ok(SvmModel {
            support_vectors,
            dual_coeffs,
            bias,
            sigma,
            c,
        })
    }
}
