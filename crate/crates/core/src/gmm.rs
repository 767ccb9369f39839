//! Diagonal-covariance Gaussian mixtures: density, responsibilities, EM
//! training and log-likelihood-ratio scoring.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{expect_dims, expect_len, ContainerModel, ModelKind, PayloadReader};
use crate::error::{Error, Result};
use crate::mfcc::FeatureMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const KMEANS_STEPS: usize = 5;
/// Rows per E-step work unit; fixed so sums are reduced in the same order
/// whatever the thread count.
const CHUNK_ROWS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    /// `ln φ_i - ½ (D ln 2π + Σ_d ln σ²_id)` per component.
    log_consts: Vec<f64>,
}

impl Gmm {
    /// `means` and `variances` are row-major `K × D`.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        if !means.len().is_multiple_of(k) || means.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} mean values do not split into {k} components",
                means.len()
            )));
        }
        let dim = means.len() / k;
        if variances.len() != means.len() {
            return Err(Error::dims(means.len(), variances.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}")));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("variances must be positive".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("means must be finite".into()));
        }
        Ok(Self::from_parts_unchecked(dim, weights, means, variances))
    }

    fn from_parts_unchecked(dim: usize, weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Self {
        let log_consts = weights
            .iter()
            .zip(variances.chunks_exact(dim))
            .map(|(w, v)| w.ln() - 0.5 * (dim as f64 * LN_2PI + v.iter().map(|s| s.ln()).sum::<f64>()))
            .collect();
        Self {
            dim,
            weights,
            means,
            variances,
            log_consts,
        }
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn variance(&self, c: usize) -> &[f64] {
        &self.variances[c * self.dim..(c + 1) * self.dim]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dims(self.dim, x.len()));
        }
        Ok(())
    }

    /// Writes `ln φ_c + ln N(x | μ_c, Σ_c)` into `out` and returns their log-sum-exp.
    fn joint_log_densities(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut max = f64::NEG_INFINITY;
        for (c, slot) in out.iter_mut().enumerate() {
            let mu = &self.means[c * d..(c + 1) * d];
            let var = &self.variances[c * d..(c + 1) * d];
            let mahal: f64 = x
                .iter()
                .zip(mu)
                .zip(var)
                .map(|((xi, m), v)| (xi - m) * (xi - m) / v)
                .sum();
            *slot = self.log_consts[c] - 0.5 * mahal;
            max = max.max(*slot);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + out.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut buf = vec![0.0; self.components()];
        Ok(self.joint_log_densities(x, &mut buf))
    }

    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut buf = vec![0.0; self.components()];
        let total = self.joint_log_densities(x, &mut buf);
        responsibilities_in_place(&mut buf, total);
        Ok(buf)
    }

    /// Mean log-likelihood per row.
    pub fn average_log_likelihood(&self, data: &FeatureMatrix) -> Result<f64> {
        if data.cols() != self.dim {
            return Err(Error::dims(self.dim, data.cols()));
        }
        let mut buf = vec![0.0; self.components()];
        let sum: f64 = data.iter_rows().map(|x| self.joint_log_densities(x, &mut buf)).sum();
        Ok(sum / data.rows().max(1) as f64)
    }
}

/// Turns joint log densities into normalized responsibilities.
fn responsibilities_in_place(buf: &mut [f64], total: f64) {
    if total == f64::NEG_INFINITY {
        let u = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|g| *g = u);
        return;
    }
    for g in buf.iter_mut() {
        *g = (*g - total).exp();
    }
    let s: f64 = buf.iter().sum();
    buf.iter_mut().for_each(|g| *g /= s);
}

pub(crate) fn for_each_posterior(gmm: &Gmm, data: &FeatureMatrix, mut f: impl FnMut(usize, &[f64], &[f64])) {
    let mut buf = vec![0.0; gmm.components()];
    for (t, x) in data.iter_rows().enumerate() {
        let total = gmm.joint_log_densities(x, &mut buf);
        responsibilities_in_place(&mut buf, total);
        f(t, x, &buf);
    }
}

impl ContainerModel for Gmm {
    const KIND: ModelKind = ModelKind::Gmm;

    fn dims(&self) -> Vec<u64> {
        vec![self.components() as u64, self.dim as u64]
    }

    fn payload(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.means);
        p.extend_from_slice(&self.variances);
        p
    }

    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self> {
        let d = expect_dims(dims, 2, "gmm")?;
        let (k, dim) = (d[0], d[1]);
        expect_len(&payload, k + 2 * k * dim, "gmm")?;
        let mut r = PayloadReader::new(payload);
        let weights = r.take(k);
        let means = r.take(k * dim);
        let variances = r.take(k * dim);
        Gmm::new(weights, means, variances)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub components: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor: f64,
}

impl EmConfig {
    pub fn new(components: usize, iterations: usize, seed: u64) -> Self {
        Self {
            components,
            iterations,
            seed,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: Gmm,
    /// Mean log-likelihood of the data before each iteration, then once more
    /// for the final model (`iterations + 1` entries).
    pub log_likelihood_trace: Vec<f64>,
    /// Components re-seeded after their responsibility mass vanished.
    pub reinitialized: usize,
}

struct Moments {
    log_likelihood: f64,
    mass: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            mass: vec![0.0; k],
            sum: vec![0.0; k * d],
            sum_sq: vec![0.0; k * d],
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.log_likelihood += other.log_likelihood;
        add_into(&mut self.mass, &other.mass);
        add_into(&mut self.sum, &other.sum);
        add_into(&mut self.sum_sq, &other.sum_sq);
    }
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    acc.iter_mut().zip(other).for_each(|(a, b)| *a += b);
}

/// E-step over pre-centered rows.
fn expectation(model: &Gmm, data: &[f64], dim: usize) -> Moments {
    let k = model.components();
    let partials: Vec<Moments> = data
        .par_chunks(CHUNK_ROWS * dim)
        .map(|chunk| {
            let mut m = Moments::zeros(k, dim);
            let mut buf = vec![0.0; k];
            for x in chunk.chunks_exact(dim) {
                let total = model.joint_log_densities(x, &mut buf);
                m.log_likelihood += total;
                responsibilities_in_place(&mut buf, total);
                for (c, &g) in buf.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    m.mass[c] += g;
                    let s = &mut m.sum[c * dim..(c + 1) * dim];
                    let q = &mut m.sum_sq[c * dim..(c + 1) * dim];
                    for ((si, qi), xi) in s.iter_mut().zip(q.iter_mut()).zip(x) {
                        *si += g * xi;
                        *qi += g * xi * xi;
                    }
                }
            }
            m
        })
        .collect();
    let mut total = Moments::zeros(k, dim);
    for p in &partials {
        total.merge(p);
    }
    total
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd steps. Returns centers and
/// hard assignments.
fn kmeans_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>) {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_distance(row(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = centers.len() / dim;
        centers.extend_from_slice(row(pick));
        let new_center = &centers[c * dim..];
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(row(i), new_center));
        }
    }

    let mut assign = vec![0usize; n];
    for step in 0..=KMEANS_STEPS {
        assign.par_iter_mut().enumerate().for_each(|(i, a)| {
            let x = row(i);
            let mut best = (f64::INFINITY, 0);
            for c in 0..k {
                let d = squared_distance(x, &centers[c * dim..(c + 1) * dim]);
                if d < best.0 {
                    best = (d, c);
                }
            }
            *a = best.1;
        });
        if step == KMEANS_STEPS {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            add_into(&mut sums[a * dim..(a + 1) * dim], row(i));
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    (centers, assign)
}

/// Fits a diagonal GMM by EM after k-means++/Lloyd initialization.
pub fn em_fit(data: &FeatureMatrix, config: &EmConfig) -> Result<EmFit> {
    let k = config.components;
    let n = data.rows();
    let dim = data.cols();
    if k == 0 {
        return Err(Error::InvalidConfig("mixture needs at least one component".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "{k} components requested from {n} data points"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("data has no columns".into()));
    }
    if !data.is_finite() {
        return Err(Error::InvalidInput("data contains non-finite values".into()));
    }
    if !(config.variance_floor > 0.0) {
        return Err(Error::InvalidConfig("variance floor must be positive".into()));
    }

    // Work on globally centered data to keep the one-pass variance accurate.
    let mut offset = vec![0.0; dim];
    for x in data.iter_rows() {
        add_into(&mut offset, x);
    }
    offset.iter_mut().for_each(|o| *o /= n as f64);
    let centered: Vec<f64> = data
        .iter_rows()
        .flat_map(|x| x.iter().zip(&offset).map(|(v, o)| v - o))
        .collect();
    let mut global_var = vec![0.0; dim];
    for x in centered.chunks_exact(dim) {
        for (g, v) in global_var.iter_mut().zip(x) {
            *g += v * v;
        }
    }
    global_var.iter_mut().for_each(|g| *g /= n as f64);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|g| (config.variance_floor * g).max(f64::MIN_POSITIVE.sqrt()))
        .collect();
    let fallback_var: Vec<f64> = global_var.iter().zip(&floor).map(|(g, f)| g.max(*f)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (centers, assign) = kmeans_init(&centered, dim, k, &mut rng);

    let mut counts = vec![0usize; k];
    let mut sq = vec![0.0; k * dim];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        let x = &centered[i * dim..(i + 1) * dim];
        for j in 0..dim {
            let d = x[j] - centers[a * dim + j];
            sq[a * dim + j] += d * d;
        }
    }
    let mut weights: Vec<f64> = counts.iter().map(|&c| c.max(1) as f64).collect();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);
    let mut variances = vec![0.0; k * dim];
    for c in 0..k {
        for j in 0..dim {
            variances[c * dim + j] = if counts[c] >= 2 {
                (sq[c * dim + j] / counts[c] as f64).max(floor[j])
            } else {
                fallback_var[j]
            };
        }
    }
    let mut model = Gmm::from_parts_unchecked(dim, weights, centers, variances);

    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut reinitialized = 0;
    let degenerate_mass = 1e-8 * n as f64;
    for _ in 0..config.iterations {
        let stats = expectation(&model, &centered, dim);
        trace.push(stats.log_likelihood / n as f64);

        let mut weights = vec![0.0; k];
        let mut means = vec![0.0; k * dim];
        let mut variances = vec![0.0; k * dim];
        for c in 0..k {
            let mass = stats.mass[c];
            if mass < degenerate_mass {
                reinitialized += 1;
                let pick = rng.random_range(0..n);
                means[c * dim..(c + 1) * dim].copy_from_slice(&centered[pick * dim..(pick + 1) * dim]);
                variances[c * dim..(c + 1) * dim].copy_from_slice(&fallback_var);
                weights[c] = 1.0 / n as f64;
                continue;
            }
            weights[c] = mass / n as f64;
            for j in 0..dim {
                let mu = stats.sum[c * dim + j] / mass;
                let var = stats.sum_sq[c * dim + j] / mass - mu * mu;
                means[c * dim + j] = mu;
                variances[c * dim + j] = var.max(floor[j]);
            }
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        model = Gmm::from_parts_unchecked(dim, weights, means, variances);
    }
    let final_stats = expectation(&model, &centered, dim);
    trace.push(final_stats.log_likelihood / n as f64);
    if reinitialized > 0 {
        log::warn!("em_fit: re-seeded {reinitialized} degenerate component(s)");
    }

    // Undo the centering.
    let Gmm {
        weights,
        mut means,
        variances,
        ..
    } = model;
    for mu in means.chunks_exact_mut(dim) {
        add_into(mu, &offset);
    }
    let model = Gmm::new(weights, means, variances)?;
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("EM log-likelihood became non-finite".into()));
    }
    Ok(EmFit {
        model,
        log_likelihood_trace: trace,
        reinitialized,
    })
}

/// Independent EM fits for the normal and abnormal classes (same seed).
pub fn train_class_gmms(normal: &FeatureMatrix, abnormal: &FeatureMatrix, config: &EmConfig) -> Result<(EmFit, EmFit)> {
    if normal.rows() == 0 || abnormal.rows() == 0 {
        return Err(Error::InvalidInput("both classes need training vectors".into()));
    }
    if normal.cols() != abnormal.cols() {
        return Err(Error::dims(normal.cols(), abnormal.cols()));
    }
    Ok((em_fit(normal, config)?, em_fit(abnormal, config)?))
}

/// `ln p(x | normal) - ln p(x | abnormal)`; positive favors normal.
pub fn llr_score(normal: &Gmm, abnormal: &Gmm, x: &[f64]) -> Result<f64> {
    Ok(normal.log_pdf(x)? - abnormal.log_pdf(x)?)
}

/// Normal/abnormal model pair scored by log-likelihood ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmClassifier {
    pub normal: Gmm,
    pub abnormal: Gmm,
}

impl GmmClassifier {
    pub fn dim(&self) -> usize {
        self.normal.dim()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        llr_score(&self.normal, &self.abnormal, x)
    }
}

impl ContainerModel for GmmClassifier {
    const KIND: ModelKind = ModelKind::GmmClassifier;

    fn dims(&self) -> Vec<u64> {
        vec![
            self.normal.components() as u64,
            self.abnormal.components() as u64,
            self.normal.dim() as u64,
        ]
    }

    fn payload(&self) -> Vec<f64> {
        let mut p = self.normal.payload();
        p.extend(self.abnormal.payload());
        p
    }

    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self> {
        let d = expect_dims(dims, 3, "gmm classifier")?;
        let (kn, ka, dim) = (d[0], d[1], d[2]);
        let len_n = kn + 2 * kn * dim;
        expect_len(&payload, len_n + ka + 2 * ka * dim, "gmm classifier")?;
        let mut r = PayloadReader::new(payload);
        let normal = Gmm::from_parts(&[kn as u64, dim as u64], r.take(len_n))?;
        let abnormal = Gmm::from_parts(&[ka as u64, dim as u64], r.take(ka + 2 * ka * dim))?;
        Ok(Self { normal, abnormal })
    }
}

/// Naive linear-domain density, used as a cross-check.
pub fn naive_pdf(model: &Gmm, x: &[f64]) -> f64 {
    (0..model.components())
        .map(|c| {
            let mut p = model.weights[c];
            for j in 0..model.dim {
                let v = model.variance(c)[j];
                let d = x[j] - model.mean(c)[j];
                p *= (-0.5 * d * d / v).exp() / (2.0 * PI * v).sqrt();
            }
            p
        })
        .sum()
}
