//! Baum–Welch statistics and the total-variability (i-vector) model.
//!
//! A record's mean supervector is modelled as `M = m + T w` with `w ~ N(0, I)`.
//! Given zero-order occupancies `N_c` and centered first-order statistics
//! `F_c`, the posterior of `w` is Gaussian with
//!
//! ```text
//! precision = I + Σ_c N_c T_cᵗ Σ_c⁻¹ T_c
//! mean      = precision⁻¹ Σ_c T_cᵗ Σ_c⁻¹ F_c
//! ```
//!
//! and `T` is re-estimated per component as
//! `T_c = (Σ_i F_c E[w]ᵗ)(Σ_i N_c E[wwᵗ])⁻¹`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{expect_dims, expect_len, ContainerModel, ModelKind, PayloadReader};
use crate::error::{Error, Result};
use crate::gmm::{for_each_posterior, Gmm};
use crate::mfcc::FeatureMatrix;

/// Components whose summed occupancy is at or below this keep their rows of `T`.
const MIN_OCCUPANCY: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// `N_c`, length C.
    pub zero: Vec<f64>,
    /// `F_c = Σ_t γ_t^c (x_t - m_c)`, row-major `C × D`.
    pub first: Vec<f64>,
    pub dim: usize,
}

impl BaumWelchStats {
    pub fn new(zero: Vec<f64>, first: Vec<f64>, dim: usize) -> Result<Self> {
        if first.len() != zero.len() * dim {
            return Err(Error::dims(zero.len() * dim, first.len()));
        }
        if zero.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
            return Err(Error::InvalidInput(
                "occupancies must be finite and non-negative".into(),
            ));
        }
        Ok(Self { zero, first, dim })
    }

    pub fn zeros(components: usize, dim: usize) -> Self {
        Self {
            zero: vec![0.0; components],
            first: vec![0.0; components * dim],
            dim,
        }
    }

    pub fn components(&self) -> usize {
        self.zero.len()
    }

    pub fn first_of(&self, c: usize) -> &[f64] {
        &self.first[c * self.dim..(c + 1) * self.dim]
    }

    pub fn total_occupancy(&self) -> f64 {
        self.zero.iter().sum()
    }
}

pub fn accumulate_stats(ubm: &Gmm, features: &FeatureMatrix) -> Result<BaumWelchStats> {
    let d = ubm.dim();
    if features.cols() != d {
        return Err(Error::dims(d, features.cols()));
    }
    let mut stats = BaumWelchStats::zeros(ubm.components(), d);
    for_each_posterior(ubm, features, |_, x, gamma| {
        for (c, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            stats.zero[c] += g;
            let mu = ubm.mean(c);
            for ((f, xi), m) in stats.first[c * d..(c + 1) * d].iter_mut().zip(x).zip(mu) {
                *f += g * (xi - m);
            }
        }
    });
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariabilityModel {
    /// `(C·D) × R`; rows `c·D..(c+1)·D` form `T_c`.
    pub t: DMatrix<f64>,
    pub ubm_means: Vec<f64>,
    pub ubm_variances: Vec<f64>,
    components: usize,
    dim: usize,
}

impl TotalVariabilityModel {
    pub fn new(t: DMatrix<f64>, ubm_means: Vec<f64>, ubm_variances: Vec<f64>, components: usize) -> Result<Self> {
        if components == 0 || ubm_means.is_empty() || !ubm_means.len().is_multiple_of(components) {
            return Err(Error::InvalidInput(format!(
                "{} supervector entries do not split into {components} components",
                ubm_means.len()
            )));
        }
        let dim = ubm_means.len() / components;
        if ubm_variances.len() != ubm_means.len() {
            return Err(Error::dims(ubm_means.len(), ubm_variances.len()));
        }
        if t.nrows() != ubm_means.len() {
            return Err(Error::dims(ubm_means.len(), t.nrows()));
        }
        if t.ncols() == 0 {
            return Err(Error::InvalidConfig("i-vector rank must be at least 1".into()));
        }
        if ubm_variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("supervector variances must be positive".into()));
        }
        if t.iter().chain(&ubm_means).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in total-variability model".into()));
        }
        Ok(Self {
            t,
            ubm_means,
            ubm_variances,
            components,
            dim,
        })
    }

    pub fn from_ubm(ubm: &Gmm, t: DMatrix<f64>) -> Result<Self> {
        Self::new(t, ubm.means().to_vec(), ubm.variances().to_vec(), ubm.components())
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    fn check_stats(&self, stats: &BaumWelchStats) -> Result<()> {
        if stats.components() != self.components {
            return Err(Error::dims(self.components, stats.components()));
        }
        if stats.dim != self.dim {
            return Err(Error::dims(self.dim, stats.dim));
        }
        Ok(())
    }
}

impl ContainerModel for TotalVariabilityModel {
    const KIND: ModelKind = ModelKind::TotalVariability;

    fn dims(&self) -> Vec<u64> {
        vec![self.components as u64, self.dim as u64, self.rank() as u64]
    }

    fn payload(&self) -> Vec<f64> {
        let mut p = self.ubm_means.clone();
        p.extend_from_slice(&self.ubm_variances);
        // row-major T
        p.extend(self.t.transpose().iter().copied());
        p
    }

    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self> {
        let d = expect_dims(dims, 3, "total variability")?;
        let (c, dim, r) = (d[0], d[1], d[2]);
        let sv = c * dim;
        expect_len(&payload, 2 * sv + sv * r, "total variability")?;
        let mut reader = PayloadReader::new(payload);
        let means = reader.take(sv);
        let vars = reader.take(sv);
        let t = DMatrix::from_row_slice(sv, r, &reader.take(sv * r));
        Self::new(t, means, vars, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVectorPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub second_moment: DMatrix<f64>,
}

/// Per-component `T_cᵗ Σ_c⁻¹ T_c` and `Σ⁻¹ T`, reused across records.
struct PosteriorTerms {
    tt_sinv_t: Vec<DMatrix<f64>>,
    sinv_t: DMatrix<f64>,
}

impl PosteriorTerms {
    fn new(model: &TotalVariabilityModel) -> Self {
        let d = model.dim;
        let mut sinv_t = model.t.clone();
        for (mut row, v) in sinv_t.row_iter_mut().zip(&model.ubm_variances) {
            row /= *v;
        }
        let tt_sinv_t = (0..model.components)
            .map(|c| {
                let tc = model.t.rows(c * d, d);
                let sc = sinv_t.rows(c * d, d);
                tc.transpose() * sc
            })
            .collect();
        Self { tt_sinv_t, sinv_t }
    }

    fn posterior(&self, model: &TotalVariabilityModel, stats: &BaumWelchStats) -> Result<IVectorPosterior> {
        let r = model.rank();
        let mut precision = DMatrix::<f64>::identity(r, r);
        for (n, m) in stats.zero.iter().zip(&self.tt_sinv_t) {
            if *n != 0.0 {
                precision += m * *n;
            }
        }
        let f = DVector::from_column_slice(&stats.first);
        let linear = self.sinv_t.tr_mul(&f);
        let chol = precision.clone().cholesky().ok_or_else(|| {
            Error::Numerical(format!(
                "posterior precision not positive definite (total occupancy {}, max |T| {})",
                stats.total_occupancy(),
                model.t.amax()
            ))
        })?;
        let mean = chol.solve(&linear);
        let cov = chol.inverse();
        let covariance = (&cov + cov.transpose()) * 0.5;
        let second_moment = &covariance + &mean * mean.transpose();
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite i-vector posterior (total occupancy {}, |F|max {})",
                stats.total_occupancy(),
                f.amax()
            )));
        }
        Ok(IVectorPosterior {
            mean,
            covariance,
            second_moment,
        })
    }
}

pub fn posterior_wi(model: &TotalVariabilityModel, stats: &BaumWelchStats) -> Result<IVectorPosterior> {
    model.check_stats(stats)?;
    PosteriorTerms::new(model).posterior(model, stats)
}

/// Posteriors for many records, computed in parallel, returned in input order.
pub fn posteriors_batch(model: &TotalVariabilityModel, stats: &[BaumWelchStats]) -> Result<Vec<IVectorPosterior>> {
    for s in stats {
        model.check_stats(s)?;
    }
    let terms = PosteriorTerms::new(model);
    stats.par_iter().map(|s| terms.posterior(model, s)).collect()
}

pub fn extract_ivector(model: &TotalVariabilityModel, stats: &BaumWelchStats) -> Result<Vec<f64>> {
    Ok(posterior_wi(model, stats)?.mean.as_slice().to_vec())
}

pub fn extract_ivectors(model: &TotalVariabilityModel, stats: &[BaumWelchStats]) -> Result<Vec<Vec<f64>>> {
    Ok(posteriors_batch(model, stats)?
        .into_iter()
        .map(|p| p.mean.as_slice().to_vec())
        .collect())
}

/// One M-step. Components never observed across `stats` keep their current rows.
pub fn update_t(
    model: &TotalVariabilityModel,
    stats: &[BaumWelchStats],
    posteriors: &[IVectorPosterior],
) -> Result<DMatrix<f64>> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no statistics to update from".into()));
    }
    if stats.len() != posteriors.len() {
        return Err(Error::dims(stats.len(), posteriors.len()));
    }
    let (c_count, d, r) = (model.components, model.dim, model.rank());
    for s in stats {
        model.check_stats(s)?;
    }
    let mut t_new = model.t.clone();
    for c in 0..c_count {
        let mut occupancy = 0.0;
        let mut a = DMatrix::<f64>::zeros(r, r);
        let mut cross = DMatrix::<f64>::zeros(d, r);
        for (s, p) in stats.iter().zip(posteriors) {
            let n = s.zero[c];
            if n == 0.0 {
                continue;
            }
            occupancy += n;
            a += &p.second_moment * n;
            let f = DVector::from_column_slice(s.first_of(c));
            cross += f * p.mean.transpose();
        }
        if occupancy <= MIN_OCCUPANCY {
            continue;
        }
        let Some(chol) = ((&a + a.transpose()) * 0.5).cholesky() else {
            log::warn!("update_t: accumulator for component {c} not positive definite, keeping T_c");
            continue;
        };
        // T_c A = cross  ⇔  A T_cᵗ = crossᵗ
        let tc = chol.solve(&cross.transpose()).transpose();
        t_new.rows_mut(c * d, d).copy_from(&tc);
    }
    if t_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("T update produced non-finite entries".into()));
    }
    Ok(t_new)
}

/// `Σ_i Σ_c ‖F_c(i) - N_c(i) T_c E[w_i]‖²`.
pub fn residual(model: &TotalVariabilityModel, stats: &[BaumWelchStats], posteriors: &[IVectorPosterior]) -> f64 {
    let d = model.dim;
    stats
        .iter()
        .zip(posteriors)
        .map(|(s, p)| {
            let tw = &model.t * &p.mean;
            (0..model.components)
                .map(|c| {
                    let n = s.zero[c];
                    s.first_of(c)
                        .iter()
                        .zip(tw.rows(c * d, d).iter())
                        .map(|(f, t)| (f - n * t).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TvFit {
    pub model: TotalVariabilityModel,
    /// Residual diagnostic at the start of each iteration plus once for the
    /// final model (`iterations + 1` entries).
    pub residual_trace: Vec<f64>,
    /// Iterations where the residual rose by more than 1e-6 relative.
    pub monotonicity_violations: Vec<usize>,
}

pub fn train_tv(ubm: &Gmm, stats: &[BaumWelchStats], config: &TvConfig) -> Result<TvFit> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no statistics to train on".into()));
    }
    let sv = ubm.components() * ubm.dim();
    if config.rank == 0 || config.rank > sv {
        return Err(Error::InvalidConfig(format!(
            "rank {} outside 1..={sv} (C·D)",
            config.rank
        )));
    }
    let mean_sd = ubm.variances().iter().map(|v| v.sqrt()).sum::<f64>() / sv as f64;
    let scale = 0.1 * mean_sd;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t0 = DMatrix::from_fn(sv, config.rank, |_, _| {
        scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let mut model = TotalVariabilityModel::from_ubm(ubm, t0)?;
    for s in stats {
        model.check_stats(s)?;
    }

    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut violations = Vec::new();
    for it in 0..=config.iterations {
        let posteriors = posteriors_batch(&model, stats)?;
        let res = residual(&model, stats, &posteriors);
        if let Some(&prev) = trace.last() {
            if res > prev * (1.0 + 1e-6) {
                log::warn!("train_tv: residual rose from {prev} to {res} at iteration {it}");
                violations.push(it);
            }
        }
        trace.push(res);
        if it == config.iterations {
            break;
        }
        model.t = update_t(&model, stats, &posteriors)?;
    }
    Ok(TvFit {
        model,
        residual_trace: trace,
        monotonicity_violations: violations,
    })
}
