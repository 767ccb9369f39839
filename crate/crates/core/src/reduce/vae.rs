//! Single-hidden-layer variational autoencoder with hand-written gradients.
//!
//! ```text
//! encoder: h  = tanh(W1 x + b1)
//!          μ  = Wμ h + bμ,   log σ² = Wv h + bv
//! sample:  z  = μ + exp(½ log σ²) ⊙ ε,   ε ~ N(0, I)
//! decoder: g  = tanh(W3 z + b3)
//!          x' = W4 g + b4
//! ELBO     = -½‖x - x'‖² - KL(N(μ, σ²) ‖ N(0, I))
//! ```
//!
//! Inputs are standardized per dimension with statistics stored in the model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{expect_dims, expect_len, ContainerModel, ModelKind, PayloadReader};
use crate::error::{Error, Result};
use crate::mfcc::FeatureMatrix;

/// Sizes and offsets of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaeLayout {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy)]
struct Blocks {
    w1: Block,
    b1: Block,
    w_mu: Block,
    b_mu: Block,
    w_lv: Block,
    b_lv: Block,
    w3: Block,
    b3: Block,
    w4: Block,
    b4: Block,
    total: usize,
}

impl VaeLayout {
    fn blocks(&self) -> Blocks {
        let (d, h, z) = (self.input, self.hidden, self.latent);
        let mut offset = 0;
        let mut next = |rows, cols| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let w1 = next(h, d);
        let b1 = next(h, 1);
        let w_mu = next(z, h);
        let b_mu = next(z, 1);
        let w_lv = next(z, h);
        let b_lv = next(z, 1);
        let w3 = next(h, z);
        let b3 = next(h, 1);
        let w4 = next(d, h);
        let b4 = next(d, 1);
        Blocks {
            w1,
            b1,
            w_mu,
            b_mu,
            w_lv,
            b_lv,
            w3,
            b3,
            w4,
            b4,
            total: offset,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().total
    }

    /// Named ranges of the flat parameter vector, in storage order.
    pub fn parameter_ranges(&self) -> [(&'static str, std::ops::Range<usize>); 10] {
        let b = self.blocks();
        let r = |blk: Block| blk.offset..blk.offset + blk.len();
        [
            ("w1", r(b.w1)),
            ("b1", r(b.b1)),
            ("w_mu", r(b.w_mu)),
            ("b_mu", r(b.b_mu)),
            ("w_lv", r(b.w_lv)),
            ("b_lv", r(b.b_lv)),
            ("w3", r(b.w3)),
            ("b3", r(b.b3)),
            ("w4", r(b.w4)),
            ("b4", r(b.b4)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub layout: VaeLayout,
    pub params: Vec<f64>,
    /// Standardization: `x_std = (x - shift) / scale`.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

fn affine(params: &[f64], w: Block, b: Block, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let wm = &params[w.offset..w.offset + w.len()];
    let bv = &params[b.offset..b.offset + b.len()];
    out.extend(
        wm.chunks_exact(w.cols)
            .zip(bv)
            .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()),
    );
}

/// `grad[w] += δ xᵗ`, `grad[b] += δ`, and optionally `back = Wᵗ δ`.
fn affine_backward(
    params: &[f64],
    grad: &mut [f64],
    w: Block,
    b: Block,
    x: &[f64],
    delta: &[f64],
    back: Option<&mut Vec<f64>>,
) {
    for (i, &d) in delta.iter().enumerate() {
        grad[b.offset + i] += d;
        let row = &mut grad[w.offset + i * w.cols..w.offset + (i + 1) * w.cols];
        row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
    }
    if let Some(back) = back {
        back.clear();
        back.resize(w.cols, 0.0);
        for (i, &d) in delta.iter().enumerate() {
            let row = &params[w.offset + i * w.cols..w.offset + (i + 1) * w.cols];
            back.iter_mut().zip(row).for_each(|(o, wv)| *o += wv * d);
        }
    }
}

impl VaeModel {
    pub fn new(layout: VaeLayout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.parameter_count() {
            return Err(Error::dims(layout.parameter_count(), params.len()));
        }
        if layout.input == 0 || layout.hidden == 0 || layout.latent == 0 {
            return Err(Error::InvalidConfig("VAE layer widths must be positive".into()));
        }
        Ok(Self {
            shift: vec![0.0; layout.input],
            scale: vec![1.0; layout.input],
            layout,
            params,
        })
    }

    /// Random init: weights ~ N(0, 1/fan_in), biases zero.
    pub fn random(layout: VaeLayout, rng: &mut impl Rng) -> Result<Self> {
        let blocks = layout.blocks();
        let mut params = vec![0.0; blocks.total];
        for w in [blocks.w1, blocks.w_mu, blocks.w_lv, blocks.w3, blocks.w4] {
            let sd = 1.0 / (w.cols as f64).sqrt();
            for p in &mut params[w.offset..w.offset + w.len()] {
                let e: f64 = StandardNormal.sample(rng);
                *p = sd * e;
            }
        }
        Self::new(layout, params)
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.latent
    }

    fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.layout.input {
            return Err(Error::dims(self.layout.input, x.len()));
        }
        Ok(x.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, s), c)| (v - s) / c)
            .collect())
    }

    fn encoder_heads(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let b = self.layout.blocks();
        let mut h = Vec::new();
        affine(&self.params, b.w1, b.b1, xs, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        let mut mu = Vec::new();
        let mut lv = Vec::new();
        affine(&self.params, b.w_mu, b.b_mu, &h, &mut mu);
        affine(&self.params, b.w_lv, b.b_lv, &h, &mut lv);
        (h, mu, lv)
    }

    /// Decoder output for a latent point, in standardized input units.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.layout.latent {
            return Err(Error::dims(self.layout.latent, z.len()));
        }
        let b = self.layout.blocks();
        let mut g = Vec::new();
        affine(&self.params, b.w3, b.b3, z, &mut g);
        g.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = Vec::new();
        affine(&self.params, b.w4, b.b4, &g, &mut out);
        Ok(out)
    }
}

/// Value of one ELBO sample and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub elbo: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Sampled ELBO for `x` with reparameterization noise `noise`, and its exact
/// gradient with respect to `model.params`.
pub fn vae_elbo_and_grads(model: &VaeModel, x: &[f64], noise: &[f64]) -> Result<(ElboTerms, Vec<f64>)> {
    let l = model.layout;
    if noise.len() != l.latent {
        return Err(Error::dims(l.latent, noise.len()));
    }
    let xs = model.standardize(x)?;
    let b = l.blocks();
    let p = &model.params;

    let (h, mu, lv) = model.encoder_heads(&xs);
    let sigma: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
    let z: Vec<f64> = mu.iter().zip(&sigma).zip(noise).map(|((m, s), e)| m + s * e).collect();
    let mut g = Vec::new();
    affine(p, b.w3, b.b3, &z, &mut g);
    g.iter_mut().for_each(|v| *v = v.tanh());
    let mut xr = Vec::new();
    affine(p, b.w4, b.b4, &g, &mut xr);

    let diff: Vec<f64> = xs.iter().zip(&xr).map(|(a, r)| a - r).collect();
    let reconstruction = -0.5 * diff.iter().map(|d| d * d).sum::<f64>();
    let kl = 0.5 * mu.iter().zip(&lv).map(|(m, v)| m * m + v.exp() - 1.0 - v).sum::<f64>();
    let elbo = reconstruction - kl;
    if !elbo.is_finite() || !z.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite ELBO (reconstruction {reconstruction}, KL {kl})"
        )));
    }

    let mut grad = vec![0.0; b.total];
    // d ELBO / d x' = x - x'
    let mut d_g = Vec::new();
    affine_backward(p, &mut grad, b.w4, b.b4, &g, &diff, Some(&mut d_g));
    let d_a2: Vec<f64> = d_g.iter().zip(&g).map(|(d, gv)| d * (1.0 - gv * gv)).collect();
    let mut d_z = Vec::new();
    affine_backward(p, &mut grad, b.w3, b.b3, &z, &d_a2, Some(&mut d_z));
    let d_mu: Vec<f64> = d_z.iter().zip(&mu).map(|(dz, m)| dz - m).collect();
    let d_lv: Vec<f64> = d_z
        .iter()
        .zip(noise)
        .zip(&sigma)
        .zip(&lv)
        .map(|(((dz, e), s), v)| 0.5 * dz * e * s - 0.5 * (v.exp() - 1.0))
        .collect();
    let mut d_h_mu = Vec::new();
    let mut d_h_lv = Vec::new();
    affine_backward(p, &mut grad, b.w_mu, b.b_mu, &h, &d_mu, Some(&mut d_h_mu));
    affine_backward(p, &mut grad, b.w_lv, b.b_lv, &h, &d_lv, Some(&mut d_h_lv));
    let d_a1: Vec<f64> = d_h_mu
        .iter()
        .zip(&d_h_lv)
        .zip(&h)
        .map(|((a, c), hv)| (a + c) * (1.0 - hv * hv))
        .collect();
    affine_backward(p, &mut grad, b.w1, b.b1, &xs, &d_a1, None);

    Ok((
        ElboTerms {
            elbo,
            reconstruction,
            kl,
        },
        grad,
    ))
}

/// Posterior mean `μ_z(x)`; no sampling.
pub fn vae_encode(model: &VaeModel, x: &[f64]) -> Result<Vec<f64>> {
    let xs = model.standardize(x)?;
    Ok(model.encoder_heads(&xs).1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct VaeFit {
    pub model: VaeModel,
    /// Mean sampled ELBO over each epoch.
    pub elbo_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Per-sample stochastic gradient ascent on the sampled ELBO.
pub fn vae_fit(data: &FeatureMatrix, config: &VaeConfig) -> Result<VaeFit> {
    let (n, d) = (data.rows(), data.cols());
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("VAE training data is empty".into()));
    }
    if config.latent == 0 || config.hidden == 0 {
        return Err(Error::InvalidConfig("VAE layer widths must be positive".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidConfig("learning rate must be positive".into()));
    }
    if !data.is_finite() {
        return Err(Error::InvalidInput("VAE data contains non-finite values".into()));
    }
    let mut warnings = Vec::new();
    if config.latent >= d {
        let msg = format!(
            "latent dimension {} is not smaller than the input dimension {d}",
            config.latent
        );
        log::warn!("vae_fit: {msg}");
        warnings.push(msg);
    }

    let layout = VaeLayout {
        input: d,
        hidden: config.hidden,
        latent: config.latent,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = VaeModel::random(layout, &mut rng)?;
    for j in 0..d {
        let mean = data.iter_rows().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = data.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        model.shift[j] = mean;
        model.scale[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut noise = vec![0.0; config.latent];
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            noise.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
            let (terms, grad) =
                vae_elbo_and_grads(&model, data.row(i), &noise).map_err(|e| Error::TrainingFailure {
                    epoch,
                    message: e.to_string(),
                })?;
            total += terms.elbo;
            model
                .params
                .iter_mut()
                .zip(&grad)
                .for_each(|(p, g)| *p += config.learning_rate * g);
        }
        let mean = total / n as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingFailure {
                epoch,
                message: "non-finite ELBO or parameters".into(),
            });
        }
        trace.push(mean);
    }
    Ok(VaeFit {
        model,
        elbo_trace: trace,
        warnings,
    })
}

impl ContainerModel for VaeModel {
    const KIND: ModelKind = ModelKind::Vae;

    fn dims(&self) -> Vec<u64> {
        vec![
            self.layout.input as u64,
            self.layout.hidden as u64,
            self.layout.latent as u64,
        ]
    }

    fn payload(&self) -> Vec<f64> {
        let mut out = self.shift.clone();
        out.extend_from_slice(&self.scale);
        out.extend_from_slice(&self.params);
        out
    }

    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self> {
        let d = expect_dims(dims, 3, "vae")?;
        let layout = VaeLayout {
            input: d[0],
            hidden: d[1],
            latent: d[2],
        };
        expect_len(&payload, 2 * layout.input + layout.parameter_count(), "vae")?;
        let mut r = PayloadReader::new(payload);
        let shift = r.take(layout.input);
        let scale = r.take(layout.input);
        let mut model = VaeModel::new(layout, r.take(layout.parameter_count()))?;
        model.shift = shift;
        model.scale = scale;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> VaeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VaeModel::random(
            VaeLayout {
                input: 4,
                hidden: 3,
                latent: 2,
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn kl_vanishes_at_standard_normal_encoder() {
        let mut m = small_model(1);
        let b = m.layout.blocks();
        for blk in [b.w_mu, b.b_mu, b.w_lv, b.b_lv] {
            m.params[blk.offset..blk.offset + blk.len()].fill(0.0);
        }
        let (terms, _) = vae_elbo_and_grads(&m, &[0.3, -1.0, 2.0, 0.5], &[0.1, -0.4]).unwrap();
        assert_eq!(terms.kl, 0.0);
    }

    #[test]
    fn perfect_reconstruction_term_is_zero() {
        let mut m = small_model(2);
        let b = m.layout.blocks();
        // decoder output is just b4; make it equal to x
        m.params[b.w4.offset..b.w4.offset + b.w4.len()].fill(0.0);
        let x = [0.25, -0.5, 1.0, 2.0];
        m.params[b.b4.offset..b.b4.offset + 4].copy_from_slice(&x);
        let (terms, _) = vae_elbo_and_grads(&m, &x, &[0.3, 0.3]).unwrap();
        assert_eq!(terms.reconstruction, 0.0);
    }

    #[test]
    fn zero_encoder_encodes_to_origin() {
        let mut m = small_model(3);
        m.params.fill(0.0);
        assert_eq!(vae_encode(&m, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(vae_encode(&m, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn encode_is_pure() {
        let m = small_model(4);
        let x = [0.1, 0.2, -0.3, 0.4];
        let z = vae_encode(&m, &x).unwrap();
        assert_eq!(z.len(), 2);
        assert_eq!(z, vae_encode(&m, &x).unwrap());
    }

    #[test]
    fn oversized_latent_warns() {
        let data = FeatureMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]).unwrap();
        let cfg = VaeConfig {
            latent: 2,
            hidden: 3,
            epochs: 2,
            learning_rate: 0.01,
            seed: 1,
        };
        let fit = vae_fit(&data, &cfg).unwrap();
        assert_eq!(fit.warnings.len(), 1);
        assert_eq!(fit.elbo_trace.len(), 2);
    }

    #[test]
    fn divergence_names_epoch() {
        let rows: Vec<[f64; 3]> = (0..20).map(|i| [i as f64, (i * i) as f64, -(i as f64)]).collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let cfg = VaeConfig {
            latent: 1,
            hidden: 4,
            epochs: 50,
            learning_rate: 1e6,
            seed: 1,
        };
        assert!(matches!(vae_fit(&data, &cfg), Err(Error::TrainingFailure { .. })));
    }

    #[test]
    fn roundtrip() {
        let mut m = small_model(5);
        m.shift = vec![1.0, 2.0, 3.0, 4.0];
        m.scale = vec![0.5, 0.25, 2.0, 1.0];
        let back: VaeModel = crate::container::decode(&crate::container::encode(&m)).unwrap();
        assert_eq!(back, m);
    }
}
