//! Dimensionality reduction of i-vectors.

pub mod pca;
pub mod vae;

use crate::error::Result;

/// Fitted reduction stage applied to each i-vector before classification.
#[derive(Debug, Clone, PartialEq)]
pub enum Reducer {
    Identity { dim: usize },
    Pca(pca::PcaModel),
    Vae(vae::VaeModel),
}

impl Reducer {
    pub fn input_dim(&self) -> usize {
        match self {
            Reducer::Identity { dim } => *dim,
            Reducer::Pca(m) => m.input_dim(),
            Reducer::Vae(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Reducer::Identity { dim } => *dim,
            Reducer::Pca(m) => m.output_dim(),
            Reducer::Vae(m) => m.latent_dim(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Reducer::Identity { dim } => {
                if x.len() != *dim {
                    return Err(crate::Error::dims(*dim, x.len()));
                }
                Ok(x.to_vec())
            }
            Reducer::Pca(m) => pca::pca_project(m, x),
            Reducer::Vae(m) => vae::vae_encode(m, x),
        }
    }
}
