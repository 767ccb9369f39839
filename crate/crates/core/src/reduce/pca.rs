//! Principal component analysis via the sample covariance eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::container::{expect_dims, expect_len, ContainerModel, ModelKind, PayloadReader};
use crate::error::{Error, Result};
use crate::mfcc::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `p × l`, unit-norm orthogonal columns.
    pub components: DMatrix<f64>,
    /// Non-increasing, length `l`.
    pub eigenvalues: DVector<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn reconstruct(&self, t: &[f64]) -> Result<Vec<f64>> {
        if t.len() != self.output_dim() {
            return Err(Error::dims(self.output_dim(), t.len()));
        }
        let x = &self.components * DVector::from_column_slice(t) + &self.mean;
        Ok(x.as_slice().to_vec())
    }
}

/// Sample covariance (n − 1 denominator) of the rows of `data`, and the column means.
pub fn sample_covariance(data: &FeatureMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (data.rows(), data.cols());
    let x = DMatrix::from_row_slice(n, p, data.as_slice());
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    (mean, cov)
}

pub fn pca_fit(data: &FeatureMatrix, l: usize) -> Result<PcaModel> {
    let (n, p) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, got {n}")));
    }
    if l == 0 || l > (n - 1).min(p) {
        return Err(Error::InvalidConfig(format!(
            "{l} components outside 1..={} for {n}×{p} data",
            (n - 1).min(p)
        )));
    }
    if !data.is_finite() {
        return Err(Error::InvalidInput("PCA data contains non-finite values".into()));
    }
    let (mean, cov) = sample_covariance(data);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = DMatrix::zeros(p, l);
    let mut eigenvalues = DVector::zeros(l);
    for (k, &idx) in order.iter().take(l).enumerate() {
        let mut v = eig.eigenvectors.column(idx).normalize();
        // sign convention: largest-magnitude entry positive
        if v[v.iamax()] < 0.0 {
            v.neg_mut();
        }
        components.set_column(k, &v);
        eigenvalues[k] = eig.eigenvalues[idx].max(0.0);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

pub fn pca_project(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.input_dim() {
        return Err(Error::dims(model.input_dim(), x.len()));
    }
    let centered = DVector::from_column_slice(x) - &model.mean;
    Ok(model.components.tr_mul(&centered).as_slice().to_vec())
}

impl ContainerModel for PcaModel {
    const KIND: ModelKind = ModelKind::Pca;

    fn dims(&self) -> Vec<u64> {
        vec![self.input_dim() as u64, self.output_dim() as u64]
    }

    fn payload(&self) -> Vec<f64> {
        let mut out = self.mean.as_slice().to_vec();
        out.extend(self.components.transpose().iter().copied());
        out.extend(self.eigenvalues.iter().copied());
        out
    }

    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self> {
        let d = expect_dims(dims, 2, "pca")?;
        let (p, l) = (d[0], d[1]);
        expect_len(&payload, p + p * l + l, "pca")?;
        let mut r = PayloadReader::new(payload);
        Ok(PcaModel {
            mean: DVector::from_vec(r.take(p)),
            components: DMatrix::from_row_slice(p, l, &r.take(p * l)),
            eigenvalues: DVector::from_vec(r.take(l)),
        })
    }
}
