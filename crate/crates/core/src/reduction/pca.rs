use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::numeric::{eigh_symmetric, matmul_tn, Mat};

/// How many principal directions to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaDims {
    Count(usize),
    /// Smallest count whose eigenvalues explain at least this fraction of
    /// the total variance.
    VarianceThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `n x d`, columns are the leading eigenvectors of the covariance.
    pub projection: Mat,
    /// All `n` covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// Fits PCA on equal-length samples with covariance normalized by the
/// sample count.
pub fn fit_pca(samples: &[Vec<f64>], dims: PcaDims) -> Result<PcaModel> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 samples, got {}", samples.len())));
    }
    let n = samples[0].len();
    if n == 0 {
        return Err(arg_err!("PCA samples are empty vectors"));
    }
    if let Some(bad) = samples.iter().position(|s| s.len() != n) {
        return Err(dim_err!("sample {bad} has length {}, expected {n}", samples[bad].len()));
    }
    let k = samples.len() as f64;
    let mut mean = vec![0.0; n];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut centered = Vec::with_capacity(samples.len() * n);
    for s in samples {
        centered.extend(s.iter().zip(&mean).map(|(v, m)| v - m));
    }
    let x = Mat::new(samples.len(), n, centered)?;
    let mut cov = matmul_tn(&x, &x)?;
    cov.data_mut().iter_mut().for_each(|c| *c /= k);
    let (eigenvalues, vectors) = eigh_symmetric(&cov)?;
    let d = match dims {
        PcaDims::Count(d) if d == 0 || d > n => return Err(arg_err!("PCA dimension {d} outside 1..={n}")),
        PcaDims::Count(d) => d,
        PcaDims::VarianceThreshold(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(arg_err!("variance threshold {tau} outside (0, 1]"));
            }
            explained_count(&eigenvalues, tau)
        }
    };
    Ok(PcaModel { mean, projection: vectors.take_cols(d), eigenvalues })
}

fn explained_count(eigenvalues: &[f64], tau: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        acc += l.max(0.0);
        if acc / total >= tau - 1e-12 {
            return i + 1;
        }
    }
    eigenvalues.len()
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.cols()
    }

    /// `(v - mean)ᵀ W`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.input_dim();
        if v.len() != n {
            return Err(dim_err!("PCA input has length {}, expected {n}", v.len()));
        }
        let d = self.output_dim();
        let mut out = vec![0.0; d];
        for (i, (x, m)) in v.iter().zip(&self.mean).enumerate() {
            let c = x - m;
            for (o, w) in out.iter_mut().zip(self.projection.row(i)) {
                *o += c * w;
            }
        }
        Ok(out)
    }

    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.output_dim() {
            return Err(dim_err!("PCA coordinates have length {}, expected {}", z.len(), self.output_dim()));
        }
        Ok((0..self.input_dim())
            .map(|i| self.mean[i] + self.projection.row(i).iter().zip(z).map(|(w, c)| w * c).sum::<f64>())
            .collect())
    }
}
