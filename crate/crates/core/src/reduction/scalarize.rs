use serde::{Deserialize, Serialize};

use super::twod_pca::TwoDPcaModel;
use crate::error::{arg_err, dim_err, Result};
use crate::numeric::Tensor3;

/// Reduces each channel of a map stack to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarizerKind {
    Max,
    Mean,
    /// `q₁ᵀ P w₁` with per-filter 2D²PCA projections fitted at `d = r = 1`.
    TwodPca,
}

impl ScalarizerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::Mean => "mean",
            Self::TwodPca => "twod_pca",
        }
    }
}

/// One value per channel of `p`.
pub fn scalarize(p: &Tensor3, kind: ScalarizerKind, model: Option<&TwoDPcaModel>) -> Result<Vec<f64>> {
    let q = p.channels();
    match kind {
        ScalarizerKind::Max => Ok((0..q).map(|k| p.channel(k).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()),
        ScalarizerKind::Mean => {
            let n = (p.dim1() * p.dim2()) as f64;
            Ok((0..q).map(|k| p.channel(k).iter().sum::<f64>() / n).collect())
        }
        ScalarizerKind::TwodPca => {
            let model = model.ok_or_else(|| arg_err!("twod_pca scalarizer needs a fitted 2D²PCA model"))?;
            if model.filter_count() != q {
                return Err(dim_err!("2D²PCA model has {} filters, maps have {q}", model.filter_count()));
            }
            if let Some(f) = model.filters.iter().find(|f| f.w.cols() != 1 || f.q.cols() != 1) {
                return Err(arg_err!("twod_pca scalarizer needs d = r = 1, got d={}, r={}", f.w.cols(), f.q.cols()));
            }
            if p.dim1() != p.dim2() {
                return Err(dim_err!("2D²PCA needs square maps, got {}x{}", p.dim1(), p.dim2()));
            }
            (0..q).map(|k| model.leading_scalar(k, p.channel(k))).collect()
        }
    }
}
