use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerKind {
    None,
    /// `(v - min) / (max - min)`.
    Scale,
    /// `(v - mean) / std`.
    Standard,
    /// `(v - mean) / (max - min)`.
    Norm,
}

impl RefinerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Scale => "scale",
            Self::Standard => "standard",
            Self::Norm => "norm",
        }
    }
}

/// Per-feature statistics of the training vectors. A zero range or zero
/// standard deviation divides by 1 instead, so constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerModel {
    pub kind: RefinerKind,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

pub fn fit_refiner(samples: &[Vec<f64>], kind: RefinerKind) -> Result<RefinerModel> {
    let first = samples.first().ok_or_else(|| Error::InsufficientData("refiner needs at least one sample".into()))?;
    let n = first.len();
    if let Some(bad) = samples.iter().position(|s| s.len() != n) {
        return Err(dim_err!("sample {bad} has length {}, expected {n}", samples[bad].len()));
    }
    let k = samples.len() as f64;
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    let mut mean = vec![0.0; n];
    for s in samples {
        for i in 0..n {
            min[i] = min[i].min(s[i]);
            max[i] = max[i].max(s[i]);
            mean[i] += s[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; n];
    for s in samples {
        for i in 0..n {
            let d = s[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var.into_iter().map(|v| (v / k).sqrt()).collect();
    Ok(RefinerModel { kind, min, max, mean, std })
}

fn divisor(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

impl RefinerModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn refine(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(dim_err!("refiner input has length {}, expected {}", v.len(), self.dim()));
        }
        let out = (0..v.len()).map(|i| match self.kind {
            RefinerKind::None => v[i],
            RefinerKind::Scale => (v[i] - self.min[i]) / divisor(self.max[i] - self.min[i]),
            RefinerKind::Standard => (v[i] - self.mean[i]) / divisor(self.std[i]),
            RefinerKind::Norm => (v[i] - self.mean[i]) / divisor(self.max[i] - self.min[i]),
        });
        Ok(out.collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn data(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..50).map(|_| vec![rng.normal() * 3.0 + 1.0, rng.uniform(), 7.0]).collect()
    }

    #[test]
    fn scale_maps_extremes_to_unit_interval() {
        let s = data(1);
        let m = fit_refiner(&s, RefinerKind::Scale).unwrap();
        assert_eq!(m.refine(&m.min).unwrap()[..2], [0.0, 0.0]);
        let top = m.refine(&m.max).unwrap();
        assert!((top[0] - 1.0).abs() < 1e-15 && (top[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standard_gives_zero_mean_unit_std() {
        let s = data(2);
        let m = fit_refiner(&s, RefinerKind::Standard).unwrap();
        let r: Vec<Vec<f64>> = s.iter().map(|v| m.refine(v).unwrap()).collect();
        for i in 0..2 {
            let mean = r.iter().map(|v| v[i]).sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / r.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
        // Constant feature maps to zero, not NaN.
        assert!(r.iter().all(|v| v[2] == 0.0));
    }

    #[test]
    fn norm_is_rescaled_standard() {
        let s = data(3);
        let st = fit_refiner(&s, RefinerKind::Standard).unwrap();
        let nm = fit_refiner(&s, RefinerKind::Norm).unwrap();
        let v = vec![0.4, 0.9, 7.0];
        let a = st.refine(&v).unwrap();
        let b = nm.refine(&v).unwrap();
        for i in 0..2 {
            let want = a[i] * st.std[i] / (st.max[i] - st.min[i]);
            assert!((b[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn none_is_identity_and_mismatch_rejected() {
        let m = fit_refiner(&data(4), RefinerKind::None).unwrap();
        assert_eq!(m.refine(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(m.refine(&[1.0]).is_err());
        assert!(fit_refiner(&[], RefinerKind::Scale).is_err());
    }
}
