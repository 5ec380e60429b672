use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numerical(format!("non-finite entry at index {i}"))),
        None => Ok(()),
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(dim_err!("{rows}x{cols} matrix needs {} entries, got {}", rows * cols, data.len()));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_err!("ragged rows"));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Leading `k` columns.
    pub fn take_cols(&self, k: usize) -> Self {
        let mut out = Self::zeros(self.rows, k);
        for r in 0..self.rows {
            out.data[r * k..(r + 1) * k].copy_from_slice(&self.row(r)[..k]);
        }
        out
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(dim_err!("cannot subtract {}x{} from {}x{}", other.rows, other.cols, self.rows, self.cols));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }
}

/// Three-index array stored channel-major: each channel is a contiguous
/// row-major `dim1 x dim2` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dim1: usize,
    dim2: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dim1: usize, dim2: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if dim1 * dim2 * channels != data.len() {
            return Err(dim_err!(
                "{dim1}x{dim2}x{channels} tensor needs {} entries, got {}",
                dim1 * dim2 * channels,
                data.len()
            ));
        }
        check_finite(&data)?;
        Ok(Self { dim1, dim2, channels, data })
    }

    pub(crate) fn from_raw(dim1: usize, dim2: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(dim1 * dim2 * channels, data.len());
        Self { dim1, dim2, channels, data }
    }

    pub fn zeros(dim1: usize, dim2: usize, channels: usize) -> Self {
        Self { dim1, dim2, channels, data: vec![0.0; dim1 * dim2 * channels] }
    }

    pub fn filled(dim1: usize, dim2: usize, channels: usize, value: f64) -> Self {
        Self { dim1, dim2, channels, data: vec![value; dim1 * dim2 * channels] }
    }

    pub fn from_mat(m: &Mat) -> Self {
        Self::from_raw(m.rows(), m.cols(), 1, m.data().to_vec())
    }

    pub fn dim1(&self) -> usize {
        self.dim1
    }

    pub fn dim2(&self) -> usize {
        self.dim2
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.dim1, self.dim2, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, k: usize) -> f64 {
        self.data[(k * self.dim1 + r) * self.dim2 + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, k: usize, v: f64) {
        self.data[(k * self.dim1 + r) * self.dim2 + c] = v;
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let plane = self.dim1 * self.dim2;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let plane = self.dim1 * self.dim2;
        &mut self.data[k * plane..(k + 1) * plane]
    }

    /// Feature-map matrix of one channel.
    pub fn channel_mat(&self, k: usize) -> Mat {
        Mat::from_raw(self.dim1, self.dim2, self.channel(k).to_vec())
    }

    /// Flattens in (row, col, channel) lexicographic order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.dim1 {
            for c in 0..self.dim2 {
                for k in 0..self.channels {
                    out.push(self.get(r, c, k));
                }
            }
        }
        out
    }

    /// Inverse of [`Tensor3::flatten`].
    pub fn unflatten(dim1: usize, dim2: usize, channels: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), dim1 * dim2 * channels);
        let mut t = Self::zeros(dim1, dim2, channels);
        let mut i = 0;
        for r in 0..dim1 {
            for c in 0..dim2 {
                for k in 0..channels {
                    t.set(r, c, k, flat[i]);
                    i += 1;
                }
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.dim1, self.dim2, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Left-right mirror (column reversal).
    pub fn mirror_lr(&self) -> Self {
        let mut out = Self::zeros(self.dim1, self.dim2, self.channels);
        for k in 0..self.channels {
            for r in 0..self.dim1 {
                for c in 0..self.dim2 {
                    out.set(r, self.dim2 - 1 - c, k, self.get(r, c, k));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(Mat::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Mat::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor3::new(2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn flatten_order_is_row_col_channel() {
        let mut t = Tensor3::zeros(2, 2, 2);
        t.set(0, 1, 0, 1.0);
        t.set(0, 0, 1, 2.0);
        let flat = t.flatten();
        assert_eq!(flat, vec![0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(Tensor3::unflatten(2, 2, 2, &flat), t);
    }

    #[test]
    fn transpose_twice_is_identity() {
        let m = Mat::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(m.transpose().get(2, 1), 6.0);
        assert_eq!(m.transpose().transpose(), m);
    }
}
