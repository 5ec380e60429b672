use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::numeric::{eigh_symmetric, gemm, matmul, matmul_tn, Mat, Strided, Tensor3};

/// Row and column projections for one filter's feature maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoDPcaFilter {
    /// `n x d`, leading eigenvectors of the column covariance.
    pub w: Mat,
    /// `n x r`, leading eigenvectors of the row covariance.
    pub q: Mat,
    pub mean_map: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoDPcaModel {
    pub filters: Vec<TwoDPcaFilter>,
}

/// Streaming covariance sums for every filter of a map stack.
///
/// Each filter's sums are taken around its first map so that a single pass
/// is numerically safe.
#[derive(Debug, Clone)]
pub struct TwoDPcaAccumulator {
    size: usize,
    count: usize,
    shift: Vec<Mat>,
    sum: Vec<Vec<f64>>,
    col_cov: Vec<Vec<f64>>,
    row_cov: Vec<Vec<f64>>,
    scratch: Vec<f64>,
}

impl TwoDPcaAccumulator {
    pub fn new() -> Self {
        Self { size: 0, count: 0, shift: vec![], sum: vec![], col_cov: vec![], row_cov: vec![], scratch: vec![] }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds one stack of square maps, one per channel.
    pub fn push(&mut self, maps: &Tensor3) -> Result<()> {
        let (h, w, q) = maps.shape();
        if h != w {
            return Err(dim_err!("2D²PCA needs square maps, got {h}x{w}"));
        }
        if self.count == 0 {
            self.size = h;
            self.shift = (0..q).map(|k| maps.channel_mat(k)).collect();
            self.sum = vec![vec![0.0; h * h]; q];
            self.col_cov = vec![vec![0.0; h * h]; q];
            self.row_cov = vec![vec![0.0; h * h]; q];
            self.scratch = vec![0.0; h * h];
        } else if h != self.size || q != self.shift.len() {
            return Err(dim_err!("map stack {h}x{w}x{q} differs from {}x{}x{}", self.size, self.size, self.shift.len()));
        }
        let n = self.size;
        for k in 0..q {
            for ((s, v), m) in self.scratch.iter_mut().zip(maps.channel(k)).zip(self.shift[k].data()) {
                *s = v - m;
            }
            for (a, s) in self.sum[k].iter_mut().zip(&self.scratch) {
                *a += s;
            }
            let d = &self.scratch;
            gemm(n, n, n, 1.0, Strided::transposed(d, n), Strided::row_major(d, n), 1.0, &mut self.col_cov[k]);
            gemm(n, n, n, 1.0, Strided::row_major(d, n), Strided::transposed(d, n), 1.0, &mut self.row_cov[k]);
        }
        self.count += 1;
        Ok(())
    }

    /// Keeps the leading `d` column and `r` row directions per filter.
    pub fn finish(&self, d: usize, r: usize) -> Result<TwoDPcaModel> {
        if self.count < 2 {
            return Err(Error::InsufficientData(format!("2D²PCA needs at least 2 maps, got {}", self.count)));
        }
        let n = self.size;
        if d == 0 || r == 0 || d > n || r > n {
            return Err(arg_err!("2D²PCA dimensions d={d}, r={r} outside 1..={n}"));
        }
        let k = self.count as f64;
        let mut filters = Vec::with_capacity(self.shift.len());
        for j in 0..self.shift.len() {
            // Offset of the mean from the shift map.
            let delta = Mat::from_raw(n, n, self.sum[j].iter().map(|s| s / k).collect());
            let dtd = matmul_tn(&delta, &delta)?;
            let ddt = matmul(&delta, &delta.transpose())?;
            let col = covariance(&self.col_cov[j], k, &dtd);
            let row = covariance(&self.row_cov[j], k, &ddt);
            let (_, wv) = eigh_symmetric(&col)?;
            let (_, qv) = eigh_symmetric(&row)?;
            let mean_data = self.shift[j].data().iter().zip(delta.data()).map(|(a, b)| a + b).collect();
            filters.push(TwoDPcaFilter { w: wv.take_cols(d), q: qv.take_cols(r), mean_map: Mat::from_raw(n, n, mean_data) });
        }
        Ok(TwoDPcaModel { filters })
    }
}

impl Default for TwoDPcaAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

fn covariance(shifted_sum: &[f64], k: f64, correction: &Mat) -> Mat {
    let n = correction.rows();
    let mut data: Vec<f64> = shifted_sum.iter().zip(correction.data()).map(|(s, c)| s / k - c).collect();
    // Symmetrize away rounding from the two accumulation orders.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (data[i * n + j] + data[j * n + i]);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Mat::from_raw(n, n, data)
}

/// Fits per-filter projections from a list of maps for each filter.
pub fn fit_2d2pca(maps: &[Vec<Mat>], d: usize, r: usize) -> Result<TwoDPcaModel> {
    let q = maps.len();
    if q == 0 {
        return Err(arg_err!("no filters to fit"));
    }
    let count = maps[0].len();
    if maps.iter().any(|m| m.len() != count) {
        return Err(dim_err!("filters have different numbers of maps"));
    }
    let mut acc = TwoDPcaAccumulator::new();
    for i in 0..count {
        let (h, w) = (maps[0][i].rows(), maps[0][i].cols());
        let mut stack = Tensor3::zeros(h, w, q);
        for (k, filter_maps) in maps.iter().enumerate() {
            let m = &filter_maps[i];
            if (m.rows(), m.cols()) != (h, w) {
                return Err(dim_err!("map {i} of filter {k} has shape {}x{}", m.rows(), m.cols()));
            }
            stack.channel_mut(k).copy_from_slice(m.data());
        }
        acc.push(&stack)?;
    }
    acc.finish(d, r)
}

impl TwoDPcaModel {
    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }

    /// `Qᵀ P W` for the given filter; the map is not centered.
    pub fn apply(&self, filter: usize, p: &Mat) -> Result<Mat> {
        let f = self.filters.get(filter).ok_or_else(|| arg_err!("filter {filter} out of {}", self.filters.len()))?;
        let n = f.w.rows();
        if p.rows() != n || p.cols() != n {
            return Err(dim_err!("map is {}x{}, model expects {n}x{n}", p.rows(), p.cols()));
        }
        matmul_tn(&f.q, &matmul(p, &f.w)?)
    }

    /// Scalar `q₁ᵀ P w₁` for a raw channel slice, without allocating.
    pub(crate) fn leading_scalar(&self, filter: usize, plane: &[f64]) -> Result<f64> {
        let f = self.filters.get(filter).ok_or_else(|| arg_err!("filter {filter} out of {}", self.filters.len()))?;
        let n = f.w.rows();
        if plane.len() != n * n {
            return Err(dim_err!("map has {} entries, model expects {n}x{n}", plane.len()));
        }
        let mut s = 0.0;
        for i in 0..n {
            let qi = f.q.get(i, 0);
            let row = &plane[i * n..(i + 1) * n];
            let pw: f64 = (0..n).map(|j| row[j] * f.w.get(j, 0)).sum();
            s += qi * pw;
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (j, f) in self.filters.iter().enumerate() {
            let n = f.w.rows();
            if f.q.rows() != n || f.mean_map.rows() != n || f.mean_map.cols() != n {
                return Err(dim_err!("filter {j} has inconsistent 2D²PCA shapes"));
            }
        }
        Ok(())
    }
}
