use crate::error::{arg_err, dim_err, Result};

use super::Mat;

/// Strided operand for [`gemm`]: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct Strided<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Strided<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Row-major storage of a `cols`-wide matrix read as its transpose.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs
        }
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, with `c` row-major `m x n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: Strided<'_>, b: Strided<'_>, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.max_index(m, k) < a.data.len());
        assert!(b.max_index(k, n) < b.data.len());
    }
    // SAFETY: every index touched by dgemm was bounds-checked against the
    // slice lengths above; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols() != b.rows() {
        return Err(dim_err!("matmul {}x{} by {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
    }
    let mut out = vec![0.0; a.rows() * b.cols()];
    gemm(
        a.rows(),
        a.cols(),
        b.cols(),
        1.0,
        Strided::row_major(a.data(), a.cols()),
        Strided::row_major(b.data(), b.cols()),
        0.0,
        &mut out,
    );
    Ok(Mat::from_raw(a.rows(), b.cols(), out))
}

/// `aᵀ b` without materializing the transpose.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.rows() != b.rows() {
        return Err(dim_err!("matmul_tn {}x{}ᵀ by {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
    }
    let mut out = vec![0.0; a.cols() * b.cols()];
    gemm(
        a.cols(),
        a.rows(),
        b.cols(),
        1.0,
        Strided::transposed(a.data(), a.cols()),
        Strided::row_major(b.data(), b.cols()),
        0.0,
        &mut out,
    );
    Ok(Mat::from_raw(a.cols(), b.cols(), out))
}

/// `a bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols() != b.cols() {
        return Err(dim_err!("matmul_nt {}x{} by {}x{}ᵀ", a.rows(), a.cols(), b.rows(), b.cols()));
    }
    let mut out = vec![0.0; a.rows() * b.rows()];
    gemm(
        a.rows(),
        a.cols(),
        b.rows(),
        1.0,
        Strided::row_major(a.data(), a.cols()),
        Strided::transposed(b.data(), b.cols()),
        0.0,
        &mut out,
    );
    Ok(Mat::from_raw(a.rows(), b.rows(), out))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-9;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of the second matrix. Each eigenvector is sign-canonicalized
/// so that its largest-magnitude entry (first one on ties) is non-negative.
pub fn eigh_symmetric(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = m.rows();
    if n != m.cols() {
        return Err(dim_err!("eigh needs a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    if n == 0 {
        return Err(arg_err!("eigh of an empty matrix"));
    }
    let scale = m.data().iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.get(i, j) - m.get(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(arg_err!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }

    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }
    let mut v = Mat::identity(n).into_data();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off < JACOBI_OFF_TOL {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Negligible relative to both diagonals: annihilate without rotating.
                if apq.abs() <= f64::EPSILON * 0.25 * (app.abs().min(aqq.abs())) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps index order among equal eigenvalues.
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut best = 0;
        for k in 1..n {
            if v[k * n + src].abs() > v[best * n + src].abs() {
                best = k;
            }
        }
        let sign = if v[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors.set(k, dst, sign * v[k * n + src]);
        }
    }
    Ok((values, vectors))
}
