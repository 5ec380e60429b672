//! ν-one-class SVM with a Gaussian kernel, trained by pairwise SMO on the dual.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::numeric::squared_distance;

/// Samples up to this count get a precomputed Gram matrix.
const FULL_GRAM_LIMIT: usize = 4096;
const KKT_TOL: f64 = 1e-6;
const MAX_UPDATES: usize = 1_000_000;
const SV_THRESHOLD: f64 = 1e-10;
/// Slack below the box bound for counting a vector as on the margin.
const MARGIN_TOL: f64 = 1e-8;

pub fn gaussian_kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!("kernel arguments have lengths {} and {}", a.len(), b.len()));
    }
    if !(gamma > 0.0) {
        return Err(arg_err!("kernel width gamma must be positive, got {gamma}"));
    }
    Ok((-gamma * squared_distance(a, b)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Training set size, which fixes the box bound `1 / (nu * n)`.
    pub n_train: usize,
}

struct Kernel<'a> {
    samples: &'a [Vec<f64>],
    gamma: f64,
    gram: Option<Vec<f64>>,
}

impl<'a> Kernel<'a> {
    fn new(samples: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = samples.len();
        let gram = (n <= FULL_GRAM_LIMIT).then(|| {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                g[i * n + i] = 1.0;
                for j in 0..i {
                    let v = (-gamma * squared_distance(&samples[i], &samples[j])).exp();
                    g[i * n + j] = v;
                    g[j * n + i] = v;
                }
            }
            g
        });
        Self { samples, gamma, gram }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.gram {
            Some(g) => g[i * self.samples.len() + j],
            None if i == j => 1.0,
            None => (-self.gamma * squared_distance(&self.samples[i], &self.samples[j])).exp(),
        }
    }

    fn column(&self, i: usize, out: &mut [f64]) {
        let n = self.samples.len();
        match &self.gram {
            Some(g) => out.copy_from_slice(&g[i * n..(i + 1) * n]),
            None => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = self.entry(i, j);
                }
            }
        }
    }
}

/// Dual objective `½ αᵀ K α` for the given coefficients.
pub fn dual_objective(samples: &[Vec<f64>], alphas: &[f64], gamma: f64) -> f64 {
    let k = Kernel::new(samples, gamma);
    let mut total = 0.0;
    for i in 0..samples.len() {
        for j in 0..samples.len() {
            total += alphas[i] * alphas[j] * k.entry(i, j);
        }
    }
    0.5 * total
}

/// Solves `min ½ αᵀKα` subject to `0 ≤ α ≤ 1/(νn)` and `Σα = 1`.
///
/// Returns the full coefficient vector and the gradient `Kα`.
fn smo(kernel: &Kernel<'_>, bound: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = kernel.samples.len();
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = bound.min(remaining);
        remaining -= *a;
    }
    let mut grad = vec![0.0; n];
    let mut col = vec![0.0; n];
    for i in 0..n {
        if alpha[i] > 0.0 {
            kernel.column(i, &mut col);
            for (g, k) in grad.iter_mut().zip(&col) {
                *g += alpha[i] * k;
            }
        }
    }
    let mut col_j = vec![0.0; n];
    for _ in 0..MAX_UPDATES {
        let mut up: Option<usize> = None;
        let mut down: Option<usize> = None;
        for t in 0..n {
            if alpha[t] < bound && up.is_none_or(|u| grad[t] < grad[u]) {
                up = Some(t);
            }
            if alpha[t] > 0.0 && down.is_none_or(|d| grad[t] > grad[d]) {
                down = Some(t);
            }
        }
        let (i, j) = match (up, down) {
            (Some(i), Some(j)) => (i, j),
            _ => return Ok((alpha, grad)),
        };
        let gap = grad[j] - grad[i];
        if gap <= KKT_TOL {
            return Ok((alpha, grad));
        }
        let eta = (kernel.entry(i, i) + kernel.entry(j, j) - 2.0 * kernel.entry(i, j)).max(1e-12);
        let room_i = bound - alpha[i];
        let delta = (gap / eta).min(room_i).min(alpha[j]);
        if delta == room_i {
            alpha[i] = bound;
        } else {
            alpha[i] += delta;
        }
        if delta == alpha[j] {
            alpha[j] = 0.0;
        } else {
            alpha[j] -= delta;
        }
        kernel.column(i, &mut col);
        kernel.column(j, &mut col_j);
        for t in 0..n {
            grad[t] += delta * (col[t] - col_j[t]);
        }
    }
    Err(Error::Numerical(format!("one-class SMO did not reach KKT tolerance {KKT_TOL} after {MAX_UPDATES} updates")))
}

/// Trains on equal-length feature vectors.
pub fn fit_ocsvm(samples: &[Vec<f64>], nu: f64, gamma: f64) -> Result<OcSvmModel> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("one-class SVM needs at least 2 samples, got {}", samples.len())));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(arg_err!("nu must lie in (0, 1], got {nu}"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(arg_err!("gamma must be positive, got {gamma}"));
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().position(|s| s.len() != dim) {
        return Err(dim_err!("sample {bad} has length {}, expected {dim}", samples[bad].len()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training feature".into()));
    }
    let n = samples.len();
    let bound = 1.0 / (nu * n as f64);
    let kernel = Kernel::new(samples, gamma);
    let (alpha, grad) = smo(&kernel, bound)?;

    let mut margin: Vec<f64> =
        (0..n).filter(|&i| alpha[i] > SV_THRESHOLD && alpha[i] < bound - MARGIN_TOL).map(|i| grad[i]).collect();
    let rho = if margin.is_empty() {
        (0..n).filter(|&i| alpha[i] > SV_THRESHOLD).map(|i| grad[i]).fold(f64::NEG_INFINITY, f64::max)
    } else {
        margin.sort_by(f64::total_cmp);
        let m = margin.len();
        if m % 2 == 1 {
            margin[m / 2]
        } else {
            0.5 * (margin[m / 2 - 1] + margin[m / 2])
        }
    };

    let keep: Vec<usize> = (0..n).filter(|&i| alpha[i] > SV_THRESHOLD).collect();
    Ok(OcSvmModel {
        support_vectors: keep.iter().map(|&i| samples[i].clone()).collect(),
        alphas: keep.iter().map(|&i| alpha[i]).collect(),
        rho,
        gamma,
        nu,
        n_train: n,
    })
}

impl OcSvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// `ĥ = Σ α_k κ(v, v_k)`.
    pub fn decision(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(dim_err!("feature vector has length {}, model expects {}", v.len(), self.dim()));
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * (-self.gamma * squared_distance(v, sv)).exp())
            .sum())
    }

    /// Novel iff `ĥ < ρ − ε`. The score `(ρ − ε) − ĥ` is positive exactly
    /// for novel verdicts; a tie is normal.
    pub fn classify(&self, v: &[f64], epsilon: f64) -> Result<(Verdict, f64)> {
        let h = self.decision(v)?;
        let threshold = self.rho - epsilon;
        let verdict = if h < threshold { Verdict::Novel } else { Verdict::Normal };
        Ok((verdict, threshold - h))
    }

    /// Checks the dual feasibility invariants.
    pub fn validate(&self) -> Result<()> {
        if self.support_vectors.len() != self.alphas.len() || self.support_vectors.is_empty() {
            return Err(dim_err!("{} support vectors with {} coefficients", self.support_vectors.len(), self.alphas.len()));
        }
        let d = self.dim();
        if self.support_vectors.iter().any(|s| s.len() != d) {
            return Err(dim_err!("support vectors have unequal lengths"));
        }
        if !(self.gamma > 0.0) || !(self.nu > 0.0 && self.nu <= 1.0) || !self.rho.is_finite() {
            return Err(arg_err!("invalid hyperparameters gamma={}, nu={}, rho={}", self.gamma, self.nu, self.rho));
        }
        let bound = 1.0 / (self.nu * self.n_train as f64) + 1e-12;
        if self.alphas.iter().any(|a| !(*a >= 0.0 && *a <= bound)) {
            return Err(arg_err!("coefficient outside [0, {bound}]"));
        }
        let total: f64 = self.alphas.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(arg_err!("coefficients sum to {total}, expected 1"));
        }
        Ok(())
    }
}
