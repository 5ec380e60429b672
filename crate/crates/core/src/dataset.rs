//! Labeled image collections and their train/validation/test partition.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numeric::{Rng, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Disjoint, exhaustive index partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Random 70:20:10 partition of `n` indices; each part is sorted.
    pub fn random_70_20_10(n: usize, rng: &mut Rng) -> Self {
        let perm = rng.permutation(n);
        let n_train = n * 7 / 10;
        let n_val = n * 2 / 10;
        let mut train = perm[..n_train].to_vec();
        let mut validation = perm[n_train..n_train + n_val].to_vec();
        let mut test = perm[n_train + n_val..].to_vec();
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        Self { train, validation, test }
    }

    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }

    /// Which part each of the `n` indices belongs to; errors unless the
    /// partition is disjoint and exhaustive.
    pub fn assignment(&self, n: usize) -> Result<Vec<SplitPart>> {
        let mut seen: Vec<Option<SplitPart>> = vec![None; n];
        for part in [SplitPart::Train, SplitPart::Validation, SplitPart::Test] {
            for &i in self.part(part) {
                let slot = seen.get_mut(i).ok_or_else(|| arg_err!("split index {i} out of range {n}"))?;
                if slot.is_some() {
                    return Err(arg_err!("split index {i} appears twice"));
                }
                *slot = Some(part);
            }
        }
        seen.into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| arg_err!("index {i} missing from split")))
            .collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.assignment(n).map(|_| ())
    }

    /// Split for a dataset of `n` frames followed by `copies` appended
    /// blocks of the same frames; each copy joins its source frame's part.
    pub fn with_copies(&self, n: usize, copies: usize) -> Split {
        let grow = |part: &[usize]| {
            let mut v: Vec<usize> = (0..=copies).flat_map(|b| part.iter().map(move |i| b * n + i)).collect();
            v.sort_unstable();
            v
        };
        Split { train: grow(&self.train), validation: grow(&self.validation), test: grow(&self.test) }
    }
}

/// Images with their state labels, plus episode start offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor3>,
    pub labels: Vec<Vec<f64>>,
    pub episode_starts: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            episode_starts: vec![0],
        }
    }
}
