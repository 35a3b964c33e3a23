//! Deterministic train/val/test partitioning.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Fractions for the three splits plus the shuffle seed.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.70, val: 0.15, test: 0.15, seed: 0 }
    }
}

impl SplitSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Shuffles by seed, then takes round(train*N) / round(val*N) / remainder.
pub fn split_dataset<T>(items: Vec<T>, spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if (spec.train + spec.val + spec.test - 1.0).abs() > 1e-9 {
        return Err(Error::Config { detail: "split fractions must sum to 1".into() });
    }
    let n = items.len();
    if n < 3 {
        return Err(Error::Config { detail: format!("split needs at least 3 items, got {n}") });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(spec.seed, "dataset-split"));
    let n_train = ((spec.train * n as f64).round() as usize).min(n);
    let n_val = ((spec.val * n as f64).round() as usize).min(n - n_train);

    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<T> {
        ids.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok((train, val, test))
}
