use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::seed::{stage_rng, Stage};

pub const MIN_TRIALS_FOR_SPLIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DataError> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DataError::Split(format!("ratios must be non-negative: {all:?}")));
        }
        if self.train <= 0.0 {
            return Err(DataError::Split("train ratio must be positive".into()));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Split(format!("ratios must sum to 1: {all:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitAssignment {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

/// Shuffles the sorted ids with the split stream of `seed`; val and test get
/// `floor(n * ratio)` trials, training gets the rest.
pub fn make_split(
    ids: &[String],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, DataError> {
    ratios.validate()?;
    let n = ids.len();
    if n < MIN_TRIALS_FOR_SPLIT {
        return Err(DataError::Split(format!(
            "need at least {MIN_TRIALS_FOR_SPLIT} trials, got {n}"
        )));
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != n {
        return Err(DataError::Split("duplicate ids".into()));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    order.shuffle(&mut stage_rng(seed, Stage::Split, ""));

    // small epsilon keeps e.g. 0.1 * 30 from flooring to 2
    let n_val = (n as f64 * ratios.val + 1e-9).floor() as usize;
    let n_test = (n as f64 * ratios.test + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let test_ids = order.split_off(n_train + n_val);
    let val_ids = order.split_off(n_train);
    Ok(SplitAssignment {
        seed,
        ratios,
        train_ids: order,
        val_ids,
        test_ids,
    })
}
