use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Disjoint train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: within each stratum, items are shuffled by `seed` and
/// dealt out by the given validation and test fractions; the rest train.
pub fn stratified_split(strata: &[usize], val_frac: f64, test_frac: f64, seed: u64) -> Result<Split> {
    if !(val_frac > 0.0 && test_frac > 0.0 && val_frac + test_frac < 1.0) {
        return Err(Error::invalid("split fractions must be positive and leave room for training"));
    }
    let n_strata = strata.iter().copied().max().map_or(0, |m| m + 1);
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for s in 0..n_strata {
        let mut members: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == s).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut stream(seed, Stream::Split, &[s as u64]));
        let n = members.len() as f64;
        let n_test = (n * test_frac).round() as usize;
        let n_val = (n * val_frac).round() as usize;
        split.test.extend_from_slice(&members[..n_test]);
        split.val.extend_from_slice(&members[n_test..n_test + n_val]);
        split.train.extend_from_slice(&members[n_test + n_val..]);
    }
    for v in [&mut split.train, &mut split.val, &mut split.test] {
        v.sort_unstable();
    }
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::invalid(format!("{} items are too few for a train/val/test split", strata.len())));
    }
    Ok(split)
}
