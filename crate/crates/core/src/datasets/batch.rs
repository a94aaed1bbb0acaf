use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn new(batch_size: usize, shuffle: bool, seed: u64, drop_last: bool) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 for pairwise similarities, got {batch_size}"
            )));
        }
        Ok(Self {
            batch_size,
            shuffle,
            seed,
            drop_last,
        })
    }
}

/// Index lists for one epoch over `n` items. With `drop_last` the epoch has
/// `n / M` full batches; otherwise the last batch may be short.
pub fn batches(n: usize, plan: &BatchPlan, epoch: u64) -> Result<Vec<Vec<usize>>> {
    let m = plan.batch_size;
    if m < 2 {
        return Err(Error::Config(format!("batch size {m} is below 2")));
    }
    if m > n {
        return Err(Error::Config(format!(
            "batch size {m} exceeds dataset size {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if plan.shuffle {
        order.shuffle(&mut rng::stream(plan.seed, &[rng::SHUFFLE, epoch]));
    }
    let mut out: Vec<Vec<usize>> = order.chunks(m).map(<[usize]>::to_vec).collect();
    if plan.drop_last && out.last().is_some_and(|b| b.len() < m) {
        out.pop();
    }
    Ok(out)
}
