//! Contiguous k-fold partitions of the time axis.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub blocks: Vec<Range<usize>>,
}

/// Splits `[0, t_steps)` into `k` ordered blocks; the first
/// `t_steps % k` blocks are one step longer.
pub fn kfold_split(t_steps: usize, k: usize) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if t_steps < 10 * k {
        return Err(Error::Config(format!(
            "series of {t_steps} steps is too short for {k} folds (need {})",
            10 * k
        )));
    }
    let base = t_steps / k;
    let extra = t_steps % k;
    let mut blocks = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        blocks.push(start..start + len);
        start += len;
    }
    Ok(FoldPlan { k, blocks })
}

impl FoldPlan {
    pub fn total(&self) -> usize {
        self.blocks.last().map(|b| b.end).unwrap_or(0)
    }

    /// Block used for evaluation.
    pub fn holdout(&self, fold: usize) -> Range<usize> {
        self.blocks[fold].clone()
    }

    /// The complement of the held-out block, as at most two ranges.
    pub fn train_ranges(&self, fold: usize) -> Vec<Range<usize>> {
        let h = &self.blocks[fold];
        [0..h.start, h.end..self.total()]
            .into_iter()
            .filter(|r| !r.is_empty())
            .collect()
    }

    /// Conventional evaluation fold: the last block.
    pub fn last(&self) -> usize {
        self.k - 1
    }
}
