use serde::{Deserialize, Serialize};

use crate::blackbox::TargetHandle;
use crate::corpus::Example;
use crate::error::{invalid, Result};

/// Ranks of ground-truth tokens collected from a target's outputs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSet {
    /// 0-indexed ranks of targets that appeared in the returned lists.
    pub ranks: Vec<usize>,
    /// Targets missing from the truncated output.
    pub out_of_list: usize,
}

impl RankSet {
    pub fn total(&self) -> usize {
        self.ranks.len() + self.out_of_list
    }

    /// Adds the ranks of `targets` within one query's positions.
    pub fn record(&mut self, positions: &[Vec<usize>], targets: &[usize]) {
        for (list, t) in positions.iter().zip(targets) {
            match list.iter().position(|w| w == t) {
                Some(r) => self.ranks.push(r),
                None => self.out_of_list += 1,
            }
        }
    }
}

/// Queries `handle` with every example and records where each target token
/// landed in the ranked output.
pub fn collect_ranks(handle: &TargetHandle, data: &[Example]) -> Result<RankSet> {
    if data.is_empty() {
        return Err(invalid("no queries to collect ranks from"));
    }
    let mut set = RankSet::default();
    for ex in data {
        let res = handle.query_example(ex)?;
        if res.positions.len() != ex.y.len() {
            return Err(crate::Error::Protocol(format!(
                "expected {} positions, got {}",
                ex.y.len(),
                res.positions.len()
            )));
        }
        set.record(&res.positions, &ex.y);
    }
    Ok(set)
}

/// `d` rank-histogram bins of width `ceil(|V|/d)` plus the out-of-list count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bins: Vec<u64>,
    pub out_of_list: u64,
    pub bin_width: usize,
}

impl FeatureVector {
    pub fn d(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.out_of_list
    }

    /// The `d + 1` classifier inputs: bins then out-of-list, optionally
    /// L1-normalized.
    pub fn values(&self, normalize: bool) -> Vec<f64> {
        let mut v: Vec<f64> = self.bins.iter().map(|&c| c as f64).collect();
        v.push(self.out_of_list as f64);
        let total = self.total();
        if normalize && total > 0 {
            v.iter_mut().for_each(|x| *x /= total as f64);
        }
        v
    }
}

/// Bins `ranks` into `d` half-open intervals `[i*b, (i+1)*b)`.
pub fn histogram_feature(ranks: &RankSet, d: usize, vocab_size: usize) -> Result<FeatureVector> {
    if d == 0 {
        return Err(invalid("number of bins must be at least 1"));
    }
    if vocab_size == 0 {
        return Err(invalid("vocabulary size must be at least 1"));
    }
    let b = vocab_size.div_ceil(d);
    let mut bins = vec![0u64; d];
    for &r in &ranks.ranks {
        if r >= vocab_size {
            return Err(invalid(format!("rank {r} outside vocabulary of {vocab_size}")));
        }
        bins[r / b] += 1;
    }
    Ok(FeatureVector {
        bins,
        out_of_list: ranks.out_of_list as u64,
        bin_width: b,
    })
}
