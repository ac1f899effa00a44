use serde::{Deserialize, Serialize};

use crate::corpus::{Example, TokenId, UserDataset, Vocabulary};
use crate::error::{invalid, Result};
use crate::seed;

/// How an auditor picks which of a user's examples to send.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    Random,
    /// Examples whose target words are rarest in the reference corpus.
    Frequency,
}

/// Word counts visible to the auditor. Unknown tokens count 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: Vec<u64>,
}

impl FrequencyTable {
    /// Counts target tokens over the auditor's reference data.
    pub fn from_datasets(data: &[UserDataset]) -> Self {
        let mut counts = Vec::new();
        for t in data.iter().flat_map(|u| u.examples.iter()).flat_map(|e| e.y.iter()) {
            if *t >= counts.len() {
                counts.resize(t + 1, 0);
            }
            counts[*t] += 1;
        }
        Self { counts }
    }

    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        Self {
            counts: (0..vocab.size()).map(|i| vocab.freq(i)).collect(),
        }
    }

    pub fn freq(&self, token: TokenId) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    /// `C(x, y)`: summed frequency of the example's target words.
    pub fn example_cost(&self, ex: &Example) -> u64 {
        ex.y.iter().map(|&t| self.freq(t)).sum()
    }
}

/// Picks up to `m` query examples from `user_data`.
///
/// `Frequency` returns the `m` examples with the smallest summed target-word
/// frequency (earlier index wins ties), cheapest first. `Random` returns a
/// seeded uniform sample in original order. With `m >= len` every example is
/// returned.
pub fn sample_queries(
    user_data: &[Example],
    m: usize,
    strategy: QueryStrategy,
    freq: &FrequencyTable,
    seed: u64,
) -> Result<Vec<Example>> {
    if m == 0 {
        return Err(invalid("number of queries must be at least 1"));
    }
    if m >= user_data.len() {
        return Ok(user_data.to_vec());
    }
    let idx: Vec<usize> = match strategy {
        QueryStrategy::Frequency => {
            let mut order: Vec<(u64, usize)> =
                user_data.iter().enumerate().map(|(i, e)| (freq.example_cost(e), i)).collect();
            order.sort_unstable();
            order.into_iter().take(m).map(|(_, i)| i).collect()
        }
        QueryStrategy::Random => {
            let mut rng = seed::rng(seed);
            let mut idx = rand::seq::index::sample(&mut rng, user_data.len(), m).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    Ok(idx.into_iter().map(|i| user_data[i].clone()).collect())
}
