//! Text-generation models: a recurrent next-word model and encoder-decoder
//! models with and without attention, plus rank utilities over their
//! output distributions.

mod model;
mod rank;

pub use model::{ExampleStats, ModelConfig, ParamSet, Task, TextModel, CHECKPOINT_MAGIC};
pub use rank::{argmax, nll_loss, rank_of, ranking, truncate_topk, PROB_FLOOR};

use crate::corpus::Example;
use crate::error::Result;

/// Anything that yields teacher-forced per-position distributions.
pub trait Predictor: Sync {
    fn vocab_size(&self) -> usize;
    fn example_distributions(&self, ex: &Example) -> Result<Vec<Vec<f64>>>;
}

impl Predictor for TextModel {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn example_distributions(&self, ex: &Example) -> Result<Vec<Vec<f64>>> {
        TextModel::example_distributions(self, ex)
    }
}
