//! Training loops and the word-prediction evaluation metrics.

mod optim;

pub use optim::{Optimizer, OptimizerKind};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, UserDataset};
use crate::error::{invalid, Error, Result};
use crate::seed;
use crate::textgen::{argmax, ModelConfig, ParamSet, Predictor, TextModel, PROB_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    /// Adam at 1e-3, batches of 35, 30 epochs.
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 35,
            epochs: 30,
            seed: 0,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Momentum SGD (lr 0.01, momentum 0.9, 50 epochs), the recipe used for
    /// shadows whose hyper-parameters deliberately differ from the target's.
    pub fn momentum_sgd() -> Self {
        Self {
            optimizer: OptimizerKind::MomentumSgd,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-token NLL (natural log).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

impl EpochMetrics {
    /// `epoch<TAB>loss<TAB>accuracy<TAB>validation accuracy` (last field
    /// empty when there is no validation set).
    pub fn log_line(&self) -> String {
        let val = self
            .validation_accuracy
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        format!("{}\t{:.6}\t{:.6}\t{}", self.epoch, self.train_loss, self.train_accuracy, val)
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: TextModel,
    pub history: Vec<EpochMetrics>,
}

/// Trains a fresh model on every example of every user in `data`.
pub fn train_model(model_config: &ModelConfig, train_config: &TrainConfig, data: &[UserDataset]) -> Result<TrainedModel> {
    train_model_with(model_config, train_config, data, None, |_| {})
}

/// As [`train_model`], with optional validation data and a per-epoch callback.
pub fn train_model_with<F: FnMut(&EpochMetrics)>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: &[UserDataset],
    validation: Option<&[UserDataset]>,
    mut on_epoch: F,
) -> Result<TrainedModel> {
    train_config.validate()?;
    let examples: Vec<&Example> = data.iter().flat_map(|u| u.examples.iter()).collect();
    if examples.is_empty() {
        return Err(invalid("no training examples"));
    }
    let mut model = TextModel::new(model_config.clone())?;
    let mut grad = model.params.zeros_like();
    let mut opt = Optimizer::new(train_config, &model.params);
    let mut rng = seed::rng(train_config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(train_config.epochs);

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut tokens, mut correct) = (0.0, 0usize, 0usize);
        for batch in order.chunks(train_config.batch_size) {
            let batch_tokens: usize = batch.iter().map(|&i| examples[i].y.len()).sum();
            let scale = 1.0 / batch_tokens.max(1) as f64;
            grad.fill_zero();
            for &i in batch {
                let s = model.loss_and_grad(examples[i], Some(&mut rng), &mut grad, scale)?;
                loss += s.loss;
                tokens += s.tokens;
                correct += s.correct;
            }
            clip_global_norm(&mut grad, train_config.clip_norm);
            opt.step(&mut model.params, &grad);
        }
        let train_loss = loss / tokens as f64;
        if !train_loss.is_finite() || !model.params.is_finite() {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let validation_accuracy = match validation {
            Some(v) if v.iter().any(|u| !u.examples.is_empty()) => Some(evaluate_accuracy(&model, v)?),
            _ => None,
        };
        let m = EpochMetrics {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / tokens as f64,
            validation_accuracy,
        };
        log::debug!("{}", m.log_line());
        on_epoch(&m);
        history.push(m);
    }
    Ok(TrainedModel { model, history })
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grad: &mut ParamSet, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.global_norm();
    if norm > max_norm {
        grad.scale(max_norm / norm);
    }
}

/// Accuracy and perplexity over a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub perplexity: f64,
    /// Total number of target tokens `M`.
    pub token_count: usize,
}

/// Word-prediction accuracy and base-2 perplexity in one pass.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, data: &[UserDataset]) -> Result<EvalReport> {
    let mut correct = 0usize;
    let mut log2_sum = 0.0;
    let mut m = 0usize;
    for ex in data.iter().flat_map(|u| u.examples.iter()) {
        let dists = model.example_distributions(ex)?;
        for (d, &t) in dists.iter().zip(&ex.y) {
            if argmax(d) == t {
                correct += 1;
            }
            log2_sum += d[t].max(PROB_FLOOR).log2();
            m += 1;
        }
    }
    if m == 0 {
        return Err(invalid("evaluation data has no target tokens"));
    }
    Ok(EvalReport {
        accuracy: correct as f64 / m as f64,
        perplexity: 2f64.powf(-log2_sum / m as f64),
        token_count: m,
    })
}

/// Fraction of target tokens whose argmax prediction is correct.
pub fn evaluate_accuracy<P: Predictor + ?Sized>(model: &P, data: &[UserDataset]) -> Result<f64> {
    Ok(evaluate(model, data)?.accuracy)
}

/// `2^(-(1/M) * sum log2 p(target))`.
pub fn evaluate_perplexity<P: Predictor + ?Sized>(model: &P, data: &[UserDataset]) -> Result<f64> {
    Ok(evaluate(model, data)?.perplexity)
}
