#![allow(dead_code)]

use paud::corpus::Example;
use paud::eval::{ExperimentConfig, ModelSpec};
use paud::nn::CellKind;
use paud::textgen::{ModelConfig, ParamSet, Task, TextModel};
use paud::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale experiment: 20 members, 20 non-members, 40 reference users,
/// a 32/32 LSTM trained for 30 epochs, 10 shadows.
pub fn toy_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.sentences_per_user = 20;
    cfg.target_model = ModelSpec {
        task: Task::NextWord,
        cell: CellKind::Lstm,
        emb_dim: 32,
        hidden_dim: 32,
        dropout_rate: 0.0,
        ..ModelSpec::default()
    };
    cfg.target_train = TrainConfig {
        learning_rate: 0.01,
        batch_size: 10,
        epochs: 30,
        ..TrainConfig::default()
    };
    cfg.k_shadows = 10;
    cfg
}

pub fn tiny_config(task: Task, cell: CellKind, dropout_rate: f64) -> ModelConfig {
    ModelConfig {
        task,
        cell,
        emb_dim: 4,
        hidden_dim: 6,
        dropout_rate,
        vocab_size: 10,
        seed: 17,
        init_scale: 0.5,
    }
}

pub fn random_example(task: Task, vocab: usize, rng: &mut ChaCha8Rng) -> Example {
    let draw = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(0..vocab)).collect::<Vec<_>>();
    match task {
        Task::NextWord => {
            let seq = draw(6, rng);
            Example { x: seq[..5].to_vec(), y: seq[1..].to_vec() }
        }
        _ => Example { x: draw(4, rng), y: draw(5, rng) },
    }
}

fn loss(model: &TextModel, ex: &Example, drop_seed: u64) -> f64 {
    let mut scratch = model.params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(drop_seed);
    model.loss_and_grad(ex, Some(&mut rng), &mut scratch, 1.0).unwrap().loss
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter, with step `h`.
pub fn max_gradient_error(cfg: &ModelConfig, ex: &Example, h: f64) -> f64 {
    let mut model = TextModel::new(cfg.clone()).unwrap();
    let drop_seed = 99;
    let mut grad: ParamSet = model.params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(drop_seed);
    model.loss_and_grad(ex, Some(&mut rng), &mut grad, 1.0).unwrap();
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.data.clone()).collect();

    let mut worst = 0.0f64;
    let n_tensors = analytic.len();
    for ti in 0..n_tensors {
        for k in 0..analytic[ti].len() {
            let orig = model.params.tensors()[ti].data[k];
            model.params.tensors_mut()[ti].data[k] = orig + h;
            let up = loss(&model, ex, drop_seed);
            model.params.tensors_mut()[ti].data[k] = orig - h;
            let down = loss(&model, ex, drop_seed);
            model.params.tensors_mut()[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub const ARCHITECTURES: [(&str, Task, CellKind); 6] = [
    ("lm-lstm", Task::NextWord, CellKind::Lstm),
    ("lm-gru", Task::NextWord, CellKind::Gru),
    ("seq2seq-attn-lstm", Task::Seq2seqAttn, CellKind::Lstm),
    ("seq2seq-attn-gru", Task::Seq2seqAttn, CellKind::Gru),
    ("seq2seq-plain-lstm", Task::Seq2seqPlain, CellKind::Lstm),
    ("seq2seq-plain-gru", Task::Seq2seqPlain, CellKind::Gru),
];

/// A small synthetic next-word corpus encoded with its own vocabulary.
pub fn small_corpus(n_users: usize, sentences: usize, seed: u64) -> (paud::corpus::Vocabulary, Vec<paud::corpus::UserDataset>) {
    use paud::corpus::{build_vocabulary, encode_user, group_users, synthetic};
    let cfg = synthetic::SyntheticConfig {
        n_users,
        sentences_per_user: sentences,
        common_words: 40,
        seed,
        ..Default::default()
    };
    let users = group_users(&synthetic::generate(&cfg).unwrap());
    let vocab = build_vocabulary(&users, 5000).unwrap();
    let data = users.iter().map(|u| encode_user(u, &vocab, 20)).collect();
    (vocab, data)
}

/// Small LSTM that memorizes a handful of users within a few seconds.
pub fn memorizing_model(vocab_size: usize, seed: u64) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        task: Task::NextWord,
        cell: CellKind::Lstm,
        emb_dim: 24,
        hidden_dim: 32,
        dropout_rate: 0.0,
        vocab_size,
        seed,
        init_scale: 0.1,
    };
    let train = TrainConfig {
        learning_rate: 0.01,
        batch_size: 10,
        epochs: 40,
        seed,
        ..TrainConfig::default()
    };
    (model, train)
}
