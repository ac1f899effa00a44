//! Corpus ingestion, tokenization, vocabulary construction and the user-level
//! splits used by the target, shadow, test and noise roles.

mod records;
mod split;
pub mod synthetic;
mod vocab;

pub use records::{group_users, read_jsonl, tokenize, write_jsonl, CorpusRecord, RawRecord, RawUser};
pub use split::{noise_holdout, partition_artificial_users, CorpusSplit};
pub use vocab::{build_vocabulary, Vocabulary, UNK_TOKEN};

use serde::{Deserialize, Serialize};

/// Index into a [`Vocabulary`].
pub type TokenId = usize;

/// One training or query pair.
///
/// For next-word examples `y` is `x` shifted left by one; for
/// sequence-to-sequence examples `x` is the source and `y` the target.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<TokenId>,
    pub y: Vec<TokenId>,
}

impl Example {
    /// Number of target tokens.
    pub fn target_len(&self) -> usize {
        self.y.len()
    }
}

/// All examples belonging to one (real or artificial) user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserDataset {
    pub user_id: String,
    pub examples: Vec<Example>,
}

impl UserDataset {
    pub fn new(user_id: impl Into<String>, examples: Vec<Example>) -> Self {
        Self {
            user_id: user_id.into(),
            examples,
        }
    }

    pub fn target_tokens(&self) -> usize {
        self.examples.iter().map(Example::target_len).sum()
    }

    /// Largest token id referenced by any example, if any.
    pub fn max_token(&self) -> Option<TokenId> {
        self.examples
            .iter()
            .flat_map(|e| e.x.iter().chain(e.y.iter()))
            .copied()
            .max()
    }
}

/// Splits one encoded token sequence into next-word examples.
///
/// The sequence is cut into consecutive windows of at most `max_len` tokens;
/// each window `w` yields `x = w[..n-1]`, `y = w[1..]`. Windows shorter than
/// two tokens are dropped.
pub fn make_lm_examples(sequence: &[TokenId], max_len: usize) -> Vec<Example> {
    if max_len < 2 {
        return Vec::new();
    }
    sequence
        .chunks(max_len)
        .filter(|w| w.len() >= 2)
        .map(|w| Example {
            x: w[..w.len() - 1].to_vec(),
            y: w[1..].to_vec(),
        })
        .collect()
}

/// Encodes one raw user with `vocab`. Text records become next-word windows,
/// pair records become one sequence-to-sequence example each.
pub fn encode_user(user: &RawUser, vocab: &Vocabulary, window: usize) -> UserDataset {
    let mut examples = Vec::new();
    for rec in &user.records {
        match rec {
            RawRecord::Text(tokens) => {
                examples.extend(make_lm_examples(&vocab.encode(tokens), window));
            }
            RawRecord::Pair { source, target } => {
                let x = vocab.encode(source);
                let y = vocab.encode(target);
                if !x.is_empty() && !y.is_empty() {
                    examples.push(Example { x, y });
                }
            }
        }
    }
    UserDataset::new(user.user_id.clone(), examples)
}
