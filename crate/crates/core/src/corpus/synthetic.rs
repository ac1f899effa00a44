//! Synthetic multi-user corpora.
//!
//! Each user's text mixes words drawn from one global Zipfian unigram
//! distribution with a handful of user-specific "signature" tokens and a few
//! fixed phrase templates the user keeps repeating. The result has the
//! frequent/rare split that drives rank-based membership signals: frequent
//! words behave the same for every user, rare signature words and repeated
//! phrases are only predictable after seeing that user's data.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::CorpusRecord;
use crate::error::{invalid, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// One `{user_id, text}` record per sentence.
    Lm,
    /// `{user_id, source, target}` with a deterministic word mapping and
    /// local reordering as the "translation".
    Translation,
    /// `{user_id, source, target}` where the target is the user's next sentence.
    Dialog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub task: SyntheticTask,
    pub n_users: usize,
    pub sentences_per_user: usize,
    /// Number of distinct Zipf-distributed word types.
    pub common_words: usize,
    pub zipf_exponent: f64,
    pub signature_tokens: usize,
    pub templates_per_user: usize,
    /// Probability that a sentence is one of the user's templates.
    pub template_rate: f64,
    /// Probability that a free sentence carries a signature token.
    pub signature_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Domain tag; non-zero values permute which word gets which frequency.
    pub domain: u64,
    /// Index of the first generated user; keeps ids and signature tokens of
    /// separately generated corpora apart.
    pub user_offset: usize,
    /// Terminate each sentence with a period token.
    pub punctuation: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            task: SyntheticTask::Lm,
            n_users: 60,
            sentences_per_user: 50,
            common_words: 200,
            zipf_exponent: 1.1,
            signature_tokens: 3,
            templates_per_user: 2,
            template_rate: 0.5,
            signature_rate: 0.5,
            min_len: 5,
            max_len: 12,
            domain: 0,
            user_offset: 0,
            punctuation: true,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.sentences_per_user == 0 {
            return Err(invalid("synthetic corpus needs at least one user and one sentence"));
        }
        if self.common_words == 0 {
            return Err(invalid("common_words must be positive"));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(invalid("zipf_exponent must be positive"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(invalid("need 1 <= min_len <= max_len"));
        }
        for (name, p) in [("template_rate", self.template_rate), ("signature_rate", self.signature_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// User id of the `i`-th generated user.
    pub fn user_id(i: usize) -> String {
        format!("user{i:04}")
    }
}

struct WordSampler {
    zipf: Zipf<f64>,
    names: Vec<String>,
}

impl WordSampler {
    fn new(cfg: &SyntheticConfig) -> Result<Self> {
        let zipf = Zipf::new(cfg.common_words as f64, cfg.zipf_exponent)
            .map_err(|e| invalid(format!("zipf parameters: {e}")))?;
        let mut order: Vec<usize> = (0..cfg.common_words).collect();
        if cfg.domain != 0 {
            order.shuffle(&mut seed::rng(seed::derive_seed_tagged(cfg.domain, "domain")));
        }
        let names = order.into_iter().map(|i| format!("w{i}")).collect();
        Ok(Self { zipf, names })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> String {
        let rank = self.zipf.sample(rng) as usize;
        self.names[rank.clamp(1, self.names.len()) - 1].clone()
    }

    fn sentence(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..len).map(|_| self.sample(rng)).collect()
    }
}

fn signature(user: usize, j: usize) -> String {
    format!("sig{user}x{j}")
}

fn user_sentences(cfg: &SyntheticConfig, words: &WordSampler, user: usize, count: usize) -> Vec<Vec<String>> {
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, user as u64));
    let sigs: Vec<String> = (0..cfg.signature_tokens).map(|j| signature(user, j)).collect();

    let templates: Vec<Vec<String>> = (0..cfg.templates_per_user)
        .map(|t| {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let mut s = words.sentence(len, &mut rng);
            if !sigs.is_empty() {
                let pos = rng.random_range(0..=s.len());
                s.insert(pos, sigs[t % sigs.len()].clone());
            }
            s
        })
        .collect();

    (0..count)
        .map(|_| {
            let mut s = if !templates.is_empty() && rng.random_bool(cfg.template_rate) {
                let t = rng.random_range(0..templates.len());
                let mut s = templates[t].clone();
                let extra = rng.random_range(0..=2);
                s.extend(words.sentence(extra, &mut rng));
                s
            } else {
                let len = rng.random_range(cfg.min_len..=cfg.max_len);
                let mut s = words.sentence(len, &mut rng);
                if !sigs.is_empty() && rng.random_bool(cfg.signature_rate) {
                    let pos = rng.random_range(0..=s.len());
                    let sig = sigs[rng.random_range(0..sigs.len())].clone();
                    s.insert(pos, sig);
                }
                s
            };
            if cfg.punctuation {
                s.push(".".to_string());
            }
            s
        })
        .collect()
}

/// Target side of the synthetic translation task: every word is mapped to a
/// target-language spelling and adjacent word pairs are swapped.
fn translate(source: &[String]) -> Vec<String> {
    let mut out: Vec<String> = source
        .iter()
        .map(|w| if w == "." { w.clone() } else { format!("t{w}") })
        .collect();
    let body = if out.last().map(String::as_str) == Some(".") {
        out.len() - 1
    } else {
        out.len()
    };
    for pair in out[..body].chunks_mut(2) {
        pair.reverse();
    }
    out
}

/// Generates the corpus records, user by user, deterministically in `cfg.seed`.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<CorpusRecord>> {
    cfg.validate()?;
    let words = WordSampler::new(cfg)?;
    let mut out = Vec::with_capacity(cfg.n_users * cfg.sentences_per_user);
    for u in cfg.user_offset..cfg.user_offset + cfg.n_users {
        let id = SyntheticConfig::user_id(u);
        match cfg.task {
            SyntheticTask::Lm => {
                for s in user_sentences(cfg, &words, u, cfg.sentences_per_user) {
                    out.push(CorpusRecord::text(id.clone(), s.join(" ")));
                }
            }
            SyntheticTask::Translation => {
                for s in user_sentences(cfg, &words, u, cfg.sentences_per_user) {
                    let t = translate(&s);
                    out.push(CorpusRecord::pair(id.clone(), s.join(" "), t.join(" ")));
                }
            }
            SyntheticTask::Dialog => {
                let s = user_sentences(cfg, &words, u, cfg.sentences_per_user + 1);
                for w in s.windows(2) {
                    out.push(CorpusRecord::pair(id.clone(), w[0].join(" "), w[1].join(" ")));
                }
            }
        }
    }
    Ok(out)
}

/// Share of the Zipf probability mass held by the `top` most likely of
/// `n` word types.
pub fn zipf_head_mass(n: usize, exponent: f64, top: usize) -> f64 {
    let w = |k: usize| (k as f64).powf(-exponent);
    let total: f64 = (1..=n).map(w).sum();
    let head: f64 = (1..=top.min(n)).map(w).sum();
    head / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, group_users, RawRecord};

    #[test]
    fn record_count_and_determinism() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a.len(), 3000);
        assert_eq!(a, generate(&cfg).unwrap());
        let other = generate(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn top_fifth_covers_most_mass() {
        let cfg = SyntheticConfig::default();
        let users = group_users(&generate(&cfg).unwrap());
        let vocab = build_vocabulary(&users, 5000).unwrap();
        let total: u64 = (0..vocab.size()).map(|i| vocab.freq(i)).sum();
        let top = (vocab.tokens().len() as f64 * 0.2).ceil() as usize;
        let head: u64 = (0..top).map(|i| vocab.freq(i)).sum();
        assert!(head as f64 / total as f64 >= 0.8, "head share {}", head as f64 / total as f64);
    }

    #[test]
    fn pair_tasks() {
        let base = SyntheticConfig {
            n_users: 2,
            sentences_per_user: 4,
            ..Default::default()
        };
        let tr = generate(&SyntheticConfig {
            task: SyntheticTask::Translation,
            ..base.clone()
        })
        .unwrap();
        let users = group_users(&tr);
        match &users[0].records[0] {
            RawRecord::Pair { source, target } => {
                assert_eq!(source.len(), target.len());
                assert_eq!(target[0], format!("t{}", source[1]));
            }
            _ => panic!("expected pair"),
        }
        let dg = generate(&SyntheticConfig {
            task: SyntheticTask::Dialog,
            ..base
        })
        .unwrap();
        assert_eq!(dg.len(), 8);
    }

    #[test]
    fn domain_changes_frequency_order() {
        let a = WordSampler::new(&SyntheticConfig::default()).unwrap();
        let b = WordSampler::new(&SyntheticConfig {
            domain: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a.names[0], "w0");
        assert_ne!(a.names, b.names);
    }

    #[test]
    fn zipf_mass_closed_form() {
        assert!((zipf_head_mass(2, 1.0, 1) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(zipf_head_mass(10, 1.1, 10), 1.0);
    }
}
