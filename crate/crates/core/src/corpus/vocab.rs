use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{RawRecord, RawUser, TokenId};
use crate::error::{invalid, Error, Result};

/// Reserved spelling of the out-of-vocabulary token.
pub const UNK_TOKEN: &str = "<unk>";

/// Token table ordered by descending corpus frequency, plus a trailing UNK.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    /// Counts indexed by id; the last entry is the UNK count.
    freq: Vec<u64>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` pairs, keeping the
    /// `max_size` most frequent tokens. Ties are broken lexicographically.
    pub fn from_counts<I>(counts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        if max_size == 0 {
            return Err(invalid("vocabulary max_size must be at least 1"));
        }
        let mut merged: HashMap<String, u64> = HashMap::new();
        let mut unk = 0u64;
        for (tok, c) in counts {
            if tok == UNK_TOKEN {
                unk += c;
            } else {
                *merged.entry(tok).or_default() += c;
            }
        }
        if merged.is_empty() && unk == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut entries: Vec<(String, u64)> = merged.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (_, c) in entries.iter().skip(max_size) {
            unk += c;
        }
        entries.truncate(max_size);

        let mut tokens = Vec::with_capacity(entries.len());
        let mut freq = Vec::with_capacity(entries.len() + 1);
        let mut ids = HashMap::with_capacity(entries.len());
        for (i, (tok, c)) in entries.into_iter().enumerate() {
            ids.insert(tok.clone(), i);
            tokens.push(tok);
            freq.push(c);
        }
        freq.push(unk);
        Ok(Self { tokens, ids, freq })
    }

    /// Number of ids, including UNK.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn unk_id(&self) -> TokenId {
        self.tokens.len()
    }

    /// In-vocabulary tokens in rank order (UNK excluded).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn freq(&self, id: TokenId) -> u64 {
        self.freq.get(id).copied().unwrap_or(0)
    }

    pub fn encode<S: AsRef<str>>(&self, text: &[S]) -> Vec<TokenId> {
        text.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Writes one `token<TAB>count` line per id in rank order; UNK is last.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (tok, c) in self.tokens.iter().zip(&self.freq) {
            out.push_str(&format!("{tok}\t{c}\n"));
        }
        out.push_str(&format!("{UNK_TOKEN}\t{}\n", self.freq[self.tokens.len()]));
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut tokens = Vec::new();
        let mut freq = Vec::new();
        let mut unk = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("vocabulary line {}: missing tab", lineno + 1)))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("vocabulary line {}: bad count", lineno + 1)))?;
            if unk.is_some() {
                return Err(Error::Format(format!("vocabulary line {}: entry after {UNK_TOKEN}", lineno + 1)));
            }
            if tok == UNK_TOKEN {
                unk = Some(count);
            } else {
                tokens.push(tok.to_string());
                freq.push(count);
            }
        }
        freq.push(unk.unwrap_or(0));
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { tokens, ids, freq })
    }
}

/// Counts every token of every record and keeps the `max_size` most frequent.
pub fn build_vocabulary(corpus: &[RawUser], max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for user in corpus {
        for rec in &user.records {
            let toks: Box<dyn Iterator<Item = &String>> = match rec {
                RawRecord::Text(t) => Box::new(t.iter()),
                RawRecord::Pair { source, target } => Box::new(source.iter().chain(target.iter())),
            };
            for t in toks {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
    }
    Vocabulary::from_counts(counts, max_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(tokens: &[&str]) -> RawUser {
        RawUser {
            user_id: "u".into(),
            records: vec![RawRecord::Text(tokens.iter().map(|s| s.to_string()).collect())],
        }
    }

    #[test]
    fn truncates_to_most_frequent() {
        let v = build_vocabulary(&[user(&["c", "a", "b", "a", "b", "a"])], 2).unwrap();
        assert_eq!(v.tokens(), &["a".to_string(), "b".to_string()]);
        assert_eq!(v.size(), 3);
        assert_eq!(v.id("c"), v.unk_id());
        assert_eq!(v.freq(v.unk_id()), 1);
    }

    #[test]
    fn fewer_tokens_than_cap() {
        let v = build_vocabulary(&[user(&["a"])], 5).unwrap();
        assert_eq!(v.size(), 2);
        assert_eq!(v.tokens(), &["a".to_string()]);
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = build_vocabulary(&[user(&["b", "a", "b", "a"])], 1).unwrap();
        assert_eq!(v.tokens(), &["a".to_string()]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let err = build_vocabulary(&[], 5).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::from_counts([("a".to_string(), 1)], 5).unwrap();
        assert!(v.encode::<&str>(&[]).is_empty());
        assert_eq!(v.encode(&["a", "zzz"]), vec![0, 1]);
        assert_eq!(v.decode(&v.encode(&["a", "a"])), vec!["a", "a"]);
    }

    #[test]
    fn save_load_roundtrip() {
        let v = build_vocabulary(&[user(&["x", "y", "y", "z", "q"])], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        v.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "y\t2\nq\t1\nx\t1\n<unk>\t1\n");
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
