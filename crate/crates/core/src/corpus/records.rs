use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusRecord {
    Text(TextLine),
    Pair(PairLine),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextLine {
    pub user_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLine {
    pub user_id: String,
    pub source: String,
    pub target: String,
}

impl CorpusRecord {
    pub fn text(user_id: impl Into<String>, text: impl Into<String>) -> Self {
        CorpusRecord::Text(TextLine {
            user_id: user_id.into(),
            text: text.into(),
        })
    }

    pub fn pair(user_id: impl Into<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        CorpusRecord::Pair(PairLine {
            user_id: user_id.into(),
            source: source.into(),
            target: target.into(),
        })
    }

    pub fn user_id(&self) -> &str {
        match self {
            CorpusRecord::Text(t) => &t.user_id,
            CorpusRecord::Pair(p) => &p.user_id,
        }
    }

    fn tokenized(&self) -> RawRecord {
        match self {
            CorpusRecord::Text(t) => RawRecord::Text(tokenize(&t.text)),
            CorpusRecord::Pair(p) => RawRecord::Pair {
                source: tokenize(&p.source),
                target: tokenize(&p.target),
            },
        }
    }
}

/// A tokenized record.
#[derive(Clone, Debug, PartialEq)]
pub enum RawRecord {
    Text(Vec<String>),
    Pair { source: Vec<String>, target: Vec<String> },
}

/// A user's tokenized, not yet encoded, records.
#[derive(Clone, Debug, PartialEq)]
pub struct RawUser {
    pub user_id: String,
    pub records: Vec<RawRecord>,
}

const TERMINAL_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercases, splits on whitespace and peels trailing punctuation off each
/// word into separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        let stem = lower.trim_end_matches(TERMINAL_PUNCT);
        if !stem.is_empty() {
            out.push(stem.to_string());
        }
        out.extend(lower[stem.len()..].chars().map(String::from));
    }
    out
}

/// Tokenizes records and groups them by user, in order of first appearance.
pub fn group_users(records: &[CorpusRecord]) -> Vec<RawUser> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut users: Vec<RawUser> = Vec::new();
    for rec in records {
        let slot = *index.entry(rec.user_id()).or_insert_with(|| {
            users.push(RawUser {
                user_id: rec.user_id().to_string(),
                records: Vec::new(),
            });
            users.len() - 1
        });
        users[slot].records.push(rec.tokenized());
    }
    users
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CorpusRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", ",", "world", "!"]);
        assert_eq!(tokenize("  wow?!  ok. "), vec!["wow", "?", "!", "ok", "."]);
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn parses_both_line_kinds() {
        let t: CorpusRecord = serde_json::from_str(r#"{"user_id":"a","text":"hi there"}"#).unwrap();
        assert_eq!(t, CorpusRecord::text("a", "hi there"));
        let p: CorpusRecord = serde_json::from_str(r#"{"user_id":"b","source":"x","target":"y"}"#).unwrap();
        assert_eq!(p, CorpusRecord::pair("b", "x", "y"));
        assert!(serde_json::from_str::<CorpusRecord>(r#"{"user_id":"a","text":"x","extra":1}"#).is_err());
    }

    #[test]
    fn groups_in_first_appearance_order() {
        let recs = vec![
            CorpusRecord::text("b", "one"),
            CorpusRecord::text("a", "two"),
            CorpusRecord::text("b", "three"),
        ];
        let users = group_users(&recs);
        assert_eq!(users.len(), 2);
        assert_eq!(users[0].user_id, "b");
        assert_eq!(users[0].records.len(), 2);
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let recs = vec![CorpusRecord::text("a", "x y."), CorpusRecord::pair("b", "s", "t")];
        write_jsonl(&p, &recs).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), recs);
    }
}
