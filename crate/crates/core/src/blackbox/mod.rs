//! The restricted query surface between auditor and target.
//!
//! A [`TargetHandle`] answers queries with ranked token lists only, truncated
//! to `output_k` per position, either from an in-process model or from a
//! [`Server`] over a socket.

mod server;
mod wire;

pub use server::{ServeOptions, Server};
pub use wire::{Request, Response};

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, TokenId};
use crate::error::{invalid, Error, Result};
use crate::textgen::{truncate_topk, TextModel};

/// Ranked output for one query; no probabilities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub positions: Vec<Vec<TokenId>>,
}

/// How an [`Example`] is turned into a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Send the whole window `x[0] ++ y`; positions predict `y`.
    NextWord,
    /// Send `x` and the teacher-forcing target `y`.
    Seq2seq,
}

enum Backend {
    Local(Arc<TextModel>),
    Remote(Mutex<Connection>),
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

/// Black-box access to a target model.
pub struct TargetHandle {
    backend: Backend,
    mode: QueryMode,
    output_k: usize,
    budget: Option<usize>,
    used: AtomicUsize,
}

impl TargetHandle {
    /// In-process handle. `output_k` must lie in `1..=vocab_size`.
    pub fn local(model: Arc<TextModel>, output_k: usize) -> Result<Self> {
        if output_k == 0 || output_k > model.vocab_size() {
            return Err(invalid(format!(
                "output_k {output_k} outside 1..={}",
                model.vocab_size()
            )));
        }
        let mode = if model.task().is_seq2seq() { QueryMode::Seq2seq } else { QueryMode::NextWord };
        Ok(Self {
            backend: Backend::Local(model),
            mode,
            output_k,
            budget: None,
            used: AtomicUsize::new(0),
        })
    }

    /// Handle talking to a [`Server`]. The server applies its own truncation;
    /// `output_k` here truncates further if smaller.
    pub fn connect<A: ToSocketAddrs>(addr: A, mode: QueryMode, output_k: usize) -> Result<Self> {
        if output_k == 0 {
            return Err(invalid("output_k must be at least 1"));
        }
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let conn = Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 1,
        };
        Ok(Self {
            backend: Backend::Remote(Mutex::new(conn)),
            mode,
            output_k,
            budget: None,
            used: AtomicUsize::new(0),
        })
    }

    pub fn with_budget(mut self, budget: Option<usize>) -> Self {
        self.budget = budget;
        self
    }

    pub fn output_k(&self) -> usize {
        self.output_k
    }

    pub fn mode(&self) -> QueryMode {
        self.mode
    }

    pub fn queries_used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    fn reserve(&self) -> Result<()> {
        match self.budget {
            None => {
                self.used.fetch_add(1, Ordering::SeqCst);
                Ok(())
            }
            Some(b) => self
                .used
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < b).then_some(u + 1))
                .map(|_| ())
                .map_err(|_| Error::BudgetExceeded),
        }
    }

    /// One black-box query. For next-word targets `y` must be absent and the
    /// answer has `len(x) - 1` positions; for sequence-to-sequence targets `y`
    /// is required and the answer has `len(y)` positions.
    pub fn query(&self, x: &[TokenId], y: Option<&[TokenId]>) -> Result<QueryResult> {
        self.reserve()?;
        let mut result = match &self.backend {
            Backend::Local(model) => local_query(model, self.output_k, x, y)?,
            Backend::Remote(conn) => {
                let mut conn = conn.lock().map_err(|_| Error::Protocol("connection poisoned".into()))?;
                conn.round_trip(x, y)?
            }
        };
        for p in &mut result.positions {
            p.truncate(self.output_k);
        }
        Ok(result)
    }

    /// Queries the target with one example; positions align with `ex.y`.
    pub fn query_example(&self, ex: &Example) -> Result<QueryResult> {
        match self.mode {
            QueryMode::NextWord => {
                let first = *ex.x.first().ok_or_else(|| invalid("empty example"))?;
                let mut seq = Vec::with_capacity(ex.y.len() + 1);
                seq.push(first);
                seq.extend_from_slice(&ex.y);
                self.query(&seq, None)
            }
            QueryMode::Seq2seq => self.query(&ex.x, Some(&ex.y)),
        }
    }
}

pub(crate) fn local_query(model: &TextModel, k: usize, x: &[TokenId], y: Option<&[TokenId]>) -> Result<QueryResult> {
    let dists = match (model.task().is_seq2seq(), y) {
        (false, None) => model.forward_lm(x)?,
        (true, Some(y)) => model.forward_seq2seq(x, y)?,
        (false, Some(_)) => return Err(invalid("next-word target takes no y")),
        (true, None) => return Err(invalid("sequence-to-sequence target needs y")),
    };
    let positions = dists
        .iter()
        .map(|d| truncate_topk(d, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryResult { positions })
}

impl Connection {
    fn round_trip(&mut self, x: &[TokenId], y: Option<&[TokenId]>) -> Result<QueryResult> {
        let id = self.next_id;
        self.next_id += 1;
        let req = Request {
            id: id.into(),
            x: x.to_vec(),
            y: y.map(<[TokenId]>::to_vec),
        };
        let mut line = serde_json::to_string(&req)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(Error::Protocol("connection closed by server".into()));
        }
        let resp: Response = serde_json::from_str(buf.trim_end())?;
        if resp.id != serde_json::Value::from(id) {
            return Err(Error::Protocol(format!("response id {} for request {id}", resp.id)));
        }
        match (resp.positions, resp.error) {
            (Some(positions), None) => Ok(QueryResult { positions }),
            (_, Some(e)) => Err(wire::error_from_wire(&e)),
            (None, None) => Err(Error::Protocol("response has neither positions nor error".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::CellKind;
    use crate::textgen::{argmax, ModelConfig, Task};

    fn model(task: Task) -> Arc<TextModel> {
        Arc::new(
            TextModel::new(ModelConfig {
                task,
                cell: CellKind::Lstm,
                emb_dim: 4,
                hidden_dim: 5,
                dropout_rate: 0.0,
                vocab_size: 9,
                seed: 2,
                init_scale: 0.5,
            })
            .unwrap(),
        )
    }

    #[test]
    fn k1_returns_argmax() {
        let m = model(Task::NextWord);
        let h = TargetHandle::local(m.clone(), 1).unwrap();
        let r = h.query(&[1, 2, 3, 4], None).unwrap();
        let dists = m.forward_lm(&[1, 2, 3, 4]).unwrap();
        assert_eq!(r.positions.len(), 3);
        for (p, d) in r.positions.iter().zip(&dists) {
            assert_eq!(p, &vec![argmax(d)]);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let h = TargetHandle::local(model(Task::NextWord), 3).unwrap().with_budget(Some(2));
        h.query(&[1, 2], None).unwrap();
        h.query(&[1, 2], None).unwrap();
        assert!(matches!(h.query(&[1, 2], None), Err(Error::BudgetExceeded)));
        assert_eq!(h.queries_used(), 2);
    }

    #[test]
    fn seq2seq_positions_follow_y() {
        let h = TargetHandle::local(model(Task::Seq2seqAttn), 9).unwrap();
        let r = h.query(&[1, 2, 3], Some(&[4, 5])).unwrap();
        assert_eq!(r.positions.len(), 2);
        assert!(r.positions.iter().all(|p| p.len() == 9));
        assert!(h.query(&[1, 2], None).is_err());
    }

    #[test]
    fn bad_tokens_and_k() {
        assert!(TargetHandle::local(model(Task::NextWord), 0).is_err());
        assert!(TargetHandle::local(model(Task::NextWord), 10).is_err());
        let h = TargetHandle::local(model(Task::NextWord), 2).unwrap();
        assert!(matches!(h.query(&[1, 99], None), Err(Error::BadToken)));
    }

    #[test]
    fn example_query_aligns_with_targets() {
        let h = TargetHandle::local(model(Task::NextWord), 9).unwrap();
        let ex = Example { x: vec![3, 1, 4], y: vec![1, 4, 1] };
        assert_eq!(h.query_example(&ex).unwrap(), h.query(&[3, 1, 4, 1], None).unwrap());
    }
}
