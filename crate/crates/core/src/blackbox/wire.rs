use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::TokenId;
use crate::error::Error;

pub(crate) const BAD_TOKEN: &str = "bad token";
pub(crate) const BUDGET_EXCEEDED: &str = "query budget exceeded";

/// One request line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: Value,
    pub x: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<TokenId>>,
}

/// One response line: `positions` on success, `error` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Vec<TokenId>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok(id: Value, positions: Vec<Vec<TokenId>>) -> Self {
        Self { id, positions: Some(positions), error: None }
    }

    pub fn err(id: Value, error: impl Into<String>) -> Self {
        Self { id, positions: None, error: Some(error.into()) }
    }
}

pub(crate) fn error_to_wire(e: &Error) -> String {
    match e {
        Error::BadToken => BAD_TOKEN.into(),
        Error::BudgetExceeded => BUDGET_EXCEEDED.into(),
        other => other.to_string(),
    }
}

pub(crate) fn error_from_wire(msg: &str) -> Error {
    match msg {
        BAD_TOKEN => Error::BadToken,
        BUDGET_EXCEEDED => Error::BudgetExceeded,
        other => Error::Protocol(other.to_string()),
    }
}

/// Parses a request line. On failure returns the echoed id (or null) and
/// the error text.
pub(crate) fn parse_request(line: &str) -> Result<Request, (Value, String)> {
    let v: Value = serde_json::from_str(line).map_err(|e| (Value::Null, format!("malformed request: {e}")))?;
    let id = v.get("id").cloned().unwrap_or(Value::Null);
    let tokens = |key: &str| -> Result<Option<Vec<TokenId>>, (Value, String)> {
        match v.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|t| t.as_u64().map(|t| t as TokenId).ok_or_else(|| (id.clone(), BAD_TOKEN.to_string())))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err((id.clone(), format!("malformed request: `{key}` must be an array"))),
        }
    };
    let x = tokens("x")?.ok_or_else(|| (id.clone(), "malformed request: missing `x`".to_string()))?;
    let y = tokens("y")?;
    Ok(Request { id, x, y })
}
