//! Remote scoring protocol.
//!
//! `POST /v1/score` with `{"context": "<text>", "continuation": "<text>"}`
//! answers `{"tokens": [..], "logprobs": [..]}`, where `logprobs[i]` is the
//! log-probability of continuation token `i` given the context and the
//! preceding continuation tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{seq_log_probs, Checkpoint};

pub const SCORE_PATH: &str = "/v1/score";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub continuation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

/// Decodes a response body and checks it carries exactly `expected` scores.
pub fn parse_score_response(body: &[u8], expected: usize) -> Result<Vec<f64>> {
    let resp: ScoreResponse = serde_json::from_slice(body).map_err(|e| Error::Backend {
        message: format!("malformed score response: {e}"),
        attempts: 1,
    })?;
    if resp.logprobs.len() != expected || resp.tokens.len() != expected {
        return Err(Error::Backend {
            message: format!(
                "expected {expected} continuation scores, got {} tokens / {} logprobs",
                resp.tokens.len(),
                resp.logprobs.len()
            ),
            attempts: 1,
        });
    }
    if resp.logprobs.iter().any(|v| !v.is_finite() || *v > 0.0) {
        return Err(Error::Backend {
            message: "score response holds an invalid log-probability".into(),
            attempts: 1,
        });
    }
    Ok(resp.logprobs)
}

/// Server-side scoring of one request against a local checkpoint.
pub fn score_request(ck: &Checkpoint, req: &ScoreRequest) -> Result<ScoreResponse> {
    let context = ck.vocab.encode(&req.context);
    let continuation = ck.vocab.encode(&req.continuation);
    let logprobs = seq_log_probs(&ck.params, &context, &continuation)?;
    Ok(ScoreResponse {
        tokens: ck
            .vocab
            .decode_words(&continuation)
            .into_iter()
            .map(String::from)
            .collect(),
        logprobs,
    })
}
