//! The subset of the public chat-completions shape that carries
//! `logit_bias` and `top_logprobs`.
//!
//! Token ids go out as decimal map keys; tokens come back as strings and are
//! mapped to ids by the client (decimal parse unless a token map is given).

use std::collections::BTreeMap;

use llmimage::{BiasSpec, Error, Result, TopKResponse};
use serde::Deserialize;
use serde_json::value::RawValue;
use serde_json::{json, Value};

/// Request body for one next-token query.
pub fn openai_request_body(model: &str, context: &str, bias: &BiasSpec, k: usize) -> Value {
    let logit_bias: BTreeMap<String, f64> = bias.iter().map(|(t, b)| (t.to_string(), b)).collect();
    json!({
        "model": model,
        "messages": [{"role": "user", "content": context}],
        "max_tokens": 1,
        "logprobs": true,
        "top_logprobs": k,
        "logit_bias": logit_bias,
    })
}

#[derive(Deserialize)]
pub(crate) struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
pub(crate) struct ChatRequest {
    messages: Vec<ChatMessage>,
    #[serde(default)]
    logit_bias: BTreeMap<String, f64>,
    #[serde(default)]
    logprobs: bool,
    #[serde(default)]
    top_logprobs: Option<usize>,
}

impl ChatRequest {
    /// The last message is the context.
    pub(crate) fn into_native(self) -> Result<(String, BiasSpec, usize)> {
        if !self.logprobs {
            return Err(Error::Config("logprobs must be true".into()));
        }
        let k = self.top_logprobs.unwrap_or(1);
        let context = self
            .messages
            .into_iter()
            .last()
            .map(|m| m.content)
            .ok_or_else(|| Error::Config("messages is empty".into()))?;
        let req = crate::wire::QueryRequest {
            context,
            logit_bias: self.logit_bias,
            top_logprobs: k,
            echo_replica: false,
        };
        let bias = req.bias()?;
        Ok((req.context, bias, k))
    }
}

pub(crate) fn chat_response(model_id: &str, r: &TopKResponse) -> Value {
    let top: Vec<Value> = r
        .pairs
        .iter()
        .map(|(t, lp)| json!({"token": t.to_string(), "logprob": lp}))
        .collect();
    let (first, first_lp) = r.top().map_or((String::new(), 0.0), |(t, lp)| (t.to_string(), lp));
    json!({
        "object": "chat.completion",
        "model": model_id,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": first},
            "logprobs": {"content": [{"token": first, "logprob": first_lp, "top_logprobs": top}]},
            "finish_reason": "length",
        }],
    })
}

#[derive(Deserialize)]
pub(crate) struct RawTop<'a> {
    pub token: String,
    #[serde(borrow)]
    pub logprob: &'a RawValue,
}

#[derive(Deserialize)]
struct RawContent<'a> {
    #[serde(borrow)]
    top_logprobs: Vec<RawTop<'a>>,
}

#[derive(Deserialize)]
struct RawLogprobs<'a> {
    #[serde(borrow)]
    content: Vec<RawContent<'a>>,
}

#[derive(Deserialize)]
struct RawChoice<'a> {
    #[serde(borrow)]
    logprobs: Option<RawLogprobs<'a>>,
}

#[derive(Deserialize)]
pub(crate) struct RawChatResponse<'a> {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(borrow)]
    choices: Vec<RawChoice<'a>>,
}

impl<'a> RawChatResponse<'a> {
    /// Top-logprob entries of the first generated token.
    pub(crate) fn into_top(self) -> Result<Vec<RawTop<'a>>> {
        self.choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .and_then(|l| l.content.into_iter().next())
            .map(|c| c.top_logprobs)
            .ok_or_else(|| Error::Protocol("response carries no logprobs".into()))
    }
}
