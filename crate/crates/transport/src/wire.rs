//! JSON bodies of the native protocol.
//!
//! Token ids are integers `0..v`; as `logit_bias` map keys they are decimal
//! strings. Logprobs are plain JSON numbers written in shortest round-trip
//! form, so parsing recovers the server's `f64` exactly.

use std::collections::BTreeMap;

use llmimage::{BiasSpec, Capabilities, Error, Result, TokenId, TopKResponse};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub context: String,
    #[serde(default)]
    pub logit_bias: BTreeMap<String, f64>,
    pub top_logprobs: usize,
    /// Mock-only debugging: report which replica answered.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub echo_replica: bool,
}

impl QueryRequest {
    pub fn new(context: &str, bias: &BiasSpec, k: usize) -> Self {
        Self {
            context: context.to_string(),
            logit_bias: bias.iter().map(|(t, b)| (t.to_string(), b)).collect(),
            top_logprobs: k,
            echo_replica: false,
        }
    }

    /// Parses the bias map; keys must be canonical decimal token ids.
    pub fn bias(&self) -> Result<BiasSpec> {
        self.logit_bias.iter().try_fold(BiasSpec::new(), |acc, (key, &b)| {
            let token: TokenId = key.parse().map_err(|_| Error::BadTokenId(key.clone()))?;
            if token.to_string() != *key {
                return Err(Error::BadTokenId(key.clone()));
            }
            Ok(acc.with(token, b))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobEntry {
    pub token: TokenId,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub model_id: String,
    pub top_logprobs: Vec<LogprobEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_hint: Option<u32>,
}

impl QueryResponse {
    pub fn from_top_k(model_id: &str, r: &TopKResponse) -> Self {
        Self {
            model_id: model_id.to_string(),
            top_logprobs: r
                .pairs
                .iter()
                .map(|&(token, logprob)| LogprobEntry { token, logprob })
                .collect(),
            replica_hint: r.replica_hint,
        }
    }

    pub fn into_top_k(self) -> TopKResponse {
        TopKResponse {
            pairs: self.top_logprobs.into_iter().map(|e| (e.token, e.logprob)).collect(),
            replica_hint: self.replica_hint,
        }
    }
}

/// Body of `GET /v1/capabilities`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapabilityDescriptor {
    pub v: usize,
    pub k_max: usize,
    pub beta_max: f64,
    pub stochastic: bool,
}

impl From<Capabilities> for CapabilityDescriptor {
    fn from(c: Capabilities) -> Self {
        Self {
            v: c.v,
            k_max: c.k_max,
            beta_max: c.beta_max,
            stochastic: c.stochastic,
        }
    }
}

impl From<CapabilityDescriptor> for Capabilities {
    fn from(c: CapabilityDescriptor) -> Self {
        Self {
            v: c.v,
            k_max: c.k_max,
            beta_max: c.beta_max,
            stochastic: c.stochastic,
        }
    }
}

/// Body of every 4xx/5xx answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capability_json_shape() {
        let c = CapabilityDescriptor {
            v: 1000,
            k_max: 5,
            beta_max: 100.0,
            stochastic: false,
        };
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"v":1000,"k_max":5,"beta_max":100.0,"stochastic":false}"#
        );
    }

    #[test]
    fn bias_keys_must_be_canonical_ids() {
        let mut r = QueryRequest::new("c", &BiasSpec::new().with(7, 1.5), 2);
        assert_eq!(r.bias().unwrap().get(7), Some(1.5));
        for bad in ["x", "-1", "007", " 7"] {
            r.logit_bias = BTreeMap::from([(bad.to_string(), 1.0)]);
            assert!(matches!(r.bias(), Err(Error::BadTokenId(_))), "{bad}");
        }
    }

    #[test]
    fn logprobs_roundtrip_exactly() {
        let r = TopKResponse {
            pairs: vec![(3, -0.1), (9, -1.0 / 3.0), (1, -745.133_219_101_941_1)],
            replica_hint: Some(2),
        };
        let json = serde_json::to_string(&QueryResponse::from_top_k("m", &r)).unwrap();
        let back: QueryResponse = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_top_k(), r);
    }
}
