use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Advertised limits of a top-k logit-bias API.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub v: usize,
    pub k_max: usize,
    pub beta_max: f64,
    pub stochastic: bool,
}

/// Additive logit adjustments keyed by token.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiasSpec {
    entries: BTreeMap<TokenId, f64>,
}

impl BiasSpec {
    pub fn new() -> Self {
        Self::default()
    }

    /// The same bias on every listed token.
    pub fn uniform<I: IntoIterator<Item = TokenId>>(tokens: I, beta: f64) -> Self {
        Self {
            entries: tokens.into_iter().map(|t| (t, beta)).collect(),
        }
    }

    pub fn with(mut self, token: TokenId, bias: f64) -> Self {
        self.entries.insert(token, bias);
        self
    }

    pub fn get(&self, token: TokenId) -> Option<f64> {
        self.entries.get(&token).copied()
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.entries.contains_key(&token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.entries.iter().map(|(t, b)| (*t, *b))
    }

    /// Checks the spec against API limits.
    pub fn validate(&self, caps: &Capabilities) -> Result<()> {
        if self.entries.len() > caps.k_max {
            return Err(Error::KTooLarge {
                k: self.entries.len(),
                k_max: caps.k_max,
            });
        }
        for (&token, &bias) in &self.entries {
            if token as usize >= caps.v {
                return Err(Error::BadTokenId(token.to_string()));
            }
            if !bias.is_finite() || bias.abs() > caps.beta_max {
                return Err(Error::BiasTooLarge {
                    token,
                    bias,
                    beta_max: caps.beta_max,
                });
            }
        }
        Ok(())
    }
}

/// Top-k `(token, logprob)` pairs of a (possibly biased) distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKResponse {
    pub pairs: Vec<(TokenId, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_hint: Option<u32>,
}

impl TopKResponse {
    /// Rejects responses whose logprobs are non-finite, positive, unsorted,
    /// or whose tokens repeat.
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0f64;
        for (i, &(token, lp)) in self.pairs.iter().enumerate() {
            if !lp.is_finite() || lp > 0.0 {
                return Err(Error::Protocol(format!(
                    "logprob {lp} for token {token} is not a finite non-positive number"
                )));
            }
            if i > 0 && lp > prev {
                return Err(Error::Protocol("logprobs are not sorted descending".into()));
            }
            if self.pairs[..i].iter().any(|(t, _)| *t == token) {
                return Err(Error::Protocol(format!("token {token} repeated in response")));
            }
            prev = lp;
        }
        Ok(())
    }

    pub fn logprob(&self, token: TokenId) -> Option<f64> {
        self.pairs.iter().find(|(t, _)| *t == token).map(|(_, lp)| *lp)
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.pairs.iter().map(|(t, _)| *t).collect()
    }

    pub fn top(&self) -> Option<(TokenId, f64)> {
        self.pairs.first().copied()
    }
}

/// Anything that answers top-k logit-bias queries: the in-process mock, the
/// HTTP client, or a provider adapter.
pub trait TopKApi: Send + Sync {
    fn capabilities(&self) -> Result<Capabilities>;
    fn query(&self, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse>;
}

impl<T: TopKApi + ?Sized> TopKApi for Arc<T> {
    fn capabilities(&self) -> Result<Capabilities> {
        (**self).capabilities()
    }
    fn query(&self, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse> {
        (**self).query(context, bias, k)
    }
}

impl<T: TopKApi + ?Sized> TopKApi for Box<T> {
    fn capabilities(&self) -> Result<Capabilities> {
        (**self).capabilities()
    }
    fn query(&self, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse> {
        (**self).query(context, bias, k)
    }
}

/// Canonical request key: the JSON a client would put on the wire, with
/// bias keys in ascending token order.
pub fn canonical_request(context: &str, bias: &BiasSpec, k: usize) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        context: &'a str,
        logit_bias: BTreeMap<String, f64>,
        top_logprobs: usize,
    }
    // BTreeMap<String, _> sorts lexicographically; zero-pad so the order is
    // numeric as well.
    let logit_bias = bias.iter().map(|(t, b)| (format!("{t:010}"), b)).collect();
    serde_json::to_string(&Canonical {
        context,
        logit_bias,
        top_logprobs: k,
    })
    .expect("canonical request serializes")
}

/// A query endpoint plus the bookkeeping every extraction needs: the
/// advertised capabilities, a call counter and an optional response cache.
///
/// Caching is disabled for stochastic endpoints, whose repeated queries
/// must reach the API to sample different replicas.
pub struct ApiSession {
    api: Arc<dyn TopKApi>,
    caps: Capabilities,
    cache: Option<Mutex<HashMap<String, TopKResponse>>>,
    calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl ApiSession {
    pub fn new(api: Arc<dyn TopKApi>, cache: bool) -> Result<Self> {
        let caps = api.capabilities()?;
        if caps.v < 2 || caps.k_max == 0 || !(caps.beta_max > 0.0) {
            return Err(Error::CapabilityMismatch(format!(
                "unusable capabilities {caps:?}"
            )));
        }
        let cache = (cache && !caps.stochastic).then(|| Mutex::new(HashMap::new()));
        Ok(Self {
            api,
            caps,
            cache,
            calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    /// Number of queries that reached the API.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn caching(&self) -> bool {
        self.cache.is_some()
    }

    pub fn query(&self, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse> {
        if k == 0 || k > self.caps.k_max {
            return Err(Error::CapabilityMismatch(format!(
                "k={k} outside 1..={}",
                self.caps.k_max
            )));
        }
        if let Err(e) = bias.validate(&self.caps) {
            return Err(Error::CapabilityMismatch(e.to_string()));
        }
        let key = self.cache.as_ref().map(|_| canonical_request(context, bias, k));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.lock().expect("cache lock").get(key) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit.clone());
            }
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = self.api.query(context, bias, k)?;
        response.validate()?;
        if response.pairs.len() > k {
            return Err(Error::Protocol(format!(
                "asked for {k} entries, got {}",
                response.pairs.len()
            )));
        }
        if let Some((t, _)) = response.pairs.iter().find(|(t, _)| *t as usize >= self.caps.v) {
            return Err(Error::Protocol(format!("token {t} outside vocabulary")));
        }
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            cache.lock().expect("cache lock").insert(key, response.clone());
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed;

    impl TopKApi for Fixed {
        fn capabilities(&self) -> Result<Capabilities> {
            Ok(Capabilities {
                v: 4,
                k_max: 2,
                beta_max: 10.0,
                stochastic: false,
            })
        }
        fn query(&self, _: &str, _: &BiasSpec, k: usize) -> Result<TopKResponse> {
            Ok(TopKResponse {
                pairs: vec![(0, -0.5), (1, -1.5)][..k].to_vec(),
                replica_hint: None,
            })
        }
    }

    #[test]
    fn cache_counts_only_misses() {
        let s = ApiSession::new(Arc::new(Fixed), true).unwrap();
        let a = s.query("x", &BiasSpec::new(), 2).unwrap();
        let b = s.query("x", &BiasSpec::new(), 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.calls(), 1);
        assert_eq!(s.cache_hits(), 1);
        s.query("y", &BiasSpec::new(), 2).unwrap();
        assert_eq!(s.calls(), 2);

        let uncached = ApiSession::new(Arc::new(Fixed), false).unwrap();
        uncached.query("x", &BiasSpec::new(), 1).unwrap();
        uncached.query("x", &BiasSpec::new(), 1).unwrap();
        assert_eq!(uncached.calls(), 2);
    }

    #[test]
    fn session_enforces_limits() {
        let s = ApiSession::new(Arc::new(Fixed), false).unwrap();
        assert!(matches!(s.query("x", &BiasSpec::new(), 3), Err(Error::CapabilityMismatch(_))));
        let big = BiasSpec::new().with(1, 11.0);
        assert!(matches!(s.query("x", &big, 1), Err(Error::CapabilityMismatch(_))));
        assert_eq!(s.calls(), 0);
    }

    #[test]
    fn canonical_request_orders_tokens_numerically() {
        let a = BiasSpec::new().with(10, 1.0).with(9, 2.0);
        let b = BiasSpec::new().with(9, 2.0).with(10, 1.0);
        assert_eq!(canonical_request("c", &a, 3), canonical_request("c", &b, 3));
        let s = canonical_request("c", &a, 3);
        assert!(s.find("0000000009").unwrap() < s.find("0000000010").unwrap());
    }

    #[test]
    fn response_validation() {
        let bad = TopKResponse {
            pairs: vec![(0, -2.0), (1, -1.0)],
            replica_hint: None,
        };
        assert!(bad.validate().is_err());
        let nan = TopKResponse {
            pairs: vec![(0, f64::NAN)],
            replica_hint: None,
        };
        assert!(nan.validate().is_err());
        let dup = TopKResponse {
            pairs: vec![(0, -1.0), (0, -2.0)],
            replica_hint: None,
        };
        assert!(dup.validate().is_err());
    }
}
