use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use super::rng::{derive_seed, SplitMix64};
use super::{MockModel, TAG_DRAW};
use crate::algebra::logsumexp;
use crate::error::{Error, Result};
use crate::extraction::{BiasSpec, Capabilities, TopKApi, TopKResponse};
use crate::TokenId;

const LOGIT_CACHE_LEN: usize = 16;

/// Answers one top-k query against a fixed replica: adds the bias to the
/// listed logits, applies softmax, and returns the `k` most likely tokens in
/// descending order with ties broken by ascending token id.
pub fn api_query(model: &MockModel, context: &str, bias: &BiasSpec, k: usize, replica: usize) -> Result<TopKResponse> {
    validate_request(model, bias, k)?;
    let logits = model.raw_logits(context, replica)?;
    Ok(top_k_from_logits(&logits, bias, k))
}

fn validate_request(model: &MockModel, bias: &BiasSpec, k: usize) -> Result<()> {
    let spec = model.spec();
    if k == 0 || k > spec.k_max {
        return Err(Error::KTooLarge { k, k_max: spec.k_max });
    }
    bias.validate(&model.capabilities())
}

fn top_k_from_logits(logits: &[f64], bias: &BiasSpec, k: usize) -> TopKResponse {
    let mut biased = logits.to_vec();
    for (t, b) in bias.iter() {
        biased[t as usize] += b;
    }
    let lse = logsumexp(&biased);
    let k = k.min(biased.len());
    let order = |a: &usize, b: &usize| biased[*b].total_cmp(&biased[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..biased.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    TopKResponse {
        pairs: idx.into_iter().map(|i| (i as TokenId, (biased[i] - lse).min(0.0))).collect(),
        replica_hint: None,
    }
}

/// A mock model served in-process, with its own replica draw stream.
///
/// Stochastic models pick a replica uniformly at random per query from a
/// seeded stream; the stream advances under a lock, so a fixed query order
/// reproduces the same draws.
pub struct MockApi {
    model: Arc<MockModel>,
    draws: Mutex<SplitMix64>,
    echo_replica: bool,
    logits: Mutex<VecDeque<(String, usize, Arc<Vec<f64>>)>>,
}

impl MockApi {
    pub fn new(model: Arc<MockModel>) -> Self {
        let seed = derive_seed(model.spec().seed, TAG_DRAW);
        Self {
            model,
            draws: Mutex::new(SplitMix64::new(seed)),
            echo_replica: false,
            logits: Mutex::new(VecDeque::new()),
        }
    }

    /// Include the answering replica as `replica_hint` (debug only).
    pub fn with_replica_echo(mut self, echo: bool) -> Self {
        self.echo_replica = echo;
        self
    }

    pub fn model(&self) -> &Arc<MockModel> {
        &self.model
    }

    fn draw_replica(&self) -> usize {
        let n = self.model.spec().n_replicas;
        if n == 1 {
            return 0;
        }
        self.draws.lock().expect("draw lock").below(n as u64) as usize
    }

    fn cached_logits(&self, context: &str, replica: usize) -> Result<Arc<Vec<f64>>> {
        {
            let cache = self.logits.lock().expect("logit cache lock");
            if let Some((_, _, l)) = cache.iter().find(|(c, r, _)| c == context && *r == replica) {
                return Ok(l.clone());
            }
        }
        let l = Arc::new(self.model.raw_logits(context, replica)?);
        let mut cache = self.logits.lock().expect("logit cache lock");
        if cache.len() == LOGIT_CACHE_LEN {
            cache.pop_front();
        }
        cache.push_back((context.to_string(), replica, l.clone()));
        Ok(l)
    }

    /// Query with an explicit debug flag, as exposed on the wire.
    pub fn query_with_echo(&self, context: &str, bias: &BiasSpec, k: usize, echo: bool) -> Result<TopKResponse> {
        validate_request(&self.model, bias, k)?;
        let replica = self.draw_replica();
        let logits = self.cached_logits(context, replica)?;
        let mut response = top_k_from_logits(&logits, bias, k);
        if echo || self.echo_replica {
            response.replica_hint = Some(replica as u32);
        }
        Ok(response)
    }
}

impl TopKApi for MockApi {
    fn capabilities(&self) -> Result<Capabilities> {
        Ok(self.model.capabilities())
    }

    fn query(&self, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse> {
        self.query_with_echo(context, bias, k, false)
    }
}
