use std::collections::BTreeSet;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::session::{ApiSession, BiasSpec, TopKResponse};
use super::unbias::{unbias_fast, unbias_stable_log};
use crate::algebra::{softmax_slice, ProbVector};
use crate::error::{Error, Result};
use crate::TokenId;

/// Default bias for the fast strategy when none is given. Large enough to
/// lift any batch above the mock's default logit spread, small enough that
/// `e^beta (1 - sum p')` keeps about nine significant digits.
pub const FAST_DEFAULT_BETA: f64 = 16.0;
/// Sum tolerance applied to fast reconstructions before renormalizing.
pub const FAST_SUM_TOLERANCE: f64 = 1e-6;
/// Sum tolerance applied to log-space reconstructions before renormalizing.
pub const STABLE_SUM_TOLERANCE: f64 = 1e-6;
/// Fingerprints closer than this are the same replica.
pub const FINGERPRINT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_CONCURRENCY: usize = 8;
pub const MAX_DISPLACEMENT_RETRIES: usize = 5;

/// Full-output extraction strategy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// `k` tokens per call, closed-form unbiasing.
    Fast,
    /// `k - 1` tokens per call, log-space unbiasing against the top token.
    Stable,
    /// `k - 2` tokens per call, replicas told apart by fingerprint.
    Stochastic { n_hint: Option<usize> },
    /// Binary search on the bias that makes each token the argmax.
    LogprobFree { epsilon: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Fast => "fast",
            Strategy::Stable => "stable",
            Strategy::Stochastic { .. } => "stochastic",
            Strategy::LogprobFree { .. } => "logprob-free",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Strategy::Fast),
            "stable" => Ok(Strategy::Stable),
            "stochastic" => Ok(Strategy::Stochastic { n_hint: None }),
            "logprob-free" => Ok(Strategy::LogprobFree {
                epsilon: DEFAULT_EPSILON,
            }),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected fast, stable, stochastic or logprob-free)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtractOptions {
    /// Bias added to batch tokens; defaults to `beta_max`, or to
    /// `min(beta_max, FAST_DEFAULT_BETA)` for the fast strategy.
    pub beta: Option<f64>,
    /// Maximum number of API queries in flight.
    pub concurrency: usize,
    /// Call budget for the stochastic strategy; defaults to
    /// `10 n v / (k - 2)`.
    pub stochastic_budget: Option<u64>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            beta: None,
            concurrency: DEFAULT_CONCURRENCY,
            stochastic_budget: None,
        }
    }
}

/// Result of the logprob-free strategy.
#[derive(Clone, Debug)]
pub struct LogprobFreeOutput {
    pub probs: ProbVector,
    /// `logit(top) - logit(i)` per token; for unargmaxable tokens this is the
    /// lower bound `beta_max`.
    pub gaps: Vec<f64>,
    /// Tokens that never became the argmax at `beta_max`.
    pub unargmaxable: Vec<TokenId>,
    pub top_token: TokenId,
}

/// Bookkeeping for one replica seen by the stochastic strategy.
#[derive(Clone, Debug)]
pub struct PartialOutput {
    /// `log p_top - log p_second`, rounded to 12 significant digits.
    pub fingerprint: f64,
    pub replica_hint: Option<u32>,
    pub batches_done: usize,
    pub batches_total: usize,
    pub responses: u64,
}

#[derive(Clone, Debug)]
pub struct StochasticOutput {
    pub fingerprint: f64,
    pub probs: ProbVector,
    /// Replicas whose vectors were not completed, including the winner's
    /// final bookkeeping.
    pub partials: Vec<PartialOutput>,
    /// True when every response carried the same fingerprint.
    pub degenerate: bool,
    pub reference_tokens: (TokenId, TokenId),
}

pub(crate) fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    (x * factor).round() / factor
}

/// Runs extraction strategies against one [`ApiSession`].
pub struct Extractor<'s> {
    session: &'s ApiSession,
    opts: ExtractOptions,
    pool: Arc<rayon::ThreadPool>,
}

impl<'s> Extractor<'s> {
    pub fn new(session: &'s ApiSession, opts: ExtractOptions) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.concurrency.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self {
            session,
            opts,
            pool: Arc::new(pool),
        })
    }

    pub fn session(&self) -> &ApiSession {
        self.session
    }

    pub fn options(&self) -> &ExtractOptions {
        &self.opts
    }

    /// Runs `f` on the extractor's worker pool, so nested parallel maps
    /// share its concurrency limit.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    fn vocab(&self) -> usize {
        self.session.capabilities().v
    }

    fn k_max(&self) -> usize {
        self.session.capabilities().k_max
    }

    fn beta(&self, fast: bool) -> Result<f64> {
        let beta_max = self.session.capabilities().beta_max;
        let beta = match self.opts.beta {
            Some(b) => b,
            None if fast => beta_max.min(FAST_DEFAULT_BETA),
            None => beta_max,
        };
        if !(beta > 0.0 && beta <= beta_max) {
            return Err(Error::CapabilityMismatch(format!(
                "bias {beta} outside (0, {beta_max}]"
            )));
        }
        Ok(beta)
    }

    /// Dispatches on `strategy` and returns only the distribution.
    pub fn extract(&self, strategy: Strategy, context: &str) -> Result<ProbVector> {
        match strategy {
            Strategy::Fast => self.extract_fast(context),
            Strategy::Stable => self.extract_stable(context),
            Strategy::Stochastic { n_hint } => self.extract_stochastic(context, n_hint).map(|o| o.probs),
            Strategy::LogprobFree { epsilon } => self.extract_logprob_free(context, epsilon).map(|o| o.probs),
        }
    }

    /// `ceil(v / k)` calls; every batch of `k` tokens is biased at once and
    /// must come back as exactly the top-k.
    pub fn extract_fast(&self, context: &str) -> Result<ProbVector> {
        let v = self.vocab();
        let k = self.k_max();
        let beta = self.beta(true)?;
        let tokens: Vec<TokenId> = (0..v as TokenId).collect();
        let batches: Vec<&[TokenId]> = tokens.chunks(k).collect();
        let results = self.par_map(&batches, |batch| {
            let bias = BiasSpec::uniform(batch.iter().copied(), beta);
            let response = self.session.query(context, &bias, batch.len())?;
            let returned: BTreeSet<TokenId> = response.pairs.iter().map(|(t, _)| *t).collect();
            let expected: BTreeSet<TokenId> = batch.iter().copied().collect();
            if returned != expected {
                return Err(Error::BiasedSetMismatch {
                    first_token: batch[0],
                    expected: expected.into_iter().collect(),
                    returned: returned.into_iter().collect(),
                });
            }
            let biased: Vec<(TokenId, f64)> = response.pairs.iter().map(|&(t, lp)| (t, lp.exp())).collect();
            unbias_fast(&biased, beta)
        })?;
        let mut probs = vec![0.0; v];
        for (t, p) in results.into_iter().flatten() {
            probs[t as usize] = p;
        }
        tracing::debug!(strategy = "fast", context, calls = self.session.calls(), "extracted");
        ProbVector::from_reconstructed(probs, FAST_SUM_TOLERANCE)
    }

    /// One unbiased call to find the top token, then `k - 1` biased tokens
    /// per call read against the top token in the same response.
    pub fn extract_stable(&self, context: &str) -> Result<ProbVector> {
        let v = self.vocab();
        let reference = self.top_token(context)?;
        let others: Vec<TokenId> = (0..v as TokenId).filter(|t| *t != reference.0).collect();
        let logps = self.stable_logprobs(context, reference, &others)?;
        let mut log_probs = vec![0.0; v];
        log_probs[reference.0 as usize] = reference.1;
        for (t, lp) in logps {
            log_probs[t as usize] = lp;
        }
        tracing::debug!(strategy = "stable", context, calls = self.session.calls(), "extracted");
        ProbVector::from_reconstructed(log_probs.into_iter().map(f64::exp).collect(), STABLE_SUM_TOLERANCE)
    }

    /// Unbiased top-k probe; its first entry is the argmax.
    pub(crate) fn probe(&self, context: &str) -> Result<TopKResponse> {
        let response = self.session.query(context, &BiasSpec::new(), self.k_max())?;
        if response.pairs.is_empty() {
            return Err(Error::Protocol("empty response to unbiased query".into()));
        }
        Ok(response)
    }

    fn top_token(&self, context: &str) -> Result<(TokenId, f64)> {
        let response = self.session.query(context, &BiasSpec::new(), 1)?;
        response
            .top()
            .ok_or_else(|| Error::Protocol("empty response to unbiased query".into()))
    }

    /// Unbiased log-probabilities of `tokens` (which must exclude the
    /// reference), `k - 1` per call.
    pub(crate) fn stable_logprobs(
        &self,
        context: &str,
        reference: (TokenId, f64),
        tokens: &[TokenId],
    ) -> Result<Vec<(TokenId, f64)>> {
        let k = self.k_max();
        if k < 2 {
            return Err(Error::CapabilityMismatch("stable extraction needs k >= 2".into()));
        }
        let beta = self.beta(false)?;
        let batches: Vec<&[TokenId]> = tokens.chunks(k - 1).collect();
        let results = self.par_map(&batches, |batch| self.stable_batch(context, reference, batch, beta))?;
        Ok(results.into_iter().flatten().collect())
    }

    fn stable_batch(
        &self,
        context: &str,
        (ref_token, ref_logp): (TokenId, f64),
        batch: &[TokenId],
        beta: f64,
    ) -> Result<Vec<(TokenId, f64)>> {
        let mut beta = beta;
        for _ in 0..=MAX_DISPLACEMENT_RETRIES {
            let bias = BiasSpec::uniform(batch.iter().copied(), beta);
            let response = self.session.query(context, &bias, batch.len() + 1)?;
            let Some(ref_biased) = response.logprob(ref_token) else {
                tracing::warn!(context, token = ref_token, beta, "top token displaced, halving bias");
                beta /= 2.0;
                continue;
            };
            return batch
                .iter()
                .map(|&t| {
                    let lp = response.logprob(t).ok_or_else(|| Error::BiasedSetMismatch {
                        first_token: batch[0],
                        expected: batch.to_vec(),
                        returned: response.tokens(),
                    })?;
                    Ok((t, unbias_stable_log(lp, ref_biased, ref_logp, beta)))
                })
                .collect();
        }
        Err(Error::TopTokenDisplaced {
            token: ref_token,
            attempts: MAX_DISPLACEMENT_RETRIES + 1,
        })
    }

    /// For each token, binary-searches the smallest bias that makes it the
    /// argmax; the bias equals its logit gap to the top token.
    pub fn extract_logprob_free(&self, context: &str, epsilon: f64) -> Result<LogprobFreeOutput> {
        let beta_max = self.session.capabilities().beta_max;
        if !(epsilon > 0.0 && epsilon < beta_max) {
            return Err(Error::Domain(format!("epsilon {epsilon} must lie in (0, beta_max)")));
        }
        let v = self.vocab();
        let steps = (beta_max / epsilon).log2().ceil() as usize;
        let top = self.top_token(context)?.0;
        let others: Vec<TokenId> = (0..v as TokenId).filter(|t| *t != top).collect();
        let searched = self.par_map(&others, |&token| {
            let is_argmax = |bias: f64| -> Result<bool> {
                let r = self.session.query(context, &BiasSpec::new().with(token, bias), 1)?;
                Ok(r.top().map(|(t, _)| t) == Some(token))
            };
            let (mut lo, mut hi) = (0.0f64, beta_max);
            let mut confirmed = false;
            for _ in 0..steps {
                let mid = 0.5 * (lo + hi);
                if is_argmax(mid)? {
                    hi = mid;
                    confirmed = true;
                } else {
                    lo = mid;
                }
            }
            if !confirmed && !is_argmax(beta_max)? {
                return Ok((token, beta_max, true));
            }
            Ok((token, 0.5 * (lo + hi), false))
        })?;
        let mut gaps = vec![0.0; v];
        let mut unargmaxable = Vec::new();
        for (t, gap, flagged) in searched {
            gaps[t as usize] = gap;
            if flagged {
                unargmaxable.push(t);
            }
        }
        if !unargmaxable.is_empty() {
            tracing::warn!(context, count = unargmaxable.len(), "tokens never became argmax at beta_max");
        }
        let neg: Vec<f64> = gaps.iter().map(|g| -g).collect();
        tracing::debug!(strategy = "logprob-free", context, calls = self.session.calls(), "extracted");
        Ok(LogprobFreeOutput {
            probs: softmax_slice(&neg),
            gaps,
            unargmaxable,
            top_token: top,
        })
    }

    /// Extraction against an API that answers from one of `n` replicas at
    /// random. Each call biases `k - 2` tokens and leaves the top two alone;
    /// their log-ratio identifies the replica. Returns as soon as one
    /// replica's vector is complete.
    pub fn extract_stochastic(&self, context: &str, n_hint: Option<usize>) -> Result<StochasticOutput> {
        let v = self.vocab();
        let k = self.k_max();
        if k < 3 {
            return Err(Error::CapabilityMismatch("stochastic extraction needs k >= 3".into()));
        }
        let beta = self.beta(false)?;
        let first = self.session.query(context, &BiasSpec::new(), k)?;
        if first.pairs.len() < 2 {
            return Err(Error::Protocol("unbiased response has fewer than 2 tokens".into()));
        }
        let reference = (first.pairs[0].0, first.pairs[1].0);
        let others: Vec<TokenId> = (0..v as TokenId)
            .filter(|t| *t != reference.0 && *t != reference.1)
            .collect();
        let batches: Vec<&[TokenId]> = others.chunks(k - 2).collect();
        let n_batches = batches.len();
        let budget = self.opts.stochastic_budget.unwrap_or_else(|| {
            let n = n_hint.unwrap_or(4).max(1) as f64;
            (10.0 * n * v as f64 / (k - 2) as f64).ceil() as u64
        });

        struct Replica {
            fingerprint: f64,
            hint: Option<u32>,
            /// log p_i - log p_top
            gaps: Vec<f64>,
            done: Vec<bool>,
            n_done: usize,
            responses: u64,
        }
        let mut replicas: Vec<Replica> = Vec::new();
        let mut fingerprints_seen = 0usize;

        let mut locate = |replicas: &mut Vec<Replica>, fp: f64, hint: Option<u32>| -> usize {
            let found = match hint {
                Some(h) => replicas.iter().position(|r| r.hint == Some(h)),
                None => replicas
                    .iter()
                    .position(|r| (r.fingerprint - fp).abs() <= FINGERPRINT_TOLERANCE),
            };
            found.unwrap_or_else(|| {
                let mut gaps = vec![f64::NAN; v];
                gaps[reference.0 as usize] = 0.0;
                gaps[reference.1 as usize] = -fp;
                replicas.push(Replica {
                    fingerprint: fp,
                    hint,
                    gaps,
                    done: vec![false; n_batches],
                    n_done: 0,
                    responses: 0,
                });
                fingerprints_seen += 1;
                replicas.len() - 1
            })
        };

        let read_reference = |response: &TopKResponse| -> Result<(f64, f64)> {
            let a = response.logprob(reference.0);
            let b = response.logprob(reference.1);
            match (a, b) {
                (Some(a), Some(b)) if a >= b => Ok((a, b)),
                _ => Err(Error::ReferenceTokensShifted {
                    expected: reference,
                    observed: response.tokens(),
                }),
            }
        };

        let (a, b) = read_reference(&first)?;
        let idx = locate(&mut replicas, a - b, first.replica_hint);
        replicas[idx].responses += 1;

        let mut calls: u64 = 1;
        let winner = loop {
            if let Some(i) = replicas.iter().position(|r| r.n_done == n_batches) {
                break i;
            }
            if calls >= budget {
                return Err(Error::BudgetExhausted { budget });
            }
            // Work on the replica closest to completion.
            let leader = replicas
                .iter()
                .enumerate()
                .max_by(|(i, x), (j, y)| x.n_done.cmp(&y.n_done).then(j.cmp(i)))
                .map(|(i, _)| i)
                .expect("at least one replica");
            let batch_idx = replicas[leader].done.iter().position(|d| !d).expect("leader incomplete");
            let batch = batches[batch_idx];
            let bias = BiasSpec::uniform(batch.iter().copied(), beta);
            let response = self.session.query(context, &bias, batch.len() + 2)?;
            calls += 1;
            let (lp_a, lp_b) = read_reference(&response)?;
            let idx = locate(&mut replicas, lp_a - lp_b, response.replica_hint);
            let replica = &mut replicas[idx];
            replica.responses += 1;
            if replica.done[batch_idx] {
                continue;
            }
            for &t in batch {
                let lp = response.logprob(t).ok_or_else(|| Error::BiasedSetMismatch {
                    first_token: batch[0],
                    expected: batch.to_vec(),
                    returned: response.tokens(),
                })?;
                replica.gaps[t as usize] = lp - beta - lp_a;
            }
            replica.done[batch_idx] = true;
            replica.n_done += 1;
        };

        let won = &replicas[winner];
        let probs = softmax_slice(&won.gaps);
        let partials = replicas
            .iter()
            .map(|r| PartialOutput {
                fingerprint: round_significant(r.fingerprint, 12),
                replica_hint: r.hint,
                batches_done: r.n_done,
                batches_total: n_batches,
                responses: r.responses,
            })
            .collect();
        tracing::debug!(
            strategy = "stochastic",
            context,
            calls,
            replicas = fingerprints_seen,
            "extracted"
        );
        Ok(StochasticOutput {
            fingerprint: won.fingerprint,
            probs,
            partials,
            degenerate: fingerprints_seen == 1,
            reference_tokens: reference,
        })
    }
}

/// `log p_top - log p_second` read from a response in which neither
/// reference token was biased.
pub fn fingerprint(response: &TopKResponse, reference: (TokenId, TokenId)) -> Result<f64> {
    let missing: Vec<TokenId> = [reference.0, reference.1]
        .into_iter()
        .filter(|t| response.logprob(*t).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTokens(missing));
    }
    Ok(response.logprob(reference.0).unwrap() - response.logprob(reference.1).unwrap())
}

/// Fingerprint of an unbiased response: the gap between its first two entries.
pub fn fingerprint_unbiased(response: &TopKResponse) -> Result<f64> {
    match response.pairs.as_slice() {
        [(a, _), (b, _), ..] => fingerprint(response, (*a, *b)),
        _ => Err(Error::MissingTokens(response.tokens())),
    }
}
