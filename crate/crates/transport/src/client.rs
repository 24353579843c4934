//! HTTP client implementing [`TopKApi`].

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use llmimage::{BiasSpec, Capabilities, Error, Result, TokenId, TopKApi, TopKResponse};
use serde::Deserialize;
use serde_json::value::RawValue;
use ureq::Agent;

use crate::openai::{openai_request_body, RawChatResponse};
use crate::wire::{CapabilityDescriptor, ErrorBody, QueryRequest};

const RAW_LOG_LEN: usize = 256;

#[derive(Clone, Debug)]
pub enum Profile {
    /// The bundled server's protocol; capabilities come from the endpoint.
    Native,
    OpenAiCompatible(OpenAiProfile),
}

#[derive(Clone, Debug)]
pub struct OpenAiProfile {
    pub model: String,
    /// These endpoints do not advertise limits, so they are configured.
    pub capabilities: Capabilities,
    /// Token string to id. Without a map, tokens must be decimal ids.
    pub token_map: Option<HashMap<String, TokenId>>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl OpenAiProfile {
    pub fn new(model: &str, capabilities: Capabilities) -> Self {
        Self {
            model: model.into(),
            capabilities,
            token_map: None,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClientOptions {
    pub profile: Profile,
    /// Bearer token; for the OpenAI profile it defaults to the env variable.
    pub auth: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            profile: Profile::Native,
            auth: None,
            timeout: Duration::from_secs(60),
            max_retries: 5,
            backoff: Duration::from_millis(50),
        }
    }
}

/// Logprobs exactly as they appeared on the wire.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub context: String,
    pub logprobs: Vec<(TokenId, String)>,
}

pub struct HttpApi {
    agent: Agent,
    base_url: String,
    opts: ClientOptions,
    auth: Option<String>,
    caps: Capabilities,
    round_trips: AtomicU64,
    model_id: Mutex<Option<String>>,
    raw: Mutex<VecDeque<RawRecord>>,
}

#[derive(Deserialize)]
struct RawEntry<'a> {
    token: TokenId,
    #[serde(borrow)]
    logprob: &'a RawValue,
}

#[derive(Deserialize)]
struct RawQueryResponse<'a> {
    model_id: String,
    #[serde(borrow)]
    top_logprobs: Vec<RawEntry<'a>>,
    #[serde(default)]
    replica_hint: Option<u32>,
}

fn parse_logprob(raw: &RawValue) -> Result<f64> {
    // Rust's float parser rounds correctly, so shortest-form numbers
    // come back bit-exact.
    raw.get()
        .parse()
        .map_err(|_| Error::Protocol(format!("logprob {} is not a number", raw.get())))
}

enum Attempt {
    Done(String),
    Retry(Error),
    Fail(Error),
}

impl HttpApi {
    /// Connects to `base_url` (no trailing path). The native profile reads
    /// the capabilities endpoint once; it is authoritative afterwards.
    pub fn connect(base_url: &str, opts: ClientOptions) -> Result<Self> {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(opts.timeout))
            .max_idle_connections(256)
            .max_idle_connections_per_host(256)
            .build()
            .into();
        let auth = match (&opts.auth, &opts.profile) {
            (Some(a), _) => Some(a.clone()),
            (None, Profile::OpenAiCompatible(p)) => Some(std::env::var(&p.api_key_env).map_err(|_| {
                Error::Auth(format!("environment variable {} is not set", p.api_key_env))
            })?),
            (None, Profile::Native) => None,
        };
        let mut api = Self {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            auth,
            caps: Capabilities {
                v: 0,
                k_max: 0,
                beta_max: 0.0,
                stochastic: false,
            },
            opts,
            round_trips: AtomicU64::new(0),
            model_id: Mutex::new(None),
            raw: Mutex::new(VecDeque::new()),
        };
        api.caps = match &api.opts.profile {
            Profile::Native => {
                let body = api.request("/v1/capabilities", None)?;
                serde_json::from_str::<CapabilityDescriptor>(&body)?.into()
            }
            Profile::OpenAiCompatible(p) => p.capabilities.clone(),
        };
        Ok(api)
    }

    /// HTTP attempts made so far, retries included.
    pub fn round_trips(&self) -> u64 {
        self.round_trips.load(Ordering::SeqCst)
    }

    /// Model identifier reported by the most recent response.
    pub fn model_id(&self) -> Option<String> {
        self.model_id.lock().expect("model id lock").clone()
    }

    /// The most recent responses' logprob strings, oldest first.
    pub fn raw_logprobs(&self) -> Vec<RawRecord> {
        self.raw.lock().expect("raw log lock").iter().cloned().collect()
    }

    fn record(&self, model_id: String, raw: RawRecord) {
        *self.model_id.lock().expect("model id lock") = Some(model_id);
        let mut log = self.raw.lock().expect("raw log lock");
        if log.len() == RAW_LOG_LEN {
            log.pop_front();
        }
        log.push_back(raw);
    }

    /// GET when `body` is `None`, POST otherwise; retries transient failures.
    fn request(&self, path: &str, body: Option<&[u8]>) -> Result<String> {
        let url = format!("{}{path}", self.base_url);
        let mut delay = self.opts.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&url, body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.opts.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    tracing::warn!(%url, attempt, error = %e, "retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }

    fn attempt(&self, url: &str, body: Option<&[u8]>) -> Attempt {
        self.round_trips.fetch_add(1, Ordering::SeqCst);
        let auth = self.auth.as_ref().map(|t| format!("Bearer {t}"));
        let sent = match body {
            None => {
                let mut req = self.agent.get(url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.call()
            }
            Some(b) => {
                let mut req = self.agent.post(url).header("Content-Type", "application/json");
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                req.send(b)
            }
        };
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return transport_failure(e),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().with_config().limit(u64::MAX).read_to_string() {
            Ok(t) => t,
            Err(e) => return transport_failure(e),
        };
        let describe = || match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => format!("HTTP {status} {}: {}", b.code, b.message),
            Err(_) => format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
        };
        match status {
            200..=299 => Attempt::Done(text),
            401 | 403 => Attempt::Fail(Error::Auth(describe())),
            429 | 500..=599 => Attempt::Retry(Error::Transport(describe())),
            400 | 422 => Attempt::Fail(Error::CapabilityMismatch(describe())),
            _ => Attempt::Fail(Error::Protocol(describe())),
        }
    }

    fn query_native(&self, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse> {
        let body = serde_json::to_vec(&QueryRequest::new(context, bias, k))?;
        let text = self.request("/v1/query", Some(&body))?;
        let parsed: RawQueryResponse = serde_json::from_str(&text)?;
        let pairs = parsed
            .top_logprobs
            .iter()
            .map(|e| Ok((e.token, parse_logprob(e.logprob)?)))
            .collect::<Result<Vec<_>>>()?;
        let raw = parsed
            .top_logprobs
            .iter()
            .map(|e| (e.token, e.logprob.get().to_string()))
            .collect();
        self.record(
            parsed.model_id,
            RawRecord {
                context: context.into(),
                logprobs: raw,
            },
        );
        Ok(TopKResponse {
            pairs,
            replica_hint: parsed.replica_hint,
        })
    }

    fn token_id(&self, p: &OpenAiProfile, token: &str) -> Result<TokenId> {
        match &p.token_map {
            Some(map) => map.get(token).copied(),
            None => token.parse().ok(),
        }
        .ok_or_else(|| Error::Protocol(format!("cannot map token {token:?} to an id")))
    }

    fn query_openai(&self, p: &OpenAiProfile, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse> {
        let body = serde_json::to_vec(&openai_request_body(&p.model, context, bias, k))?;
        let text = self.request("/v1/chat/completions", Some(&body))?;
        let parsed: RawChatResponse = serde_json::from_str(&text)?;
        let model = parsed.model.clone().unwrap_or_else(|| p.model.clone());
        let top = parsed.into_top()?;
        let mut pairs = Vec::with_capacity(top.len());
        let mut raw = Vec::with_capacity(top.len());
        for e in &top {
            let id = self.token_id(p, &e.token)?;
            pairs.push((id, parse_logprob(e.logprob)?));
            raw.push((id, e.logprob.get().to_string()));
        }
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        self.record(
            model,
            RawRecord {
                context: context.into(),
                logprobs: raw,
            },
        );
        Ok(TopKResponse {
            pairs,
            replica_hint: None,
        })
    }
}

fn transport_failure(e: ureq::Error) -> Attempt {
    use ureq::Error as U;
    let transient = matches!(
        e,
        U::Io(_) | U::Timeout(_) | U::ConnectionFailed | U::HostNotFound | U::Protocol(_) | U::BodyStalled
    );
    let err = Error::Transport(e.to_string());
    if transient {
        Attempt::Retry(err)
    } else {
        Attempt::Fail(err)
    }
}

impl TopKApi for HttpApi {
    fn capabilities(&self) -> Result<Capabilities> {
        Ok(self.caps.clone())
    }

    fn query(&self, context: &str, bias: &BiasSpec, k: usize) -> Result<TopKResponse> {
        match &self.opts.profile {
            Profile::Native => self.query_native(context, bias, k),
            Profile::OpenAiCompatible(p) => self.query_openai(p, context, bias, k),
        }
    }
}
