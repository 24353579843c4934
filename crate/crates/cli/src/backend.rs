use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use llmimage::extraction::{ExtractOptions, Strategy, DEFAULT_EPSILON};
use llmimage::mock::{make_checkpoint_family, MockApi, MockModel, MockModelSpec, UpdateKind};
use llmimage::{ApiSession, Capabilities, Error, Result};
use llmimage_transport::{ClientOptions, HttpApi, OpenAiProfile, Profile};

use crate::args::{ApiArgs, ProfileArg, StrategyArg};

/// Reads a mock config (or the defaults) and applies a seed override.
pub fn mock_spec(config: Option<&Path>, seed: Option<u64>) -> Result<MockModelSpec> {
    let mut spec = match config {
        Some(p) => MockModelSpec::from_json(&read_text(p)?).map_err(|e| in_file(e, p))?,
        None => MockModelSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

/// Parses `clone`, `hidden-prompt=TEXT`, `partial-finetune=SIGMA`,
/// `lora=RANK` or `full-finetune=SIGMA`.
pub fn parse_update(s: &str) -> Result<UpdateKind> {
    let (kind, arg) = s.split_once('=').unwrap_or((s, ""));
    let num = |what: &str| -> Result<f64> {
        arg.parse()
            .map_err(|_| Error::Config(format!("update {kind} needs a numeric {what}, got {arg:?}")))
    };
    match kind {
        "clone" => Ok(UpdateKind::Clone),
        "hidden-prompt" => Ok(UpdateKind::HiddenPrompt(arg.to_string())),
        "partial-finetune" => Ok(UpdateKind::PartialFinetune(num("sigma")?)),
        "full-finetune" => Ok(UpdateKind::FullFinetune(num("sigma")?)),
        "lora" => arg
            .parse()
            .map(UpdateKind::Lora)
            .map_err(|_| Error::Config(format!("update lora needs an integer rank, got {arg:?}"))),
        _ => Err(Error::Config(format!("unknown update kind {kind:?}"))),
    }
}

/// The configured mock, or its checkpoint-family member when `update` is set.
pub fn mock_model(config: Option<&Path>, seed: Option<u64>, update: Option<&str>) -> Result<MockModel> {
    let spec = mock_spec(config, seed)?;
    match update {
        None => MockModel::new(spec),
        Some(u) => {
            let kind = parse_update(u)?;
            Ok(make_checkpoint_family(&spec, &[kind])?.remove(0))
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| in_file(e.into(), path))
}

/// Prefixes an error message with the file it came from, keeping its class.
pub fn in_file(e: Error, path: &Path) -> Error {
    let at = path.display();
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{at}: {io}"))),
        Error::Format(m) => Error::Format(format!("{at}: {m}")),
        Error::Json(j) => Error::Format(format!("{at}: {j}")),
        Error::Config(m) => Error::Config(format!("{at}: {m}")),
        other => other,
    }
}

/// A session plus what the manifest needs to know about where it points.
pub struct Backend {
    pub session: ApiSession,
    http: Option<Arc<HttpApi>>,
    mock_id: Option<String>,
    pub concurrency: usize,
}

impl Backend {
    pub fn open(args: &ApiArgs) -> Result<Self> {
        let cache = !args.no_cache;
        let Some(url) = &args.url else {
            let model = mock_model(args.config.as_deref(), args.seed, args.update.as_deref())?;
            let mock_id = Some(model.model_id().to_string());
            let session = ApiSession::new(Arc::new(MockApi::new(Arc::new(model))), cache)?;
            return Ok(Self {
                session,
                http: None,
                mock_id,
                concurrency: args.concurrency,
            });
        };
        let auth = match &args.auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::Auth(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let profile = match args.profile {
            ProfileArg::Native => Profile::Native,
            ProfileArg::OpenaiCompatible => {
                let v = args
                    .vocab
                    .ok_or_else(|| Error::Config("--vocab is required for the openai-compatible profile".into()))?;
                let mut p = OpenAiProfile::new(
                    &args.model,
                    Capabilities {
                        v,
                        k_max: args.k_max,
                        beta_max: args.beta_max,
                        stochastic: args.stochastic,
                    },
                );
                if let Some(path) = &args.token_map {
                    let map: HashMap<String, u32> =
                        serde_json::from_str(&read_text(path)?).map_err(|e| in_file(e.into(), path))?;
                    p.token_map = Some(map);
                }
                if let Some(var) = &args.auth_env {
                    p.api_key_env = var.clone();
                }
                Profile::OpenAiCompatible(p)
            }
        };
        let http = Arc::new(HttpApi::connect(
            url,
            ClientOptions {
                profile,
                auth,
                ..ClientOptions::default()
            },
        )?);
        let session = ApiSession::new(http.clone(), cache)?;
        Ok(Self {
            session,
            http: Some(http),
            mock_id: None,
            concurrency: args.concurrency,
        })
    }

    pub fn extract_options(&self, beta: Option<f64>, budget: Option<u64>) -> ExtractOptions {
        ExtractOptions {
            beta,
            concurrency: self.concurrency,
            stochastic_budget: budget,
        }
    }

    pub fn model_id(&self) -> Option<String> {
        self.http.as_ref().map_or_else(|| self.mock_id.clone(), |h| h.model_id())
    }

    /// HTTP attempts including the capabilities request and retries.
    pub fn round_trips(&self) -> Option<u64> {
        self.http.as_ref().map(|h| h.round_trips())
    }
}

pub fn strategy(s: StrategyArg, epsilon: Option<f64>, n_hint: Option<usize>) -> Strategy {
    match s {
        StrategyArg::Fast => Strategy::Fast,
        StrategyArg::Stable => Strategy::Stable,
        StrategyArg::Stochastic => Strategy::Stochastic { n_hint },
        StrategyArg::LogprobFree => Strategy::LogprobFree {
            epsilon: epsilon.unwrap_or(DEFAULT_EPSILON),
        },
    }
}
