//! HTTP transport for top-k logit-bias APIs: a JSON server that exposes a
//! mock model, and a client that implements [`llmimage::TopKApi`] against it
//! or against an OpenAI-compatible chat-completions endpoint.
//!
//! ```no_run
//! use std::sync::Arc;
//! use llmimage::mock::{MockApi, MockModel, MockModelSpec};
//! use llmimage::ApiSession;
//! use llmimage_transport::{serve, ClientOptions, HttpApi, ServerOptions};
//!
//! let model = Arc::new(MockModel::new(MockModelSpec::default())?);
//! let server = serve(Arc::new(MockApi::new(model)), "127.0.0.1:0", ServerOptions::default())?;
//! let api = HttpApi::connect(&server.url(), ClientOptions::default())?;
//! let session = ApiSession::new(Arc::new(api), true)?;
//! # Ok::<(), llmimage::Error>(())
//! ```

mod client;
mod openai;
mod server;
pub mod wire;

pub use client::{ClientOptions, HttpApi, OpenAiProfile, Profile, RawRecord};
pub use openai::openai_request_body;
pub use server::{serve, ServerHandle, ServerOptions};
