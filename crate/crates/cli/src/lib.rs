//! Command-line front end: argument definitions, command implementations
//! and run manifests. The `llmimage` binary is a thin wrapper over [`run`].

pub mod args;
pub mod backend;
mod commands;
pub mod manifest;

use std::fmt;
use std::io::Write;

use llmimage::{Error, ErrorClass};

pub use args::Cli;
use args::{Command, ImageCommand};

/// A command error plus an optional remediation hint.
#[derive(Debug)]
pub struct Failure {
    pub error: Error,
    pub hint: Option<String>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self { error, hint: None }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)?;
        if let Some(h) = &self.hint {
            write!(f, "\nhint: {h}")?;
        }
        Ok(())
    }
}

impl Failure {
    /// 2 validation, 3 protocol or API, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.error.class() {
            ErrorClass::Validation => 2,
            ErrorClass::Protocol => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

/// Runs one parsed command, writing its report to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::MockServe(a) => commands::mock_serve(a, out),
        Command::Extract(a) => commands::extract(a, out),
        Command::Image(ImageCommand::Collect(a)) => commands::collect(a, out),
        Command::Image(ImageCommand::EmbedSize(a)) => commands::embed_size(a, out),
        Command::Image(ImageCommand::Spectrum(a)) => commands::spectrum(a, out),
        Command::Image(ImageCommand::FastExtract(a)) => commands::fast(a, out),
        Command::Audit(a) => commands::audit(a, out),
        Command::Attribute(a) => commands::attribute_cmd(a, out),
        Command::Cost(a) => commands::cost(a, out),
    }
}
