//! Shell harness for the overoptimization lab: experiment configs, file
//! formats, and the subcommand implementations behind the `hackwatch`
//! binary.

pub mod commands;
pub mod config;
pub mod formats;

#[derive(Debug)]
pub enum CliError {
    /// Caller error: flags, config values, or asking for the impossible.
    Usage(String),
    /// The world pushed back: missing files, parse failures, shape
    /// mismatches, diverged training.
    Data(String),
}

impl CliError {
    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m.clone(),
        }
    }
}

pub enum Outcome {
    Done,
    EarlyStopped,
}
