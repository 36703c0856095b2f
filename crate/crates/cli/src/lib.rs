//! Experiment runner: configuration handling and the four commands.

pub mod commands;
pub mod config;

use anyhow::Result;
use config::{Command, Config};
use serde_json::{json, Value};

pub fn run(command: Command, config: Config) -> Result<commands::Artifacts> {
    let cfg = config.resolve(command)?;
    match command {
        Command::GraphGen => commands::graph_gen(&cfg),
        Command::EmRun => commands::em_run(&cfg),
        Command::PrivacyAudit => commands::privacy_audit(&cfg),
        Command::CalibrateMi => commands::calibrate_mi(&cfg),
    }
}

/// Machine-readable error document: the library error kind when there is
/// one, and the full context chain as the message.
pub fn error_json(err: &anyhow::Error) -> Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<ppem_core::Error>())
        .map_or("Error", ppem_core::Error::kind);
    let message = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    json!({ "error": kind, "message": message })
}
