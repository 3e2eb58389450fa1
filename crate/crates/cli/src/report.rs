use std::path::Path;

use anyhow::Context;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    Warnings,
}

impl Status {
    pub fn from_warnings(warnings: &[String]) -> Self {
        if warnings.is_empty() {
            Status::Clean
        } else {
            Status::Warnings
        }
    }
}

/// JSON report layout shared by every command.
#[derive(Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub result: &'a R,
    pub warnings: &'a [String],
}

pub fn config_line<C: Serialize>(config: &C) -> anyhow::Result<String> {
    Ok(format!("config: {}", serde_json::to_string(config)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}
