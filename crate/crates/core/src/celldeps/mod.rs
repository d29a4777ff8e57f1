//! Dependency detection for cell payloads and the container image they run
//! in.

mod detect;
mod image;
mod stdlib;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use detect::{detect_dependencies, DependencySet, DependencyTable, Detection};
pub use image::{
    ensure_image, image_tag, render_image_spec, CommandBuilder, ImageBuilder, ImageCache,
    BuilderCall, ImageError, ImageSpec, NoopBuilder, RecordingBuilder,
};
pub use stdlib::PYTHON_STDLIB;

/// Where a payload should run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Cpu,
    Gpu,
    Qpu,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Cpu => "cpu",
            Target::Gpu => "gpu",
            Target::Qpu => "qpu",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cpu" => Ok(Target::Cpu),
            "gpu" => Ok(Target::Gpu),
            "qpu" => Ok(Target::Qpu),
            _ => Err(TaskError::Target(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("payload source is empty")]
    EmptySource,
    #[error("name hint {0:?} must match [a-z0-9-]{{1,40}}")]
    NameHint(String),
    #[error("unknown target {0:?}, expected cpu, gpu or qpu")]
    Target(String),
}

/// One payload submitted for execution.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTask {
    source: String,
    target: Target,
    name_hint: String,
}

impl CellTask {
    pub fn new(
        source: impl Into<String>,
        target: Target,
        name_hint: impl Into<String>,
    ) -> Result<Self, TaskError> {
        let source = source.into();
        let name_hint = name_hint.into();
        if source.is_empty() {
            return Err(TaskError::EmptySource);
        }
        if !is_valid_hint(&name_hint) {
            return Err(TaskError::NameHint(name_hint));
        }
        Ok(Self {
            source,
            target,
            name_hint,
        })
    }

    /// Like [`CellTask::new`] with the default hint `cell`.
    pub fn cell(source: impl Into<String>, target: Target) -> Result<Self, TaskError> {
        Self::new(source, target, "cell")
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn name_hint(&self) -> &str {
        &self.name_hint
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }
}

fn is_valid_hint(hint: &str) -> bool {
    (1..=40).contains(&hint.len())
        && hint
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// Lowercases `raw` and maps anything outside `[a-z0-9-]` to `-`, trimmed
/// to 40 characters. Falls back to `cell` when nothing usable remains.
pub fn sanitize_hint(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .map(|c| c.to_ascii_lowercase())
        .map(|c| if c.is_ascii_lowercase() || c.is_ascii_digit() { c } else { '-' })
        .take(40)
        .collect();
    let trimmed = mapped.trim_matches('-');
    if trimmed.is_empty() {
        "cell".to_string()
    } else {
        trimmed.to_string()
    }
}
