use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::process::Command;
use tokio::sync::OnceCell;

use super::detect::DependencySet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSpec {
    pub base_image: String,
    pub requirements_text: String,
    pub build_file_text: String,
    /// Lowercase hex SHA-256 of `base_image ‖ 0x00 ‖ requirements_text`.
    pub content_hash: String,
}

impl ImageSpec {
    pub fn short_hash(&self) -> &str {
        &self.content_hash[..12]
    }

    /// Writes `Dockerfile` and `requirements.txt` into `dir`.
    pub fn write_context(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(dir.join("Dockerfile"), &self.build_file_text)?;
        std::fs::write(dir.join("requirements.txt"), &self.requirements_text)
    }
}

pub fn render_image_spec(deps: &DependencySet, base_image: &str) -> ImageSpec {
    let requirements_text = deps.requirements_text();
    let mut build_file_text = format!("FROM {base_image}\n");
    if !deps.is_empty() {
        build_file_text.push_str("COPY requirements.txt /tmp/requirements.txt\n");
        build_file_text.push_str("RUN pip install -r /tmp/requirements.txt\n");
    }
    let mut hasher = Sha256::new();
    hasher.update(base_image.as_bytes());
    hasher.update([0u8]);
    hasher.update(requirements_text.as_bytes());
    ImageSpec {
        base_image: base_image.to_string(),
        requirements_text,
        build_file_text,
        content_hash: hex::encode(hasher.finalize()),
    }
}

/// `<registry_prefix>/job-dependencies:<first 12 hex of the content hash>`.
pub fn image_tag(registry_prefix: &str, spec: &ImageSpec) -> String {
    format!(
        "{}/job-dependencies:{}",
        registry_prefix.trim_end_matches('/'),
        spec.short_hash()
    )
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("image build failed: {0}")]
    Build(String),
    #[error("registry push failed: {0}")]
    Registry(String),
}

/// Builds an image from a spec and pushes it to the registry.
#[async_trait]
pub trait ImageBuilder: Send + Sync {
    async fn build(&self, spec: &ImageSpec, tag: &str) -> Result<(), ImageError>;
    async fn push(&self, tag: &str) -> Result<(), ImageError>;
}

/// Content-hash to tag store. Concurrent requests for the same hash share
/// one build.
#[derive(Debug, Default)]
pub struct ImageCache {
    cells: Mutex<HashMap<String, Arc<OnceCell<String>>>>,
}

impl ImageCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, content_hash: &str) -> Option<String> {
        let cells = self.cells.lock().expect("image cache poisoned");
        cells.get(content_hash).and_then(|c| c.get().cloned())
    }

    fn cell(&self, content_hash: &str) -> Arc<OnceCell<String>> {
        let mut cells = self.cells.lock().expect("image cache poisoned");
        cells.entry(content_hash.to_string()).or_default().clone()
    }
}

/// Returns the tag for `spec`, building and pushing it only on a cache miss.
pub async fn ensure_image(
    spec: &ImageSpec,
    cache: &ImageCache,
    builder: &dyn ImageBuilder,
    registry_prefix: &str,
) -> Result<String, ImageError> {
    let cell = cache.cell(&spec.content_hash);
    let tag = cell
        .get_or_try_init(|| async {
            let tag = image_tag(registry_prefix, spec);
            builder.build(spec, &tag).await?;
            builder.push(&tag).await?;
            Ok::<_, ImageError>(tag)
        })
        .await?;
    Ok(tag.clone())
}

/// Shells out to a container tool. `{tag}` and `{context}` in the argument
/// templates are replaced by the image tag and the build context directory.
#[derive(Debug, Clone)]
pub struct CommandBuilder {
    pub build_command: Vec<String>,
    pub push_command: Vec<String>,
}

impl CommandBuilder {
    pub fn new(build_command: Vec<String>, push_command: Vec<String>) -> Self {
        Self {
            build_command,
            push_command,
        }
    }

    /// Splits whitespace-separated templates such as
    /// `docker build -t {tag} {context}`.
    pub fn from_templates(build: &str, push: &str) -> Self {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect();
        Self::new(split(build), split(push))
    }

    async fn run(template: &[String], tag: &str, context: &str) -> Result<(), String> {
        let args: Vec<String> = template
            .iter()
            .map(|a| a.replace("{tag}", tag).replace("{context}", context))
            .collect();
        let (program, rest) = args.split_first().ok_or("empty command template")?;
        let output = Command::new(program)
            .args(rest)
            .output()
            .await
            .map_err(|e| format!("{program}: {e}"))?;
        if output.status.success() {
            Ok(())
        } else {
            let mut diag = String::from_utf8_lossy(&output.stderr).into_owned();
            if diag.trim().is_empty() {
                diag = String::from_utf8_lossy(&output.stdout).into_owned();
            }
            Err(format!("{program} exited with {}: {}", output.status, diag.trim()))
        }
    }
}

impl Default for CommandBuilder {
    fn default() -> Self {
        Self::from_templates("docker build -t {tag} {context}", "docker push {tag}")
    }
}

#[async_trait]
impl ImageBuilder for CommandBuilder {
    async fn build(&self, spec: &ImageSpec, tag: &str) -> Result<(), ImageError> {
        let dir = tempfile::tempdir().map_err(|e| ImageError::Build(e.to_string()))?;
        spec.write_context(dir.path())
            .map_err(|e| ImageError::Build(e.to_string()))?;
        let context = dir.path().to_string_lossy().into_owned();
        Self::run(&self.build_command, tag, &context)
            .await
            .map_err(ImageError::Build)
    }

    async fn push(&self, tag: &str) -> Result<(), ImageError> {
        Self::run(&self.push_command, tag, "")
            .await
            .map_err(ImageError::Registry)
    }
}

/// Accepts every request without doing anything, for clusters whose nodes
/// already hold the images (the fake cluster, pre-provisioned registries).
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopBuilder;

#[async_trait]
impl ImageBuilder for NoopBuilder {
    async fn build(&self, _spec: &ImageSpec, _tag: &str) -> Result<(), ImageError> {
        Ok(())
    }

    async fn push(&self, _tag: &str) -> Result<(), ImageError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuilderCall {
    Build { tag: String, content_hash: String },
    Push { tag: String },
}

/// Test double that records every call and can be told to fail.
#[derive(Debug, Default)]
pub struct RecordingBuilder {
    calls: Mutex<Vec<BuilderCall>>,
    fail_build: Mutex<Option<String>>,
    fail_push: Mutex<Option<String>>,
    delay: Option<Duration>,
}

impl RecordingBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Each build sleeps for `delay`, widening race windows in tests.
    pub fn with_delay(delay: Duration) -> Self {
        Self {
            delay: Some(delay),
            ..Self::default()
        }
    }

    pub fn fail_builds_with(&self, diagnostics: Option<&str>) {
        *self.fail_build.lock().unwrap() = diagnostics.map(str::to_string);
    }

    pub fn fail_pushes_with(&self, diagnostics: Option<&str>) {
        *self.fail_push.lock().unwrap() = diagnostics.map(str::to_string);
    }

    pub fn calls(&self) -> Vec<BuilderCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn build_count(&self) -> usize {
        self.calls()
            .iter()
            .filter(|c| matches!(c, BuilderCall::Build { .. }))
            .count()
    }
}

#[async_trait]
impl ImageBuilder for RecordingBuilder {
    async fn build(&self, spec: &ImageSpec, tag: &str) -> Result<(), ImageError> {
        self.calls.lock().unwrap().push(BuilderCall::Build {
            tag: tag.to_string(),
            content_hash: spec.content_hash.clone(),
        });
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        }
        match self.fail_build.lock().unwrap().clone() {
            Some(diag) => Err(ImageError::Build(diag)),
            None => Ok(()),
        }
    }

    async fn push(&self, tag: &str) -> Result<(), ImageError> {
        self.calls.lock().unwrap().push(BuilderCall::Push {
            tag: tag.to_string(),
        });
        match self.fail_push.lock().unwrap().clone() {
            Some(diag) => Err(ImageError::Registry(diag)),
            None => Ok(()),
        }
    }
}
