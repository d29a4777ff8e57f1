//! Job and ConfigMap resources for one payload execution.

mod yaml;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::celldeps::{CellTask, Target};

pub use yaml::quote_double;

pub const GPU_RESOURCE: &str = "nvidia.com/gpu";
pub const QPU_RESOURCE: &str = "vendor.example.com/qpu";
pub const SOURCE_FILE: &str = "main.py";
pub const MOUNT_PATH: &str = "/app";
pub const RESTART_NEVER: &str = "Never";
pub const CONTAINER_NAME: &str = "quantum-task";
pub const VOLUME_NAME: &str = "source-code-volume";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("invalid resource name {0:?}: must match [a-z0-9-]+ and be at most 63 characters")]
    Name(String),
    #[error("cannot parse manifest: {0}")]
    Parse(String),
    #[error("unsupported manifest shape: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceLimit {
    pub key: String,
    pub quantity: String,
}

impl ResourceLimit {
    /// The single-device limit requested for `target`, none for cpu.
    pub fn for_target(target: Target) -> Option<Self> {
        let key = match target {
            Target::Cpu => return None,
            Target::Gpu => GPU_RESOURCE,
            Target::Qpu => QPU_RESOURCE,
        };
        Some(Self {
            key: key.to_string(),
            quantity: "1".to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobManifest {
    pub name: String,
    pub pod_name: String,
    pub container_name: String,
    pub image: String,
    pub command: Vec<String>,
    pub limit: Option<ResourceLimit>,
    pub volume_name: String,
    pub configmap_name: String,
    pub mount_path: String,
    pub restart_policy: String,
}

impl JobManifest {
    pub fn requests_gpu(&self) -> bool {
        self.limit.as_ref().is_some_and(|l| l.key == GPU_RESOURCE)
    }

    pub fn target(&self) -> Target {
        match self.limit.as_ref().map(|l| l.key.as_str()) {
            Some(GPU_RESOURCE) => Target::Gpu,
            Some(QPU_RESOURCE) => Target::Qpu,
            _ => Target::Cpu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigMapManifest {
    pub name: String,
    pub data: BTreeMap<String, String>,
}

impl ConfigMapManifest {
    pub fn source(&self) -> Option<&str> {
        self.data.get(SOURCE_FILE).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Manifest {
    Job(JobManifest),
    ConfigMap(ConfigMapManifest),
}

impl Manifest {
    pub fn name(&self) -> &str {
        match self {
            Manifest::Job(j) => &j.name,
            Manifest::ConfigMap(c) => &c.name,
        }
    }

    pub fn kind(&self) -> ResourceKind {
        match self {
            Manifest::Job(_) => ResourceKind::Job,
            Manifest::ConfigMap(_) => ResourceKind::ConfigMap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResourceKind {
    Job,
    ConfigMap,
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResourceKind::Job => "job",
            ResourceKind::ConfigMap => "configmap",
        })
    }
}

pub fn validate_name(name: &str) -> Result<(), ManifestError> {
    let ok = !name.is_empty()
        && name.len() <= 63
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(ManifestError::Name(name.to_string()))
    }
}

/// `q8s-<hint>-<8 random hex>`.
pub fn generate_job_name<R: Rng + ?Sized>(name_hint: &str, rng: &mut R) -> String {
    format!("q8s-{name_hint}-{:08x}", rng.gen::<u32>())
}

/// Builds the Job and the ConfigMap holding the payload source. Both share
/// `job_name`; the Job mounts the ConfigMap at `/app`.
pub fn make_manifests(
    task: &CellTask,
    image_tag: &str,
    job_name: &str,
) -> Result<(JobManifest, ConfigMapManifest), ManifestError> {
    validate_name(job_name)?;
    let configmap = ConfigMapManifest {
        name: job_name.to_string(),
        data: BTreeMap::from([(SOURCE_FILE.to_string(), task.source().to_string())]),
    };
    let job = JobManifest {
        name: job_name.to_string(),
        pod_name: format!("{job_name}-pod"),
        container_name: CONTAINER_NAME.to_string(),
        image: image_tag.to_string(),
        command: vec!["python".to_string(), format!("{MOUNT_PATH}/{SOURCE_FILE}")],
        limit: ResourceLimit::for_target(task.target()),
        volume_name: VOLUME_NAME.to_string(),
        configmap_name: configmap.name.clone(),
        mount_path: MOUNT_PATH.to_string(),
        restart_policy: RESTART_NEVER.to_string(),
    };
    Ok((job, configmap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JobPhase {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl JobPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobPhase::Succeeded | JobPhase::Failed)
    }

    /// Position in the lifecycle; both terminal phases share the last rank.
    pub fn rank(self) -> u8 {
        match self {
            JobPhase::Pending => 0,
            JobPhase::Running => 1,
            JobPhase::Succeeded | JobPhase::Failed => 2,
        }
    }
}

impl fmt::Display for JobPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub phase: JobPhase,
    /// Present exactly when the phase is terminal; 0 for `Succeeded`.
    pub exit_code: Option<i32>,
    pub reason: Option<String>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl JobStatus {
    pub fn pending() -> Self {
        Self {
            phase: JobPhase::Pending,
            exit_code: None,
            reason: None,
            started_at: None,
            finished_at: None,
        }
    }

    pub fn is_consistent(&self) -> bool {
        let terminal_has_code = self.phase.is_terminal() == self.exit_code.is_some();
        let success_is_zero = self.phase != JobPhase::Succeeded || self.exit_code == Some(0);
        terminal_has_code && success_is_zero
    }
}
