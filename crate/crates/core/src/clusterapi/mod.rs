//! Minimal cluster API client: configuration loading plus create, status,
//! logs and delete for Jobs and ConfigMaps.

mod client;
mod kubeconfig;

use async_trait::async_trait;
use thiserror::Error;

use crate::manifests::{JobStatus, Manifest, ResourceKind};

pub use client::{ClusterClient, POLL_INTERVAL};
pub use kubeconfig::{load_from_env, load_kubeconfig, parse_kubeconfig, Auth, ClusterConfig, ConfigError};

/// Errors returned by the cluster API. Messages from the server are kept
/// verbatim.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApiError {
    #[error("unauthorized (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("not found: {message}")]
    NotFound { message: String },
    #[error("cluster API error (HTTP {status}): {message}")]
    Api { status: u16, message: String },
    #[error("transport error: {message} (is the cluster server reachable? the request is safe to retry)")]
    Transport { message: String },
    #[error("unexpected response: {message}")]
    Decode { message: String },
}

/// Container output of a job's pod. Cluster logs interleave stdout and
/// stderr into one stream, flagged by `stderr_merged`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PodLogs {
    pub pod_name: String,
    pub text: String,
    pub stderr_merged: bool,
}

/// The cluster operations the dispatcher needs.
#[async_trait]
pub trait ClusterPort: Send + Sync {
    /// Creates the resource and returns the name the server assigned.
    async fn create_resource(&self, manifest: &Manifest) -> Result<String, ApiError>;
    async fn get_job_status(&self, name: &str) -> Result<JobStatus, ApiError>;
    async fn get_pod_logs(&self, job_name: &str) -> Result<PodLogs, ApiError>;
    /// Idempotent: deleting an absent resource succeeds.
    async fn delete_resource(&self, kind: ResourceKind, name: &str) -> Result<(), ApiError>;
}
