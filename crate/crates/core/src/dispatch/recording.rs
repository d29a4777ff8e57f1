//! Port wrappers that append every call to a shared journal, for asserting
//! the exact interaction sequence of a dispatch.

use std::sync::{Arc, Mutex};

use async_trait::async_trait;

use crate::celldeps::{ImageBuilder, ImageError, ImageSpec};
use crate::clusterapi::{ApiError, ClusterPort, PodLogs};
use crate::manifests::{JobStatus, Manifest, ResourceKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PortCall {
    Build { tag: String },
    Push { tag: String },
    Create { kind: ResourceKind, name: String },
    GetStatus { name: String },
    GetLogs { name: String },
    Delete { kind: ResourceKind, name: String },
}

/// Shared, ordered record of port calls.
#[derive(Debug, Clone, Default)]
pub struct Journal(Arc<Mutex<Vec<PortCall>>>);

impl Journal {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, call: PortCall) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(call);
    }

    pub fn calls(&self) -> Vec<PortCall> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn clear(&self) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    /// Calls with consecutive duplicate status polls collapsed into one.
    pub fn collapsed(&self) -> Vec<PortCall> {
        let mut out: Vec<PortCall> = Vec::new();
        for call in self.calls() {
            if matches!(call, PortCall::GetStatus { .. }) && out.last() == Some(&call) {
                continue;
            }
            out.push(call);
        }
        out
    }
}

pub struct RecordingCluster {
    inner: Arc<dyn ClusterPort>,
    journal: Journal,
}

impl RecordingCluster {
    pub fn new(inner: Arc<dyn ClusterPort>, journal: Journal) -> Self {
        Self { inner, journal }
    }
}

#[async_trait]
impl ClusterPort for RecordingCluster {
    async fn create_resource(&self, manifest: &Manifest) -> Result<String, ApiError> {
        self.journal.push(PortCall::Create {
            kind: manifest.kind(),
            name: manifest.name().to_string(),
        });
        self.inner.create_resource(manifest).await
    }

    async fn get_job_status(&self, name: &str) -> Result<JobStatus, ApiError> {
        self.journal.push(PortCall::GetStatus { name: name.to_string() });
        self.inner.get_job_status(name).await
    }

    async fn get_pod_logs(&self, job_name: &str) -> Result<PodLogs, ApiError> {
        self.journal.push(PortCall::GetLogs { name: job_name.to_string() });
        self.inner.get_pod_logs(job_name).await
    }

    async fn delete_resource(&self, kind: ResourceKind, name: &str) -> Result<(), ApiError> {
        self.journal.push(PortCall::Delete {
            kind,
            name: name.to_string(),
        });
        self.inner.delete_resource(kind, name).await
    }
}

pub struct JournalBuilder {
    inner: Arc<dyn ImageBuilder>,
    journal: Journal,
}

impl JournalBuilder {
    pub fn new(inner: Arc<dyn ImageBuilder>, journal: Journal) -> Self {
        Self { inner, journal }
    }
}

#[async_trait]
impl ImageBuilder for JournalBuilder {
    async fn build(&self, spec: &ImageSpec, tag: &str) -> Result<(), ImageError> {
        self.journal.push(PortCall::Build { tag: tag.to_string() });
        self.inner.build(spec, tag).await
    }

    async fn push(&self, tag: &str) -> Result<(), ImageError> {
        self.journal.push(PortCall::Push { tag: tag.to_string() });
        self.inner.push(tag).await
    }
}
