use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use reqwest::{Method, StatusCode};
use serde::Deserialize;

use super::{ApiError, Auth, ClusterConfig, ClusterPort, PodLogs};
use crate::manifests::{JobPhase, JobStatus, Manifest, ResourceKind};

/// Interval between consecutive status polls of one job.
pub const POLL_INTERVAL: Duration = Duration::from_millis(500);

const IDEMPOTENT_ATTEMPTS: usize = 3;
const RETRY_BACKOFF: Duration = Duration::from_millis(100);

/// REST client for the Job/ConfigMap/Pod subset of the cluster API.
#[derive(Clone)]
pub struct ClusterClient {
    http: reqwest::Client,
    base: String,
    namespace: String,
    token: Option<String>,
}

impl std::fmt::Debug for ClusterClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClusterClient")
            .field("base", &self.base)
            .field("namespace", &self.namespace)
            .finish_non_exhaustive()
    }
}

impl ClusterClient {
    pub fn new(cfg: &ClusterConfig) -> Result<Self, ApiError> {
        let mut builder = reqwest::Client::builder()
            .use_rustls_tls()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(60));
        if let Some(ca) = &cfg.cluster_ca {
            let cert = reqwest::Certificate::from_pem(ca).map_err(|e| ApiError::Decode {
                message: format!("cluster CA certificate: {e}"),
            })?;
            builder = builder.add_root_certificate(cert);
        }
        if cfg.insecure_skip_tls_verify {
            builder = builder.danger_accept_invalid_certs(true);
        }
        let mut token = None;
        match &cfg.auth {
            Auth::BearerToken(t) => token = Some(t.clone()),
            Auth::ClientCertificate { cert_pem, key_pem } => {
                let mut pem = cert_pem.clone();
                pem.push(b'\n');
                pem.extend_from_slice(key_pem);
                let identity = reqwest::Identity::from_pem(&pem).map_err(|e| ApiError::Decode {
                    message: format!("client certificate: {e}"),
                })?;
                builder = builder.identity(identity);
            }
            Auth::Anonymous => {}
        }
        let http = builder.build().map_err(|e| ApiError::Transport {
            message: e.to_string(),
        })?;
        Ok(Self {
            http,
            base: cfg.server_url.as_str().trim_end_matches('/').to_string(),
            namespace: cfg.namespace.clone(),
            token,
        })
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    fn collection_url(&self, kind: ResourceKind) -> String {
        match kind {
            ResourceKind::Job => format!("{}/apis/batch/v1/namespaces/{}/jobs", self.base, self.namespace),
            ResourceKind::ConfigMap => {
                format!("{}/api/v1/namespaces/{}/configmaps", self.base, self.namespace)
            }
        }
    }

    fn item_url(&self, kind: ResourceKind, name: &str) -> String {
        format!("{}/{}", self.collection_url(kind), name)
    }

    fn pods_url(&self, job_name: &str) -> String {
        format!(
            "{}/api/v1/namespaces/{}/pods?labelSelector=job-name%3D{}",
            self.base, self.namespace, job_name
        )
    }

    fn log_url(&self, pod: &str) -> String {
        format!("{}/api/v1/namespaces/{}/pods/{}/log", self.base, self.namespace, pod)
    }

    async fn send_once(
        &self,
        method: Method,
        url: &str,
        body: Option<String>,
    ) -> Result<(StatusCode, String), ApiError> {
        let mut req = self.http.request(method, url);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        if let Some(body) = body {
            req = req.header("Content-Type", "application/yaml").body(body);
        }
        let resp = req.send().await.map_err(|e| ApiError::Transport {
            message: e.to_string(),
        })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ApiError::Transport {
            message: e.to_string(),
        })?;
        Ok((status, text))
    }

    /// GET and DELETE are retried on transport failure; POST is sent once.
    async fn request(
        &self,
        method: Method,
        url: &str,
        body: Option<String>,
    ) -> Result<String, ApiError> {
        let attempts = if method == Method::POST { 1 } else { IDEMPOTENT_ATTEMPTS };
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                tokio::time::sleep(RETRY_BACKOFF * attempt as u32).await;
            }
            match self.send_once(method.clone(), url, body.clone()).await {
                Ok((status, text)) if status.is_success() => return Ok(text),
                Ok((status, text)) => return Err(status_error(status, &text)),
                Err(e) => {
                    tracing::debug!(%url, attempt, error = %e, "cluster request failed");
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    async fn get_json<T: for<'de> Deserialize<'de>>(&self, url: &str) -> Result<T, ApiError> {
        let text = self.request(Method::GET, url, None).await?;
        decode(&text)
    }

    async fn newest_pod(&self, job_name: &str) -> Result<Option<RawPod>, ApiError> {
        let list: RawPodList = self.get_json(&self.pods_url(job_name)).await?;
        Ok(list
            .items
            .into_iter()
            .max_by(|a, b| {
                a.metadata
                    .creation_timestamp
                    .cmp(&b.metadata.creation_timestamp)
                    .then_with(|| a.metadata.name.cmp(&b.metadata.name))
            }))
    }
}

fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ApiError> {
    serde_json::from_str(text).map_err(|e| ApiError::Decode {
        message: e.to_string(),
    })
}

fn status_error(status: StatusCode, body: &str) -> ApiError {
    let message = serde_json::from_str::<RawStatus>(body)
        .ok()
        .and_then(|s| s.message)
        .unwrap_or_else(|| body.trim().to_string());
    match status.as_u16() {
        401 | 403 => ApiError::Auth {
            status: status.as_u16(),
            message,
        },
        404 => ApiError::NotFound { message },
        code => ApiError::Api {
            status: code,
            message,
        },
    }
}

#[async_trait]
impl ClusterPort for ClusterClient {
    async fn create_resource(&self, manifest: &Manifest) -> Result<String, ApiError> {
        let body = match manifest {
            Manifest::Job(j) => j.to_yaml(),
            Manifest::ConfigMap(c) => c.to_yaml(),
        };
        let url = self.collection_url(manifest.kind());
        let text = self.request(Method::POST, &url, Some(body)).await?;
        let created: RawObject = decode(&text)?;
        Ok(created.metadata.name)
    }

    async fn get_job_status(&self, name: &str) -> Result<JobStatus, ApiError> {
        let job: RawJob = self.get_json(&self.item_url(ResourceKind::Job, name)).await?;
        let st = job.status.unwrap_or_default();
        let condition = |kind: &str| {
            st.conditions
                .iter()
                .find(|c| c.kind == kind && c.status == "True")
        };

        let terminal = if condition("Complete").is_some() {
            Some((JobPhase::Succeeded, None))
        } else {
            condition("Failed").map(|c| (JobPhase::Failed, c.reason.clone()))
        };

        if let Some((phase, condition_reason)) = terminal {
            let pod = self.newest_pod(name).await?;
            let terminated = pod.as_ref().and_then(RawPod::terminated);
            let (exit_code, reason) = match phase {
                JobPhase::Succeeded => (0, None),
                _ => (
                    terminated.and_then(|t| t.exit_code).unwrap_or(1),
                    terminated
                        .and_then(|t| t.reason.clone())
                        .or(condition_reason),
                ),
            };
            return Ok(JobStatus {
                phase,
                exit_code: Some(exit_code),
                reason,
                started_at: st.start_time.or(terminated.and_then(|t| t.started_at)),
                finished_at: st
                    .completion_time
                    .or(terminated.and_then(|t| t.finished_at)),
            });
        }

        let phase = if st.ready.unwrap_or(0) > 0 {
            JobPhase::Running
        } else if st.active.unwrap_or(0) > 0 {
            match self.newest_pod(name).await?.and_then(|p| p.status.phase) {
                Some(p) if p == "Running" => JobPhase::Running,
                _ => JobPhase::Pending,
            }
        } else {
            JobPhase::Pending
        };
        Ok(JobStatus {
            phase,
            exit_code: None,
            reason: None,
            started_at: if phase == JobPhase::Running { st.start_time } else { None },
            finished_at: None,
        })
    }

    async fn get_pod_logs(&self, job_name: &str) -> Result<PodLogs, ApiError> {
        let pod = self.newest_pod(job_name).await?.ok_or_else(|| ApiError::NotFound {
            message: format!("no pod found for job {job_name}"),
        })?;
        let text = self
            .request(Method::GET, &self.log_url(&pod.metadata.name), None)
            .await?;
        Ok(PodLogs {
            pod_name: pod.metadata.name,
            text,
            stderr_merged: true,
        })
    }

    async fn delete_resource(&self, kind: ResourceKind, name: &str) -> Result<(), ApiError> {
        let url = format!("{}?propagationPolicy=Foreground", self.item_url(kind, name));
        match self.request(Method::DELETE, &url, None).await {
            Ok(_) | Err(ApiError::NotFound { .. }) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

#[derive(Deserialize)]
struct RawStatus {
    message: Option<String>,
}

#[derive(Deserialize)]
struct RawObject {
    metadata: RawMeta,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawMeta {
    name: String,
    creation_timestamp: Option<DateTime<Utc>>,
}

#[derive(Deserialize)]
struct RawJob {
    status: Option<RawJobStatus>,
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase")]
struct RawJobStatus {
    active: Option<u32>,
    ready: Option<u32>,
    start_time: Option<DateTime<Utc>>,
    completion_time: Option<DateTime<Utc>>,
    #[serde(default)]
    conditions: Vec<RawCondition>,
}

#[derive(Deserialize)]
struct RawCondition {
    #[serde(rename = "type")]
    kind: String,
    status: String,
    reason: Option<String>,
}

#[derive(Deserialize)]
struct RawPodList {
    #[serde(default)]
    items: Vec<RawPod>,
}

#[derive(Deserialize)]
struct RawPod {
    metadata: RawMeta,
    #[serde(default)]
    status: RawPodStatus,
}

impl RawPod {
    fn terminated(&self) -> Option<&RawTerminated> {
        self.status
            .container_statuses
            .iter()
            .find_map(|c| c.state.as_ref().and_then(|s| s.terminated.as_ref()))
    }
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase")]
struct RawPodStatus {
    phase: Option<String>,
    #[serde(default)]
    container_statuses: Vec<RawContainerStatus>,
}

#[derive(Deserialize)]
struct RawContainerStatus {
    state: Option<RawContainerState>,
}

#[derive(Deserialize)]
struct RawContainerState {
    terminated: Option<RawTerminated>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawTerminated {
    exit_code: Option<i32>,
    reason: Option<String>,
    started_at: Option<DateTime<Utc>>,
    finished_at: Option<DateTime<Utc>>,
}
