//! An in-process stand-in for the cluster API: one node with a fixed number
//! of GPUs, a FIFO queue for GPU jobs, and payloads executed by a
//! [`PayloadRunner`] instead of containers.
//!
//! With a virtual clock, payloads run inline when their job starts and the
//! job finishes exactly `sim_seconds` later, so every status and timestamp
//! is reproducible. With a wall clock, payloads run on worker threads.

mod http;
mod state;

use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use q8s_simkit::{memory_estimate, Directive, Precision};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::oneshot;
use url::Url;

use crate::clock::{SharedClock, WallClock};
use crate::clusterapi::ClusterConfig;
use crate::manifests::{ConfigMapManifest, JobManifest, SOURCE_FILE};
use crate::runner::PayloadRunner;

pub use state::{Introspection, PhaseEvent};
use state::ClusterState;

pub const OOM_EXIT_CODE: i32 = 137;
pub const OOM_REASON: &str = "OOMKilled";
pub const CONFIG_ERROR_EXIT_CODE: i32 = 128;
pub const CONFIG_ERROR_REASON: &str = "CreateContainerConfigError";

const GIB: u128 = 1 << 30;

/// Extra admission latency for jobs whose statevector exceeds a threshold:
/// `ms_per_gib` for every GiB above `threshold_bytes`. A model of a
/// scheduler securing memory, not a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryDelay {
    pub threshold_bytes: u128,
    pub ms_per_gib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSpec {
    pub gpu_count: u32,
    pub gpu_memory_bytes: u128,
    /// Memory available to jobs that request no GPU.
    pub host_memory_bytes: u128,
    pub schedule_delay_ms: u64,
    /// Divides the simulator time reported by payloads.
    pub speed_factor: f64,
    /// Added once per image tag, on the first job that uses it.
    pub pull_delay_ms: u64,
    pub memory_delay: Option<MemoryDelay>,
}

#[derive(Debug, Error, PartialEq)]
pub enum NodeSpecError {
    #[error("speed_factor must be a finite number > 0, got {0}")]
    SpeedFactor(f64),
    #[error("unknown node profile {0:?}, expected workstation or cloud-a100")]
    Profile(String),
    #[error("invalid profile option {0:?}")]
    Option(String),
}

impl NodeSpec {
    /// One 16 GiB GPU.
    pub fn workstation() -> Self {
        Self {
            gpu_count: 1,
            gpu_memory_bytes: 16 * GIB,
            host_memory_bytes: 64 * GIB,
            schedule_delay_ms: 1000,
            speed_factor: 1.0,
            pull_delay_ms: 0,
            memory_delay: None,
        }
    }

    /// One 40 GiB GPU; jobs above 27 qubits wait for memory to be secured.
    pub fn cloud_a100() -> Self {
        Self {
            gpu_count: 1,
            gpu_memory_bytes: 40 * GIB,
            host_memory_bytes: 256 * GIB,
            schedule_delay_ms: 2000,
            speed_factor: 1.0,
            pull_delay_ms: 0,
            memory_delay: Some(MemoryDelay {
                threshold_bytes: memory_estimate(27, Precision::Double).bytes,
                ms_per_gib: 1000.0,
            }),
        }
    }

    pub fn profile(name: &str) -> Result<Self, NodeSpecError> {
        match name {
            "workstation" => Ok(Self::workstation()),
            "cloud-a100" => Ok(Self::cloud_a100()),
            other => Err(NodeSpecError::Profile(other.to_string())),
        }
    }

    pub fn with_schedule_delay_ms(mut self, ms: u64) -> Self {
        self.schedule_delay_ms = ms;
        self
    }

    pub fn with_speed_factor(mut self, speed: f64) -> Self {
        self.speed_factor = speed;
        self
    }

    pub fn with_pull_delay_ms(mut self, ms: u64) -> Self {
        self.pull_delay_ms = ms;
        self
    }

    pub fn with_gpu_count(mut self, gpus: u32) -> Self {
        self.gpu_count = gpus;
        self
    }

    pub fn validate(&self) -> Result<(), NodeSpecError> {
        if self.speed_factor.is_finite() && self.speed_factor > 0.0 {
            Ok(())
        } else {
            Err(NodeSpecError::SpeedFactor(self.speed_factor))
        }
    }

    /// Seconds between job creation and eligibility to start.
    pub fn admission_delay_seconds(&self, source: Option<&str>) -> f64 {
        let base = self.schedule_delay_ms as f64 / 1000.0;
        let extra = match (self.memory_delay, source.and_then(|s| Directive::find(s).ok().flatten())) {
            (Some(model), Some(d)) => {
                let need = memory_estimate(d.n as u32, Precision::Double).bytes;
                let over = need.saturating_sub(model.threshold_bytes);
                over as f64 / GIB as f64 * model.ms_per_gib / 1000.0
            }
            _ => 0.0,
        };
        base + extra
    }
}

/// `profile[:key=value]...` with keys `delay` (ms), `speed`, `pull` (ms)
/// and `gpus`.
impl FromStr for NodeSpec {
    type Err = NodeSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let mut node = Self::profile(parts.next().unwrap_or_default())?;
        for opt in parts {
            let bad = || NodeSpecError::Option(opt.to_string());
            let (key, value) = opt.split_once('=').ok_or_else(bad)?;
            match key {
                "delay" => node.schedule_delay_ms = value.parse().map_err(|_| bad())?,
                "speed" => node.speed_factor = value.parse().map_err(|_| bad())?,
                "pull" => node.pull_delay_ms = value.parse().map_err(|_| bad())?,
                "gpus" => node.gpu_count = value.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        node.validate()?;
        Ok(node)
    }
}

/// What a finished container reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadResult {
    pub exit_code: i32,
    /// stdout then stderr, as one stream.
    pub log: String,
    pub reason: Option<String>,
    pub sim_seconds: Option<f64>,
}

/// The node-level OOM rule: a statevector that needs at least the whole
/// device memory cannot be held alongside the simulator's workspace.
pub fn exceeds_device(required_bytes: u128, device_bytes: u128) -> bool {
    required_bytes >= device_bytes
}

/// Failures decided before the payload starts: missing source and memory
/// exhaustion.
pub(crate) fn pre_run_failure(
    job: &JobManifest,
    configmap: Option<&ConfigMapManifest>,
    node: &NodeSpec,
) -> Option<PayloadResult> {
    let Some(cm) = configmap else {
        return Some(PayloadResult {
            exit_code: CONFIG_ERROR_EXIT_CODE,
            log: String::new(),
            reason: Some(CONFIG_ERROR_REASON.to_string()),
            sim_seconds: None,
        });
    };
    let Some(source) = cm.source() else {
        return Some(PayloadResult {
            exit_code: 2,
            log: format!(
                "python: can't open file '{}/{SOURCE_FILE}': [Errno 2] No such file or directory\n",
                job.mount_path
            ),
            reason: Some("Error".to_string()),
            sim_seconds: None,
        });
    };
    if let Ok(Some(d)) = Directive::find(source) {
        let need = memory_estimate(u32::try_from(d.n).unwrap_or(u32::MAX), Precision::Double).bytes;
        let device = if job.requests_gpu() {
            node.gpu_memory_bytes
        } else {
            node.host_memory_bytes
        };
        if exceeds_device(need, device) {
            return Some(PayloadResult {
                exit_code: OOM_EXIT_CODE,
                log: String::new(),
                reason: Some(OOM_REASON.to_string()),
                sim_seconds: None,
            });
        }
    }
    None
}

/// Runs the payload mounted into `job` on `node`.
pub fn run_payload(
    job: &JobManifest,
    configmap: Option<&ConfigMapManifest>,
    node: &NodeSpec,
    runner: &dyn PayloadRunner,
) -> PayloadResult {
    if let Some(early) = pre_run_failure(job, configmap, node) {
        return early;
    }
    let source = configmap.and_then(ConfigMapManifest::source).unwrap_or_default();
    let out = runner.run(source, node.speed_factor);
    let reason = if out.success() {
        None
    } else {
        Some(out.reason.clone().unwrap_or_else(|| "Error".to_string()))
    };
    PayloadResult {
        exit_code: out.exit_code,
        log: out.merged_log(),
        reason,
        sim_seconds: out.sim_seconds,
    }
}

#[derive(Clone)]
pub struct ServeOptions {
    pub listen: SocketAddr,
    pub clock: SharedClock,
    /// Bearer token required on every request when set.
    pub token: Option<String>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 0)),
            clock: WallClock::shared(),
            token: None,
        }
    }
}

impl ServeOptions {
    pub fn with_clock(clock: SharedClock) -> Self {
        Self {
            clock,
            ..Self::default()
        }
    }
}

pub(crate) struct Shared {
    state: Mutex<ClusterState>,
    clock: SharedClock,
    token: Option<String>,
}

impl Shared {
    /// Locks the state after replaying events up to the current time.
    fn sync(self: &Arc<Self>) -> MutexGuard<'_, ClusterState> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let requests = state.advance(self.clock.now());
        for req in requests {
            let shared = Arc::clone(self);
            let node = state.node().clone();
            let runner = state.runner();
            std::thread::spawn(move || {
                let result = run_payload(&req.job, req.configmap.as_ref(), &node, runner.as_ref());
                let done = shared.clock.now();
                let mut st = shared.state.lock().unwrap_or_else(|e| e.into_inner());
                st.complete_compute(&req.key, req.seq, result, done);
            });
        }
        state
    }
}

/// A running fake cluster bound to a loopback port.
pub struct FakeCluster {
    shared: Arc<Shared>,
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: Option<tokio::task::JoinHandle<()>>,
}

impl FakeCluster {
    /// Binds and starts serving. Must be called inside a tokio runtime.
    pub async fn serve(
        node: NodeSpec,
        runner: Arc<dyn PayloadRunner>,
        opts: ServeOptions,
    ) -> std::io::Result<Self> {
        node.validate()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        let inline = opts.clock.is_virtual();
        let shared = Arc::new(Shared {
            state: Mutex::new(ClusterState::new(node, runner, inline)),
            clock: opts.clock.clone(),
            token: opts.token.clone(),
        });
        let listener = tokio::net::TcpListener::bind(opts.listen).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = http::router(shared.clone());
        let ticker_shared = shared.clone();
        let server = tokio::spawn(async move {
            let ticker = async move {
                if inline {
                    return std::future::pending::<()>().await;
                }
                let mut tick = tokio::time::interval(std::time::Duration::from_millis(10));
                loop {
                    tick.tick().await;
                    drop(ticker_shared.sync());
                }
            };
            let served = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            tokio::select! {
                r = served => if let Err(e) = r { tracing::error!(error = %e, "fake cluster server stopped") },
                _ = ticker => {}
            }
        });
        tracing::debug!(%addr, "fake cluster listening");
        Ok(Self {
            shared,
            addr,
            shutdown: Some(tx),
            server: Some(server),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> Url {
        Url::parse(&format!("http://{}", self.addr)).expect("loopback url")
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        let mut cfg = ClusterConfig::with_token(self.endpoint(), self.shared.token.clone().unwrap_or_default());
        if self.shared.token.is_none() {
            cfg.auth = crate::clusterapi::Auth::Anonymous;
        }
        cfg
    }

    /// A kubeconfig document pointing at this cluster.
    pub fn kubeconfig_yaml(&self) -> String {
        let mut doc = format!(
            "apiVersion: v1\nkind: Config\ncurrent-context: q8s-fake\nclusters:\n- name: q8s-fake\n  cluster:\n    server: {}\ncontexts:\n- name: q8s-fake\n  context:\n    cluster: q8s-fake\n    user: q8s-fake\n    namespace: default\nusers:\n- name: q8s-fake\n  user:",
            self.endpoint().as_str().trim_end_matches('/')
        );
        match &self.shared.token {
            Some(t) => doc.push_str(&format!("\n    token: {}\n", crate::manifests::quote_double(t))),
            None => doc.push_str(" {}\n"),
        }
        doc
    }

    pub fn node(&self) -> NodeSpec {
        self.shared.sync().node().clone()
    }

    pub fn introspect(&self) -> Introspection {
        self.shared.sync().introspect()
    }

    /// Every phase change so far, in the order applied.
    pub fn events(&self) -> Vec<PhaseEvent> {
        self.shared.sync().events().to_vec()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.shared.sync().check_invariants()
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(server) = self.server.take() {
            server.abort();
            let _ = server.await;
        }
    }
}

impl Drop for FakeCluster {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(server) = self.server.take() {
            server.abort();
        }
    }
}
