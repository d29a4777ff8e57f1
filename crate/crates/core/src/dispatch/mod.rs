//! End-to-end execution of one payload: dependency detection, image,
//! manifests, submission, polling, log collection and cleanup.

mod recording;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::celldeps::{
    detect_dependencies, ensure_image, render_image_spec, CellTask, DependencyTable, ImageBuilder,
    ImageCache,
};
use crate::clock::SharedClock;
use crate::clusterapi::{ClusterPort, POLL_INTERVAL};
use crate::manifests::{generate_job_name, make_manifests, JobPhase, JobStatus, Manifest, ResourceKind};
use crate::runner::PayloadRunner;

pub use recording::{Journal, JournalBuilder, PortCall, RecordingCluster};

pub const DEADLINE_EXCEEDED: &str = "DeadlineExceeded";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30 * 60);
pub const DEFAULT_BASE_IMAGE: &str = "registry.com/user/q8s-base:cuda12.2-py3.10";
pub const DEFAULT_REGISTRY_PREFIX: &str = "registry.com/user";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Image,
    Manifests,
    CreateConfigMap,
    CreateJob,
    Poll,
    Logs,
    Local,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Image => "image",
            Stage::Manifests => "manifests",
            Stage::CreateConfigMap => "create-configmap",
            Stage::CreateJob => "create-job",
            Stage::Poll => "poll",
            Stage::Logs => "logs",
            Stage::Local => "local",
        })
    }
}

/// Wall-time split of one execution. `overhead_seconds` is computed as
/// `wall_seconds - simulator_seconds`, so the identity is exact.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TimingRecord {
    pub wall_seconds: f64,
    pub simulator_seconds: f64,
    pub overhead_seconds: f64,
}

impl TimingRecord {
    /// Negative inputs become 0 and the simulator share is capped at the
    /// wall time.
    pub fn new(wall_seconds: f64, simulator_seconds: f64) -> Self {
        let wall = wall_seconds.max(0.0);
        let sim = simulator_seconds.clamp(0.0, wall);
        Self {
            wall_seconds: wall,
            simulator_seconds: sim,
            overhead_seconds: wall - sim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Outcome {
    Success {
        stdout: String,
    },
    Failure {
        stderr: String,
        exit_code: Option<i32>,
        reason: Option<String>,
        /// Set when a pipeline stage failed rather than the payload.
        stage: Option<Stage>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionResult {
    pub outcome: Outcome,
    pub timing: TimingRecord,
    pub job_name: Option<String>,
}

impl ExecutionResult {
    pub fn is_success(&self) -> bool {
        matches!(self.outcome, Outcome::Success { .. })
    }

    pub fn stdout(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Success { stdout } => Some(stdout),
            Outcome::Failure { .. } => None,
        }
    }

    pub fn stderr(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Failure { stderr, .. } => Some(stderr),
            Outcome::Success { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Failure { reason, .. } => reason.as_deref(),
            Outcome::Success { .. } => None,
        }
    }

    pub fn exit_code(&self) -> Option<i32> {
        match &self.outcome {
            Outcome::Success { .. } => Some(0),
            Outcome::Failure { exit_code, .. } => *exit_code,
        }
    }

    pub fn failed_stage(&self) -> Option<Stage> {
        match &self.outcome {
            Outcome::Failure { stage, .. } => *stage,
            Outcome::Success { .. } => None,
        }
    }

    /// A pipeline stage failed before the payload produced an exit code;
    /// timeouts are not included.
    pub fn is_infrastructure_failure(&self) -> bool {
        self.failed_stage().is_some() && self.reason() != Some(DEADLINE_EXCEEDED)
    }
}

/// Anything that turns a task into an execution result.
#[async_trait]
pub trait Executor: Send + Sync {
    async fn execute(&self, task: &CellTask) -> ExecutionResult;
}

#[derive(Debug, Clone)]
pub struct DispatchConfig {
    pub base_image: String,
    pub registry_prefix: String,
    pub dependencies: DependencyTable,
    pub poll_interval: Duration,
    /// Polls sleep `max(poll_interval, elapsed * poll_growth)`, capped at
    /// `max_poll_interval`. Zero growth polls at a fixed interval.
    pub poll_growth: f64,
    pub max_poll_interval: Duration,
    pub timeout: Duration,
    /// Seeds job-name generation; entropy from the OS when unset.
    pub name_seed: Option<u64>,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            base_image: DEFAULT_BASE_IMAGE.to_string(),
            registry_prefix: DEFAULT_REGISTRY_PREFIX.to_string(),
            dependencies: DependencyTable::default(),
            poll_interval: POLL_INTERVAL,
            poll_growth: 0.0,
            max_poll_interval: POLL_INTERVAL,
            timeout: DEFAULT_TIMEOUT,
            name_seed: None,
        }
    }
}

/// Runs tasks on a cluster. Cheap to share; concurrent `execute` calls are
/// independent apart from the image cache.
pub struct Dispatcher {
    cluster: Arc<dyn ClusterPort>,
    builder: Arc<dyn ImageBuilder>,
    cache: Arc<ImageCache>,
    config: DispatchConfig,
    clock: SharedClock,
    names: Mutex<ChaCha8Rng>,
}

impl Dispatcher {
    pub fn new(
        cluster: Arc<dyn ClusterPort>,
        builder: Arc<dyn ImageBuilder>,
        clock: SharedClock,
        config: DispatchConfig,
    ) -> Self {
        let rng = match config.name_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_entropy(),
        };
        Self {
            cluster,
            builder,
            cache: Arc::new(ImageCache::new()),
            config,
            clock,
            names: Mutex::new(rng),
        }
    }

    /// Shares an image cache with other dispatchers.
    pub fn with_cache(mut self, cache: Arc<ImageCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn config(&self) -> &DispatchConfig {
        &self.config
    }

    pub fn cache(&self) -> &Arc<ImageCache> {
        &self.cache
    }

    fn next_job_name(&self, hint: &str) -> String {
        let mut rng = self.names.lock().unwrap_or_else(|e| e.into_inner());
        generate_job_name(hint, &mut *rng)
    }

    pub async fn execute(&self, task: &CellTask) -> ExecutionResult {
        let start = self.clock.now();
        let mut job_name = None;
        let outcome = match self.submit_and_wait(task, &mut job_name).await {
            Ok(outcome) | Err(outcome) => outcome,
        };
        if let Some(name) = &job_name {
            self.cleanup(name).await;
        }
        let wall = self.clock.now() - start;
        let log = match &outcome {
            Outcome::Success { stdout } => stdout.as_str(),
            Outcome::Failure { stderr, .. } => stderr.as_str(),
        };
        let sim = q8s_simkit::parse_sim_seconds(log).unwrap_or(0.0);
        ExecutionResult {
            outcome,
            timing: TimingRecord::new(wall, sim),
            job_name,
        }
    }

    /// Deletes the Job and then the ConfigMap. Failures are logged only.
    async fn cleanup(&self, name: &str) {
        for kind in [ResourceKind::Job, ResourceKind::ConfigMap] {
            if let Err(e) = self.cluster.delete_resource(kind, name).await {
                tracing::warn!(%kind, %name, error = %e, "cleanup failed");
            }
        }
    }

    async fn submit_and_wait(
        &self,
        task: &CellTask,
        job_name: &mut Option<String>,
    ) -> Result<Outcome, Outcome> {
        let detection = detect_dependencies(task.source(), &self.config.dependencies);
        for w in &detection.warnings {
            tracing::debug!(warning = %w, "dependency scan");
        }
        let spec = render_image_spec(&detection.dependencies, &self.config.base_image);
        let tag = ensure_image(&spec, &self.cache, self.builder.as_ref(), &self.config.registry_prefix)
            .await
            .map_err(|e| stage_failure(Stage::Image, e))?;

        let name = self.next_job_name(task.name_hint());
        let (job, configmap) =
            make_manifests(task, &tag, &name).map_err(|e| stage_failure(Stage::Manifests, e))?;

        *job_name = Some(name.clone());
        self.cluster
            .create_resource(&Manifest::ConfigMap(configmap))
            .await
            .map_err(|e| stage_failure(Stage::CreateConfigMap, e))?;
        self.cluster
            .create_resource(&Manifest::Job(job))
            .await
            .map_err(|e| stage_failure(Stage::CreateJob, e))?;

        let status = self.poll(&name).await?;
        let logs = match self.cluster.get_pod_logs(&name).await {
            Ok(l) => l.text,
            Err(e) if status.phase == JobPhase::Succeeded => return Err(stage_failure(Stage::Logs, e)),
            Err(e) => {
                tracing::warn!(job = %name, error = %e, "no logs for failed job");
                String::new()
            }
        };
        if status.phase == JobPhase::Succeeded {
            return Ok(Outcome::Success { stdout: logs });
        }
        let exit_code = status.exit_code.unwrap_or(1);
        let mut stderr = logs;
        if stderr.is_empty() {
            stderr = format!(
                "job {name} failed with exit code {exit_code}{}\n",
                status.reason.as_deref().map(|r| format!(" ({r})")).unwrap_or_default()
            );
        }
        Ok(Outcome::Failure {
            stderr,
            exit_code: Some(exit_code),
            reason: status.reason,
            stage: None,
        })
    }

    /// Polls until terminal. Phases that would move backwards are ignored.
    async fn poll(&self, name: &str) -> Result<JobStatus, Outcome> {
        let started = self.clock.now();
        let deadline = started + self.config.timeout.as_secs_f64();
        let mut highest = JobPhase::Pending;
        loop {
            let status = self
                .cluster
                .get_job_status(name)
                .await
                .map_err(|e| stage_failure(Stage::Poll, e))?;
            if status.phase.is_terminal() {
                return Ok(status);
            }
            if status.phase.rank() < highest.rank() {
                tracing::warn!(job = %name, from = %highest, to = %status.phase, "phase moved backwards");
            }
            highest = highest.max(status.phase);
            if self.clock.now() >= deadline {
                return Err(Outcome::Failure {
                    stderr: format!(
                        "job {name} did not finish within {:?}; last phase {highest}\n",
                        self.config.timeout
                    ),
                    exit_code: None,
                    reason: Some(DEADLINE_EXCEEDED.to_string()),
                    stage: Some(Stage::Poll),
                });
            }
            self.clock.sleep(self.poll_sleep(self.clock.now() - started)).await;
        }
    }

    fn poll_sleep(&self, elapsed: f64) -> Duration {
        let c = &self.config;
        let grown = Duration::from_secs_f64((elapsed * c.poll_growth).max(0.0));
        grown.min(c.max_poll_interval).max(c.poll_interval)
    }
}

#[async_trait]
impl Executor for Dispatcher {
    async fn execute(&self, task: &CellTask) -> ExecutionResult {
        Dispatcher::execute(self, task).await
    }
}

fn stage_failure(stage: Stage, err: impl fmt::Display) -> Outcome {
    Outcome::Failure {
        stderr: format!("q8s: {stage} stage failed: {err}\n"),
        exit_code: None,
        reason: None,
        stage: Some(stage),
    }
}

/// Runs payloads in-process with the same runner the fake cluster uses.
pub struct LocalExecutor {
    runner: Arc<dyn PayloadRunner>,
    clock: SharedClock,
}

impl LocalExecutor {
    pub fn new(runner: Arc<dyn PayloadRunner>, clock: SharedClock) -> Self {
        Self { runner, clock }
    }
}

#[async_trait]
impl Executor for LocalExecutor {
    async fn execute(&self, task: &CellTask) -> ExecutionResult {
        execute_local(task, self.runner.clone(), &self.clock).await
    }
}

/// Runs `task` without a cluster. The task's target is not consulted.
///
/// Wall time always covers the reported simulator time: when the runner
/// returns sooner (virtual clock or modeled timing) the clock sleeps for the
/// remainder.
pub async fn execute_local(
    task: &CellTask,
    runner: Arc<dyn PayloadRunner>,
    clock: &SharedClock,
) -> ExecutionResult {
    let start = clock.now();
    let source = task.source().to_string();
    let out = match tokio::task::spawn_blocking(move || runner.run(&source, 1.0)).await {
        Ok(out) => out,
        Err(e) => {
            return ExecutionResult {
                outcome: stage_failure(Stage::Local, e),
                timing: TimingRecord::new(clock.now() - start, 0.0),
                job_name: None,
            }
        }
    };
    let sim = out.sim_seconds.unwrap_or(0.0);
    let elapsed = clock.now() - start;
    if sim > elapsed {
        // Rounded up so the clock never reads less than the simulator time.
        clock.sleep(Duration::from_nanos(((sim - elapsed) * 1e9).ceil() as u64)).await;
    }
    let outcome = if out.success() {
        Outcome::Success { stdout: out.stdout }
    } else {
        let stderr = if out.stderr.is_empty() {
            out.stdout
        } else {
            out.stderr
        };
        Outcome::Failure {
            stderr,
            exit_code: Some(out.exit_code),
            reason: out.reason,
            stage: None,
        }
    };
    ExecutionResult {
        outcome,
        timing: TimingRecord::new(clock.now() - start, sim),
        job_name: None,
    }
}
