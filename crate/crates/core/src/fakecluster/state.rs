//! Discrete-event model of a single node. Time only moves through
//! [`ClusterState::advance`], which replays every start and finish up to a
//! given instant in time order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;

use super::{run_payload, NodeSpec, PayloadResult};
use crate::manifests::{ConfigMapManifest, JobManifest, JobPhase};
use crate::runner::PayloadRunner;

pub(crate) type Key = (String, String);

/// A phase change observed on one job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseEvent {
    pub namespace: String,
    pub job: String,
    pub seq: u64,
    pub phase: JobPhase,
    pub at: f64,
}

#[derive(Debug)]
pub(crate) struct JobRecord {
    pub manifest: JobManifest,
    pub seq: u64,
    pub pod_name: String,
    pub phase: JobPhase,
    pub created_at: f64,
    pub eligible_at: f64,
    pub started_at: Option<f64>,
    pub container_started_at: Option<f64>,
    pub finish_at: Option<f64>,
    pub finished_at: Option<f64>,
    pub holds_gpu: bool,
    /// Known result, pending until `finish_at` is reached.
    pub result: Option<PayloadResult>,
    /// Set for wall-clock jobs whose payload is still computing.
    pub computing: bool,
}

impl JobRecord {
    pub fn log(&self) -> Option<&str> {
        match self.phase {
            JobPhase::Succeeded | JobPhase::Failed => self.result.as_ref().map(|r| r.log.as_str()),
            _ => None,
        }
    }
}

/// Work the caller must start outside the state lock (wall-clock mode).
#[derive(Debug)]
pub(crate) struct ComputeRequest {
    pub key: Key,
    pub seq: u64,
    pub job: JobManifest,
    pub configmap: Option<ConfigMapManifest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct Introspection {
    pub jobs: usize,
    pub configmaps: usize,
    pub pending: usize,
    pub running: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub queued_gpu_jobs: usize,
    pub gpus_in_use: u32,
    pub gpu_count: u32,
}

pub(crate) struct ClusterState {
    node: NodeSpec,
    runner: Arc<dyn PayloadRunner>,
    inline_compute: bool,
    pub jobs: BTreeMap<Key, JobRecord>,
    pub configmaps: BTreeMap<Key, (ConfigMapManifest, f64)>,
    /// Pending gpu jobs in submission order.
    queue: VecDeque<Key>,
    gpus_in_use: u32,
    pulled: BTreeSet<String>,
    cursor: f64,
    next_seq: u64,
    events: Vec<PhaseEvent>,
}

impl ClusterState {
    pub fn new(node: NodeSpec, runner: Arc<dyn PayloadRunner>, inline_compute: bool) -> Self {
        Self {
            node,
            runner,
            inline_compute,
            jobs: BTreeMap::new(),
            configmaps: BTreeMap::new(),
            queue: VecDeque::new(),
            gpus_in_use: 0,
            pulled: BTreeSet::new(),
            cursor: 0.0,
            next_seq: 0,
            events: Vec::new(),
        }
    }

    pub fn node(&self) -> &NodeSpec {
        &self.node
    }

    pub fn events(&self) -> &[PhaseEvent] {
        &self.events
    }

    pub fn introspect(&self) -> Introspection {
        let count = |p: JobPhase| self.jobs.values().filter(|j| j.phase == p).count();
        Introspection {
            jobs: self.jobs.len(),
            configmaps: self.configmaps.len(),
            pending: count(JobPhase::Pending),
            running: count(JobPhase::Running),
            succeeded: count(JobPhase::Succeeded),
            failed: count(JobPhase::Failed),
            queued_gpu_jobs: self.queue.len(),
            gpus_in_use: self.gpus_in_use,
            gpu_count: self.node.gpu_count,
        }
    }

    /// Conservation check: GPUs in use equal Running gpu jobs, never more
    /// than the node has, and the queue holds only Pending jobs.
    pub fn check_invariants(&self) -> Result<(), String> {
        let holders = self
            .jobs
            .values()
            .filter(|j| j.phase == JobPhase::Running && j.manifest.requests_gpu())
            .count() as u32;
        if holders != self.gpus_in_use {
            return Err(format!("gpus_in_use {} != running gpu jobs {holders}", self.gpus_in_use));
        }
        if self.gpus_in_use > self.node.gpu_count {
            return Err(format!("gpus_in_use {} > gpu_count {}", self.gpus_in_use, self.node.gpu_count));
        }
        for key in &self.queue {
            match self.jobs.get(key) {
                Some(j) if j.phase == JobPhase::Pending => {}
                _ => return Err(format!("queue entry {key:?} is not a pending job")),
            }
        }
        Ok(())
    }

    pub fn insert_configmap(&mut self, ns: &str, cm: ConfigMapManifest, now: f64) -> Result<(), String> {
        let key = (ns.to_string(), cm.name.clone());
        if self.configmaps.contains_key(&key) {
            return Err(format!("configmaps \"{}\" already exists", cm.name));
        }
        self.configmaps.insert(key, (cm, now));
        Ok(())
    }

    pub fn insert_job(&mut self, ns: &str, job: JobManifest, now: f64) -> Result<(), String> {
        let key = (ns.to_string(), job.name.clone());
        if self.jobs.contains_key(&key) {
            return Err(format!("jobs.batch \"{}\" already exists", job.name));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let eligible_at = now + self.node.admission_delay_seconds(self.configmap_source(ns, &job));
        if job.requests_gpu() {
            self.queue.push_back(key.clone());
        }
        self.events.push(PhaseEvent {
            namespace: ns.to_string(),
            job: job.name.clone(),
            seq,
            phase: JobPhase::Pending,
            at: now,
        });
        self.jobs.insert(
            key,
            JobRecord {
                pod_name: format!("{}-{seq:05x}", job.name),
                manifest: job,
                seq,
                phase: JobPhase::Pending,
                created_at: now,
                eligible_at,
                started_at: None,
                container_started_at: None,
                finish_at: None,
                finished_at: None,
                holds_gpu: false,
                result: None,
                computing: false,
            },
        );
        Ok(())
    }

    fn configmap_source(&self, ns: &str, job: &JobManifest) -> Option<&str> {
        self.configmaps
            .get(&(ns.to_string(), job.configmap_name.clone()))
            .and_then(|(cm, _)| cm.source())
    }

    pub fn delete_job(&mut self, ns: &str, name: &str) -> bool {
        let key = (ns.to_string(), name.to_string());
        let Some(job) = self.jobs.remove(&key) else {
            return false;
        };
        if job.holds_gpu {
            self.gpus_in_use -= 1;
        }
        self.queue.retain(|k| k != &key);
        true
    }

    pub fn delete_configmap(&mut self, ns: &str, name: &str) -> bool {
        self.configmaps.remove(&(ns.to_string(), name.to_string())).is_some()
    }

    /// Records a payload computed off-lock. Ignored when the job was deleted
    /// or recreated meanwhile.
    pub fn complete_compute(&mut self, key: &Key, seq: u64, result: PayloadResult, done_at: f64) {
        let Some(job) = self.jobs.get_mut(key) else { return };
        if job.seq != seq || !job.computing {
            return;
        }
        let container = job.container_started_at.unwrap_or(done_at);
        let modeled_end = container + result.sim_seconds.unwrap_or(0.0);
        job.finish_at = Some(done_at.max(modeled_end));
        job.result = Some(result);
        job.computing = false;
    }

    /// Replays all events up to `now`. Returns payloads to compute when the
    /// state was built without inline compute.
    pub fn advance(&mut self, now: f64) -> Vec<ComputeRequest> {
        let mut requests = Vec::new();
        loop {
            let finish = self
                .jobs
                .iter()
                .filter(|(_, j)| j.phase == JobPhase::Running)
                .filter_map(|(k, j)| j.finish_at.map(|t| (t, j.seq, k.clone())))
                .filter(|(t, _, _)| *t <= now)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let start = self.next_start().filter(|(t, _, _)| *t <= now);
            match (finish, start) {
                (Some(f), Some(s)) if f.0 <= s.0 => self.finish(f.2, f.0),
                (Some(f), None) => self.finish(f.2, f.0),
                (_, Some(s)) => {
                    if let Some(req) = self.start(s.2, s.0) {
                        requests.push(req);
                    }
                }
                (None, None) => break,
            }
        }
        self.cursor = self.cursor.max(now);
        requests
    }

    /// The earliest job able to start, with its start time.
    fn next_start(&self) -> Option<(f64, u64, Key)> {
        let gpu_head = if self.gpus_in_use < self.node.gpu_count {
            self.queue.front().and_then(|k| self.jobs.get(k).map(|j| (k, j)))
        } else {
            None
        };
        let others = self
            .jobs
            .iter()
            .filter(|(_, j)| j.phase == JobPhase::Pending && j.manifest.limit.is_none());
        gpu_head
            .into_iter()
            .chain(others)
            .map(|(k, j)| (j.eligible_at.max(self.cursor), j.seq, k.clone()))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }

    fn start(&mut self, key: Key, at: f64) -> Option<ComputeRequest> {
        self.cursor = self.cursor.max(at);
        let configmap = {
            let job = &self.jobs[&key];
            self.configmaps
                .get(&(key.0.clone(), job.manifest.configmap_name.clone()))
                .map(|(cm, _)| cm.clone())
        };
        let job = self.jobs.get_mut(&key).expect("scheduled job exists");
        if job.manifest.requests_gpu() {
            self.queue.retain(|k| k != &key);
            self.gpus_in_use += 1;
            job.holds_gpu = true;
        }
        let pull = if self.pulled.insert(job.manifest.image.clone()) {
            self.node.pull_delay_ms as f64 / 1000.0
        } else {
            0.0
        };
        job.phase = JobPhase::Running;
        job.started_at = Some(at);
        let container = at + pull;
        job.container_started_at = Some(container);
        self.events.push(PhaseEvent {
            namespace: key.0.clone(),
            job: key.1.clone(),
            seq: job.seq,
            phase: JobPhase::Running,
            at,
        });

        let early = super::pre_run_failure(&job.manifest, configmap.as_ref(), &self.node);
        if let Some(result) = early {
            job.finish_at = Some(container);
            job.result = Some(result);
            return None;
        }
        if self.inline_compute {
            let result = run_payload(&job.manifest, configmap.as_ref(), &self.node, self.runner.as_ref());
            job.finish_at = Some(container + result.sim_seconds.unwrap_or(0.0));
            job.result = Some(result);
            None
        } else {
            job.computing = true;
            Some(ComputeRequest {
                key: key.clone(),
                seq: job.seq,
                job: job.manifest.clone(),
                configmap,
            })
        }
    }

    fn finish(&mut self, key: Key, at: f64) {
        self.cursor = self.cursor.max(at);
        let job = self.jobs.get_mut(&key).expect("finishing job exists");
        let ok = job.result.as_ref().is_some_and(|r| r.exit_code == 0);
        job.phase = if ok { JobPhase::Succeeded } else { JobPhase::Failed };
        job.finished_at = Some(at);
        if job.holds_gpu {
            job.holds_gpu = false;
            self.gpus_in_use -= 1;
        }
        self.events.push(PhaseEvent {
            namespace: key.0.clone(),
            job: key.1.clone(),
            seq: job.seq,
            phase: job.phase,
            at,
        });
    }

    pub fn runner(&self) -> Arc<dyn PayloadRunner> {
        self.runner.clone()
    }
}
