//! Benchmark sweeps: run a routine payload over a qubit range on several
//! executors, split each run into simulator and overhead time, aggregate per
//! (scenario, n) and compare scenarios against a baseline.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use q8s_simkit::{paper_gate_scaling, Directive, Routine, ScalingParams};
use serde::Serialize;

use crate::celldeps::{CellTask, ImageBuilder, NoopBuilder, Target};
use crate::clock::{SharedClock, VirtualClock, WallClock};
use crate::clusterapi::{ClusterClient, ClusterConfig};
use crate::dispatch::{
    DispatchConfig, Dispatcher, ExecutionResult, Executor, LocalExecutor, TimingRecord, DEFAULT_TIMEOUT,
};
use crate::fakecluster::{FakeCluster, NodeSpec, ServeOptions};
use crate::runner::{RunnerConfig, SimRunner};

pub const DEFAULT_QUBIT_START: usize = 3;
pub const DEFAULT_QUBIT_END: usize = 29;
pub const DEFAULT_ITERATIONS: usize = 10;

/// Virtual-clock deadline; the largest modeled runs take days.
pub const VIRTUAL_TIMEOUT: Duration = Duration::from_secs(60 * 24 * 3600);

pub const CSV_HEADER: [&str; 9] = [
    "scenario",
    "routine",
    "n",
    "mean_simulator_s",
    "mean_overhead_s",
    "mean_wall_s",
    "stddev_wall_s",
    "gate_count",
    "paper_scaling_value",
];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Per-scenario virtual clocks; runs finish instantly in real time.
    Virtual,
    Wall,
}

/// A real cluster reached through its API server. It always runs on the
/// wall clock.
#[derive(Clone)]
pub struct ClusterTarget {
    pub config: ClusterConfig,
    pub builder: Arc<dyn ImageBuilder>,
    pub dispatch: DispatchConfig,
}

impl fmt::Debug for ClusterTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClusterTarget")
            .field("server", &self.config.server_url.as_str())
            .field("dispatch", &self.dispatch)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum ExecutorKind {
    Local,
    Fake(NodeSpec),
    Cluster(ClusterTarget),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub executor: ExecutorKind,
}

impl Scenario {
    pub fn local(label: impl Into<String>) -> Self {
        Self { label: label.into(), executor: ExecutorKind::Local }
    }

    pub fn fake(label: impl Into<String>, node: NodeSpec) -> Self {
        Self { label: label.into(), executor: ExecutorKind::Fake(node) }
    }

    pub fn cluster(label: impl Into<String>, target: ClusterTarget) -> Self {
        Self { label: label.into(), executor: ExecutorKind::Cluster(target) }
    }
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub routine: Routine,
    pub qubit_start: usize,
    pub qubit_end: usize,
    pub iterations: usize,
    /// Quantum volume depth.
    pub d: usize,
    /// QAOA layers.
    pub p: usize,
    pub seed: u64,
    pub target: Target,
    pub scenarios: Vec<Scenario>,
    pub clock: ClockMode,
    /// Runner used by local and fake scenarios.
    pub runner: RunnerConfig,
    /// Runs scenarios concurrently. Only honoured on the virtual clock
    /// without real-cluster scenarios.
    pub parallel: bool,
    /// Per-execution deadline; defaults depend on the clock mode.
    pub timeout: Option<Duration>,
}

impl BenchPlan {
    /// Defaults 3..29 with 10 iterations on the virtual clock and modeled
    /// timing.
    pub fn new(routine: Routine) -> Self {
        Self {
            routine,
            qubit_start: DEFAULT_QUBIT_START,
            qubit_end: DEFAULT_QUBIT_END,
            iterations: DEFAULT_ITERATIONS,
            d: q8s_simkit::directive::DEFAULT_QV_DEPTH,
            p: q8s_simkit::directive::DEFAULT_QAOA_LAYERS,
            seed: 0,
            target: Target::Gpu,
            scenarios: Vec::new(),
            clock: ClockMode::Virtual,
            runner: RunnerConfig::modeled(),
            parallel: false,
            timeout: None,
        }
    }

    pub fn qubits(mut self, start: usize, end: usize) -> Self {
        self.qubit_start = start;
        self.qubit_end = end;
        self
    }

    pub fn iterations(mut self, k: usize) -> Self {
        self.iterations = k;
        self
    }

    pub fn scenario(mut self, s: Scenario) -> Self {
        self.scenarios.push(s);
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.qubit_start > self.qubit_end {
            return Err(BenchError::Plan(format!(
                "qubit range {}..{} is empty",
                self.qubit_start, self.qubit_end
            )));
        }
        if self.qubit_start == 0 {
            return Err(BenchError::Plan("qubit_start must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(BenchError::Plan("iterations must be at least 1".into()));
        }
        let mut labels: Vec<_> = self.scenarios.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(BenchError::Plan(format!("duplicate scenario label {:?}", w[0])));
        }
        Ok(())
    }

    pub fn directive(&self, n: usize) -> Directive {
        Directive {
            routine: self.routine,
            n,
            d: (self.routine == Routine::Qv).then_some(self.d),
            p: (self.routine == Routine::Qaoa).then_some(self.p),
            seed: (self.routine != Routine::Qft).then_some(self.seed),
        }
    }

    pub fn payload(&self, n: usize) -> String {
        format!("{}\n", self.directive(n))
    }

    fn timeout(&self) -> Duration {
        self.timeout.unwrap_or(match self.clock {
            ClockMode::Virtual => VIRTUAL_TIMEOUT,
            ClockMode::Wall => DEFAULT_TIMEOUT,
        })
    }

    fn dispatch_config(&self, base: DispatchConfig) -> DispatchConfig {
        let mut cfg = DispatchConfig {
            timeout: self.timeout(),
            name_seed: base.name_seed.or(Some(self.seed)),
            ..base
        };
        if self.clock == ClockMode::Virtual {
            // Keeps the request count bounded on multi-day modeled runs.
            cfg.poll_growth = 0.01;
            cfg.max_poll_interval = Duration::from_secs(60);
        }
        cfg
    }
}

/// Aggregate for one (scenario, n). Failed rows keep their samples so far
/// and the failure reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    #[serde(serialize_with = "routine_name")]
    pub routine: Routine,
    pub n: usize,
    pub mean_simulator_s: f64,
    pub mean_overhead_s: f64,
    pub mean_wall_s: f64,
    pub stddev_wall_s: f64,
    pub gate_count: usize,
    pub paper_scaling_value: f64,
    pub failure: Option<String>,
    pub samples: Vec<TimingRecord>,
}

impl BenchRow {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }

    fn aggregate(
        scenario: &str,
        plan: &BenchPlan,
        n: usize,
        samples: Vec<TimingRecord>,
        failure: Option<String>,
    ) -> Self {
        let directive = plan.directive(n);
        let gate_count = directive.build_circuit().map(|c| c.gate_count()).unwrap_or(0);
        let paper_scaling_value = paper_gate_scaling(
            plan.routine,
            ScalingParams {
                n: Some(n as u64),
                d: Some(plan.d as u64),
                p: Some(plan.p as u64),
            },
        )
        .unwrap_or(f64::NAN);
        let mean = |f: fn(&TimingRecord) -> f64| mean(samples.iter().map(f));
        let mean_simulator_s = mean(|t| t.simulator_seconds);
        let mean_overhead_s = mean(|t| t.overhead_seconds);
        let walls: Vec<f64> = samples.iter().map(|t| t.wall_seconds).collect();
        Self {
            scenario: scenario.to_string(),
            routine: plan.routine,
            n,
            mean_simulator_s,
            mean_overhead_s,
            mean_wall_s: mean_simulator_s + mean_overhead_s,
            stddev_wall_s: sample_stddev(&walls),
            gate_count,
            paper_scaling_value,
            failure,
            samples,
        }
    }
}

fn routine_name<S: serde::Serializer>(r: &Routine, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(r.as_str())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Bessel-corrected standard deviation; zero below two samples.
pub fn sample_stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioFailure {
    pub scenario: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchReport {
    /// Ordered by (scenario, routine, n).
    pub rows: Vec<BenchRow>,
    /// Scenarios that stopped on an infrastructure error.
    pub failed_scenarios: Vec<ScenarioFailure>,
}

impl BenchReport {
    pub fn hard_failed(&self) -> bool {
        !self.failed_scenarios.is_empty()
    }

    pub fn scenario_rows(&self, label: &str) -> Vec<&BenchRow> {
        self.rows.iter().filter(|r| r.scenario == label).collect()
    }

    pub fn ok_rows(&self) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(|r| r.is_ok())
    }
}

/// Keeps a fake cluster alive for as long as its executor is used.
struct Prepared {
    executor: Box<dyn Executor>,
    _cluster: Option<FakeCluster>,
}

async fn prepare(plan: &BenchPlan, scenario: &Scenario) -> Result<Prepared, String> {
    let clock: SharedClock = match (plan.clock, &scenario.executor) {
        (_, ExecutorKind::Cluster(_)) | (ClockMode::Wall, _) => WallClock::shared(),
        (ClockMode::Virtual, _) => VirtualClock::shared(),
    };
    let runner = Arc::new(SimRunner::new(plan.runner.clone()));
    match &scenario.executor {
        ExecutorKind::Local => Ok(Prepared {
            executor: Box::new(LocalExecutor::new(runner, clock)),
            _cluster: None,
        }),
        ExecutorKind::Fake(node) => {
            let cluster = FakeCluster::serve(node.clone(), runner, ServeOptions::with_clock(clock.clone()))
                .await
                .map_err(|e| format!("fake cluster failed to start: {e}"))?;
            let client = ClusterClient::new(&cluster.cluster_config()).map_err(|e| e.to_string())?;
            let config = plan.dispatch_config(DispatchConfig::default());
            let dispatcher = Dispatcher::new(Arc::new(client), Arc::new(NoopBuilder), clock, config);
            Ok(Prepared {
                executor: Box::new(dispatcher),
                _cluster: Some(cluster),
            })
        }
        ExecutorKind::Cluster(target) => {
            let client = ClusterClient::new(&target.config).map_err(|e| e.to_string())?;
            let mut config = plan.dispatch_config(target.dispatch.clone());
            if plan.timeout.is_none() {
                config.timeout = target.dispatch.timeout;
            }
            let dispatcher = Dispatcher::new(Arc::new(client), target.builder.clone(), clock, config);
            Ok(Prepared {
                executor: Box::new(dispatcher),
                _cluster: None,
            })
        }
    }
}

fn failure_reason(r: &ExecutionResult) -> String {
    match (r.reason(), r.exit_code()) {
        (Some(reason), _) => reason.to_string(),
        (None, Some(code)) => format!("exit code {code}"),
        (None, None) => r.stderr().unwrap_or("failed").trim().to_string(),
    }
}

/// Sweeps one scenario. Payload failures (OOM, capacity) mark their row and
/// the sweep moves on to the next n; infrastructure failures stop the
/// scenario.
async fn run_scenario(
    plan: &BenchPlan,
    scenario: &Scenario,
    on_row: &(dyn Fn(&BenchRow) + Send + Sync),
) -> (Vec<BenchRow>, Option<ScenarioFailure>) {
    let prepared = match prepare(plan, scenario).await {
        Ok(p) => p,
        Err(message) => {
            return (
                Vec::new(),
                Some(ScenarioFailure { scenario: scenario.label.clone(), message }),
            )
        }
    };
    let mut rows = Vec::new();
    for n in plan.qubit_start..=plan.qubit_end {
        let task = CellTask::new(plan.payload(n), plan.target, format!("bench-{}", plan.routine))
            .expect("bench payloads are non-empty with a valid hint");
        let mut samples = Vec::with_capacity(plan.iterations);
        let mut failure = None;
        let mut hard = None;
        for _ in 0..plan.iterations {
            let r = prepared.executor.execute(&task).await;
            if r.is_success() {
                samples.push(r.timing);
                continue;
            }
            let reason = failure_reason(&r);
            if r.is_infrastructure_failure() {
                hard = Some(r.stderr().unwrap_or(&reason).trim().to_string());
            }
            failure = Some(reason);
            break;
        }
        let row = BenchRow::aggregate(&scenario.label, plan, n, samples, failure);
        on_row(&row);
        rows.push(row);
        if let Some(message) = hard {
            return (rows, Some(ScenarioFailure { scenario: scenario.label.clone(), message }));
        }
    }
    (rows, None)
}

pub async fn run_bench(plan: &BenchPlan) -> Result<BenchReport, BenchError> {
    run_bench_with(plan, |_| {}).await
}

/// Like [`run_bench`], calling `on_row` as each row completes.
pub async fn run_bench_with(
    plan: &BenchPlan,
    on_row: impl Fn(&BenchRow) + Send + Sync + 'static,
) -> Result<BenchReport, BenchError> {
    plan.validate()?;
    let on_row: Arc<dyn Fn(&BenchRow) + Send + Sync> = Arc::new(on_row);
    let parallel = plan.parallel
        && plan.clock == ClockMode::Virtual
        && !plan.scenarios.iter().any(|s| matches!(s.executor, ExecutorKind::Cluster(_)));
    let mut results = Vec::new();
    if parallel {
        let plan = Arc::new(plan.clone());
        let handles: Vec<_> = (0..plan.scenarios.len())
            .map(|i| {
                let plan = plan.clone();
                let on_row = on_row.clone();
                tokio::spawn(async move { run_scenario(&plan, &plan.scenarios[i], on_row.as_ref()).await })
            })
            .collect();
        for h in handles {
            results.push(h.await.map_err(|e| BenchError::Plan(format!("scenario task panicked: {e}")))?);
        }
    } else {
        for s in &plan.scenarios {
            results.push(run_scenario(plan, s, on_row.as_ref()).await);
        }
    }
    let mut report = BenchReport::default();
    for (rows, failure) in results {
        report.rows.extend(rows);
        report.failed_scenarios.extend(failure);
    }
    sort_rows(&mut report.rows);
    Ok(report)
}

fn sort_rows(rows: &mut [BenchRow]) {
    rows.sort_by(|a, b| {
        (a.scenario.as_str(), a.routine, a.n).cmp(&(b.scenario.as_str(), b.routine, b.n))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupRow {
    #[serde(serialize_with = "routine_name")]
    pub routine: Routine,
    pub n: usize,
    pub wall_speedup: f64,
    pub simulator_speedup: f64,
}

/// Baseline over scenario, per matching (routine, n). Failed rows and keys
/// missing on either side are skipped. A zero denominator yields a
/// non-finite ratio.
pub fn speedup(baseline: &[&BenchRow], scenario: &[&BenchRow]) -> Vec<SpeedupRow> {
    let mut out: Vec<SpeedupRow> = baseline
        .iter()
        .filter(|b| b.is_ok())
        .filter_map(|b| {
            let s = scenario.iter().find(|s| s.is_ok() && s.routine == b.routine && s.n == b.n)?;
            Some(SpeedupRow {
                routine: b.routine,
                n: b.n,
                wall_speedup: b.mean_wall_s / s.mean_wall_s,
                simulator_speedup: b.mean_simulator_s / s.mean_simulator_s,
            })
        })
        .collect();
    out.sort_by_key(|r| (r.routine, r.n));
    out
}

/// Writes the CSV table. Failed rows are left out; they appear in JSON.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), BenchError> {
    let mut sorted: Vec<&BenchRow> = rows.iter().filter(|r| r.is_ok()).collect();
    sorted.sort_by(|a, b| (a.scenario.as_str(), a.routine, a.n).cmp(&(b.scenario.as_str(), b.routine, b.n)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in sorted {
        w.write_record([
            r.scenario.clone(),
            r.routine.to_string(),
            r.n.to_string(),
            format!("{:.6}", r.mean_simulator_s),
            format!("{:.6}", r.mean_overhead_s),
            format!("{:.6}", r.mean_wall_s),
            format!("{:.6}", r.stddev_wall_s),
            r.gate_count.to_string(),
            format!("{:.6}", r.paper_scaling_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[BenchRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn emit_csv(rows: &[BenchRow], path: &Path) -> Result<(), BenchError> {
    let file = std::fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}

/// Whole report, including failed rows and per-iteration samples.
pub fn write_json<W: Write>(report: &BenchReport, out: W) -> Result<(), BenchError> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}

pub fn emit_json(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_json(report, &mut file)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}
