//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL
//! line; the process exits nonzero when any criterion fails or overruns
//! its time budget.

#[path = "../../kernel/tests/common/mod.rs"]
mod frontend;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use q8s_core::bench::{run_bench, speedup, BenchPlan, BenchReport, Scenario};
use q8s_core::celldeps::{CellTask, DependencyTable, ImageBuilder, ImageCache, NoopBuilder, RecordingBuilder, Target};
use q8s_core::clock::{SharedClock, VirtualClock};
use q8s_core::clusterapi::{ClusterClient, ClusterPort};
use q8s_core::dispatch::{
    DispatchConfig, Dispatcher, ExecutionResult, Executor, Journal, JournalBuilder, PortCall, RecordingCluster,
    DEADLINE_EXCEEDED,
};
use q8s_core::fakecluster::{FakeCluster, NodeSpec, ServeOptions, OOM_EXIT_CODE, OOM_REASON};
use q8s_core::manifests::{make_manifests, ConfigMapManifest, JobManifest, ResourceKind, ResourceLimit};
use q8s_core::runner::{RunnerConfig, SimRunner};
use q8s_kernel::{start_kernel, ConnectionInfo, KernelConfig};
use q8s_simkit::gate::{det4, unitarity_error};
use q8s_simkit::{
    build_qaoa_maxcut_ring, build_qft, build_qv, memory_estimate, paper_gate_scaling, parse_sim_seconds,
    run_statevector, sample_su4, Circuit, Complex64, Gate, GateKind, Precision, Routine, ScalingParams, StateVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_JOB: &str = include_str!("../../core/testdata/manifests/golden-job.yaml");
const GOLDEN_CONFIGMAP: &str = include_str!("../../core/testdata/manifests/golden-configmap.yaml");

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { name: "gate-count reproduction", budget: secs(1), run: gate_counts },
        Criterion { name: "memory bound reproduction", budget: secs(1), run: memory_bound },
        Criterion { name: "statevector correctness", budget: secs(60), run: statevector_correctness },
        Criterion { name: "haar sampler", budget: secs(10), run: haar_sampler },
        Criterion { name: "pipeline conformance", budget: secs(60), run: pipeline_conformance },
        Criterion { name: "oom semantics", budget: secs(30), run: oom_semantics },
        Criterion { name: "cache rule", budget: secs(30), run: cache_rule },
        Criterion { name: "timing accounting", budget: secs(300), run: timing_accounting },
        Criterion { name: "manifest fidelity", budget: secs(5), run: manifest_fidelity },
        Criterion { name: "kernel protocol", budget: secs(30), run: kernel_protocol },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| Err(panic_text(p)));
        let took = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if took <= c.budget {
                Ok(())
            } else {
                Err(format!("took {:.2}s, budget {}s", took.as_secs_f64(), c.budget.as_secs()))
            }
        });
        match outcome {
            Ok(()) => println!("PASS {} ({:.2}s)", c.name, took.as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("FAIL {} ({:.2}s): {e}", c.name, took.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    match p.downcast::<String>() {
        Ok(s) => format!("panicked: {s}"),
        Err(p) => match p.downcast::<&str>() {
            Ok(s) => format!("panicked: {s}"),
            Err(_) => "panicked".to_string(),
        },
    }
}

fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime")
        .block_on(f)
}

fn sim_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gate_counts() -> Check {
    let qv = build_qv(29, 20, 0).map_err(sim_err)?.gate_count();
    ensure!(qv == 280, "build_qv(29, 20) has {qv} gates, expected 280");
    let params = ScalingParams { n: Some(29), d: None, p: Some(5) };
    let qaoa = paper_gate_scaling(Routine::Qaoa, params).map_err(sim_err)?;
    ensure!(qaoa == 4379.0, "qaoa scaling at n=29, p=5 is {qaoa}, expected 4379");
    let qft = build_qft(29).map_err(sim_err)?.gate_count();
    ensure!(
        qft == 449,
        "build_qft(29) has {qft} gates, expected 449: 29 H, 406 controlled phases and 14 swaps; \
         the quoted 450 is one more than this canonical count"
    );
    Ok(())
}

fn memory_bound() -> Check {
    let single = memory_estimate(31, Precision::Single).bytes;
    ensure!(single == 17_179_869_184, "31 qubits single precision needs {single} bytes");
    let double = memory_estimate(30, Precision::Double).bytes;
    ensure!(double == single, "30 qubits double precision needs {double} bytes, expected {single}");
    Ok(())
}

type Dense = Vec<Vec<Complex64>>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Textbook local matrix; the two-qubit local index is `b0 + 2*b1`.
fn local_matrix(g: &Gate) -> Dense {
    let (z, o) = (c(0.0, 0.0), c(1.0, 0.0));
    let t = g.params().first().copied().unwrap_or(0.0);
    match g.kind() {
        GateKind::H => {
            let h = c(FRAC_1_SQRT_2, 0.0);
            vec![vec![h, h], vec![h, -h]]
        }
        GateKind::Rx => {
            let (s, co) = ((t / 2.0).sin(), (t / 2.0).cos());
            vec![vec![c(co, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(co, 0.0)]]
        }
        GateKind::Rz => vec![vec![Complex64::from_polar(1.0, -t / 2.0), z], vec![z, Complex64::from_polar(1.0, t / 2.0)]],
        GateKind::Cx => vec![vec![o, z, z, z], vec![z, z, z, o], vec![z, z, o, z], vec![z, o, z, z]],
        GateKind::Cp => vec![
            vec![o, z, z, z],
            vec![z, o, z, z],
            vec![z, z, o, z],
            vec![z, z, z, Complex64::from_polar(1.0, t)],
        ],
        GateKind::Swap => vec![vec![o, z, z, z], vec![z, z, o, z], vec![z, o, z, z], vec![z, z, z, o]],
        GateKind::U4 => g.matrix().expect("u4 matrix").iter().map(|r| r.to_vec()).collect(),
    }
}

/// Applies each gate as a full `2^n x 2^n` matrix built entry by entry.
fn brute_force(circuit: &Circuit) -> Vec<Complex64> {
    let n = circuit.n_qubits();
    let dim = 1usize << n;
    let mut v = vec![c(0.0, 0.0); dim];
    v[0] = c(1.0, 0.0);
    for g in circuit.gates() {
        let u = local_matrix(g);
        let t = g.targets();
        let mask: usize = t.iter().map(|q| 1 << q).sum();
        let local = |x: usize| t.iter().enumerate().map(|(k, &q)| ((x >> q) & 1) << k).sum::<usize>();
        v = (0..dim)
            .map(|r| {
                (0..dim)
                    .filter(|col| r & !mask == col & !mask)
                    .map(|col| u[local(r)][local(col)] * v[col])
                    .sum()
            })
            .collect();
    }
    v
}

fn routine_circuit(routine: Routine, n: usize, seed: u64) -> Result<Circuit, String> {
    match routine {
        Routine::Qft => build_qft(n),
        Routine::Qv => build_qv(n, 20, seed),
        Routine::Qaoa => build_qaoa_maxcut_ring(n, 5, seed),
    }
    .map_err(sim_err)
}

fn statevector_correctness() -> Check {
    for n in 2..=6 {
        let circuit = build_qft(n).map_err(sim_err)?;
        let dim = 1usize << n;
        let mut worst: f64 = 0.0;
        for x in 0..dim {
            let mut s = StateVector::basis(n, x);
            s.apply_circuit(&circuit);
            for (y, amp) in s.amplitudes().iter().enumerate() {
                let expected = Complex64::from_polar(1.0 / (dim as f64).sqrt(), TAU * ((x * y) % dim) as f64 / dim as f64);
                worst = worst.max((amp - expected).norm());
            }
        }
        ensure!(worst <= 1e-10, "qft n={n} differs from the DFT matrix by {worst:e}");
    }
    for routine in Routine::ALL {
        let start = if routine == Routine::Qaoa { 3 } else { 2 };
        for n in start..=16 {
            let (state, _) = run_statevector(&routine_circuit(routine, n, n as u64)?, u128::MAX).map_err(sim_err)?;
            let norm = state.norm();
            ensure!((norm - 1.0).abs() <= 1e-10, "{routine} n={n}: norm {norm}");
        }
        for n in start..=5 {
            let circuit = routine_circuit(routine, n, 40 + n as u64)?;
            let (state, _) = run_statevector(&circuit, u128::MAX).map_err(sim_err)?;
            let expected = brute_force(&circuit);
            let err = state.amplitudes().iter().zip(&expected).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            ensure!(err <= 1e-10, "{routine} n={n}: simulator differs from dense product by {err:e}");
        }
    }
    Ok(())
}

fn haar_sampler() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 1000;
    let mut moments = [[0.0f64; 4]; 4];
    for k in 0..draws {
        let u = sample_su4(&mut rng);
        let unit = unitarity_error(&u);
        ensure!(unit <= 1e-10, "draw {k}: unitarity error {unit:e}");
        let det = (det4(&u) - c(1.0, 0.0)).norm();
        ensure!(det <= 1e-10, "draw {k}: |det - 1| = {det:e}");
        for (i, row) in u.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                moments[i][j] += v.norm_sqr() / draws as f64;
            }
        }
    }
    for (i, row) in moments.iter().enumerate() {
        for (j, m) in row.iter().enumerate() {
            ensure!((m - 0.25).abs() <= 0.03, "mean |U_{i}{j}|^2 = {m}");
        }
    }
    Ok(())
}

struct Harness {
    cluster: FakeCluster,
    clock: SharedClock,
    client: Arc<ClusterClient>,
}

async fn harness(node: NodeSpec) -> Harness {
    let clock: SharedClock = VirtualClock::shared();
    let runner = Arc::new(SimRunner::new(RunnerConfig::default()));
    let cluster = FakeCluster::serve(node, runner, ServeOptions::with_clock(clock.clone()))
        .await
        .expect("fake cluster binds");
    let client = Arc::new(ClusterClient::new(&cluster.cluster_config()).expect("client"));
    Harness { cluster, clock, client }
}

impl Harness {
    fn dispatcher(&self, port: Arc<dyn ClusterPort>, builder: Arc<dyn ImageBuilder>, config: DispatchConfig) -> Dispatcher {
        Dispatcher::new(port, builder, self.clock.clone(), DispatchConfig { name_seed: Some(11), ..config })
    }

    fn clean(&self) -> Check {
        let i = self.cluster.introspect();
        ensure!((i.jobs, i.configmaps) == (0, 0), "{} jobs and {} configmaps left behind", i.jobs, i.configmaps);
        Ok(())
    }
}

#[derive(Debug)]
enum Expect {
    Stdout(String),
    Stderr { code: i32, text: String },
    Oom,
    Timeout,
}

fn random_case(rng: &mut ChaCha8Rng, k: usize) -> (String, Target, Expect) {
    let target = if rng.gen_bool(0.5) { Target::Gpu } else { Target::Cpu };
    match rng.gen_range(0..6) {
        0 => (format!("print('case-{k}')"), target, Expect::Stdout(format!("case-{k}\n"))),
        1 => {
            let code = rng.gen_range(1..=5);
            let src = format!("import sys\nprint('err-{k}', file=sys.stderr)\nsys.exit({code})");
            (src, target, Expect::Stderr { code, text: format!("err-{k}\n") })
        }
        2 => (
            format!("raise RuntimeError('boom-{k}')"),
            target,
            Expect::Stderr { code: 1, text: format!("RuntimeError: boom-{k}") },
        ),
        3 => {
            let routine = Routine::ALL[rng.gen_range(0..3)];
            let n = rng.gen_range(3..=10);
            let src = format!("import qiskit\n#q8s: routine={routine} n={n} seed={k}\nprint('ok-{k}')");
            (src, target, Expect::Stdout(format!("ok-{k}\n")))
        }
        4 => {
            let routine = Routine::ALL[rng.gen_range(0..3)];
            (format!("#q8s: routine={routine} n={}", rng.gen_range(30..=31)), Target::Gpu, Expect::Oom)
        }
        _ => ("print('never')".to_string(), Target::Qpu, Expect::Timeout),
    }
}

fn check_outcome(r: &ExecutionResult, expect: &Expect) -> Check {
    match expect {
        Expect::Stdout(text) => {
            let out = r.stdout().ok_or_else(|| format!("expected success, got {:?}", r.outcome))?;
            ensure!(out.ends_with(text.as_str()), "stdout {out:?} does not end with {text:?}");
        }
        Expect::Stderr { code, text } => {
            ensure!(r.exit_code() == Some(*code), "exit {:?}, expected {code}", r.exit_code());
            let err = r.stderr().unwrap_or_default();
            ensure!(err.contains(text.as_str()), "stderr {err:?} lacks {text:?}");
        }
        Expect::Oom => {
            ensure!(r.reason() == Some(OOM_REASON), "reason {:?}", r.reason());
            ensure!(r.exit_code() == Some(OOM_EXIT_CODE), "exit {:?}", r.exit_code());
            ensure!(!r.stderr().unwrap_or_default().is_empty(), "oom has empty stderr");
        }
        Expect::Timeout => ensure!(r.reason() == Some(DEADLINE_EXCEEDED), "reason {:?}", r.reason()),
    }
    let t = r.timing;
    ensure!((t.wall_seconds - t.simulator_seconds - t.overhead_seconds).abs() <= 1e-9, "timing identity {t:?}");
    Ok(())
}

/// Build and push on a cache miss, then configmap, job, one or more status
/// polls, logs once the job is terminal, and both deletes.
fn check_stage_order(calls: &[PortCall], name: &str, timed_out: bool) -> Check {
    let mut rest = calls;
    if let [PortCall::Build { tag }, PortCall::Push { tag: pushed }, tail @ ..] = rest {
        ensure!(tag == pushed, "pushed {pushed}, built {tag}");
        rest = tail;
    }
    let cm = PortCall::Create { kind: ResourceKind::ConfigMap, name: name.into() };
    let job = PortCall::Create { kind: ResourceKind::Job, name: name.into() };
    let status = PortCall::GetStatus { name: name.into() };
    let logs = PortCall::GetLogs { name: name.into() };
    let del_job = PortCall::Delete { kind: ResourceKind::Job, name: name.into() };
    let del_cm = PortCall::Delete { kind: ResourceKind::ConfigMap, name: name.into() };
    let mut expected = vec![cm, job, status];
    if !timed_out {
        expected.push(logs);
    }
    expected.extend([del_job, del_cm]);
    ensure!(rest == expected.as_slice(), "stage sequence {calls:?}");
    Ok(())
}

fn pipeline_conformance() -> Check {
    block_on(async {
        let h = harness(NodeSpec::workstation().with_schedule_delay_ms(0)).await;
        let journal = Journal::new();
        let port: Arc<dyn ClusterPort> = Arc::new(RecordingCluster::new(h.client.clone(), journal.clone()));
        let builder: Arc<dyn ImageBuilder> = Arc::new(JournalBuilder::new(Arc::new(NoopBuilder), journal.clone()));
        let config = DispatchConfig { timeout: secs(10), ..DispatchConfig::default() };
        let d = h.dispatcher(port, builder, config);

        // The canonical sequence, then a cache hit that skips the image stage.
        let r = d.execute(&CellTask::cell("import numpy\nprint('hello')", Target::Gpu).unwrap()).await;
        ensure!(r.stdout() == Some("hello\n"), "hello run gave {:?}", r.outcome);
        let calls = journal.collapsed();
        ensure!(matches!(calls.first(), Some(PortCall::Build { .. })), "first run must build: {calls:?}");
        check_stage_order(&calls, r.job_name.as_deref().unwrap_or_default(), false)?;
        journal.clear();
        let r = d.execute(&CellTask::cell("import numpy\nprint('again')", Target::Gpu).unwrap()).await;
        let calls = journal.collapsed();
        ensure!(matches!(calls.first(), Some(PortCall::Create { .. })), "cache hit rebuilt: {calls:?}");
        check_stage_order(&calls, r.job_name.as_deref().unwrap_or_default(), false)?;
        h.clean()?;

        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut passed = 0;
        let mut failures = Vec::new();
        for k in 0..50 {
            let (src, target, expect) = random_case(&mut rng, k);
            journal.clear();
            let r = d.execute(&CellTask::new(src, target, format!("case-{k}")).unwrap()).await;
            let name = r.job_name.clone().unwrap_or_default();
            let timed_out = matches!(expect, Expect::Timeout);
            let verdict = check_outcome(&r, &expect)
                .and_then(|()| check_stage_order(&journal.collapsed(), &name, timed_out))
                .and_then(|()| h.clean());
            match verdict {
                Ok(()) => passed += 1,
                Err(e) => failures.push(format!("case {k} {expect:?}: {e}")),
            }
        }
        ensure!(passed == 50, "{passed}/50 randomized cases passed; {}", failures.join("; "));
        Ok(())
    })
}

fn oom_semantics() -> Check {
    block_on(async {
        let h = harness(NodeSpec::workstation()).await;
        let d = h.dispatcher(h.client.clone(), Arc::new(NoopBuilder), DispatchConfig::default());
        for routine in Routine::ALL {
            let r = d.execute(&CellTask::cell(format!("#q8s: routine={routine} n=30"), Target::Gpu).unwrap()).await;
            check_outcome(&r, &Expect::Oom).map_err(|e| format!("{routine} n=30: {e}"))?;
            let err = r.stderr().unwrap_or_default();
            ensure!(err.contains(OOM_REASON), "{routine} n=30 stderr {err:?} does not name {OOM_REASON}");
            h.clean()?;
            let r = d.execute(&CellTask::cell(format!("#q8s: routine={routine} n=20"), Target::Gpu).unwrap()).await;
            ensure!(r.is_success(), "{routine} n=20 failed: {:?}", r.outcome);
            ensure!(parse_sim_seconds(r.stdout().unwrap_or_default()).is_some(), "{routine} n=20 has no sim line");
        }
        h.clean()
    })
}

fn cache_rule() -> Check {
    block_on(async {
        let h = harness(NodeSpec::workstation().with_schedule_delay_ms(0)).await;
        let builder = Arc::new(RecordingBuilder::new());
        let cache = Arc::new(ImageCache::new());
        let d = h
            .dispatcher(h.client.clone(), builder.clone(), DispatchConfig::default())
            .with_cache(cache.clone());
        for text in ["one", "two"] {
            let r = d.execute(&CellTask::cell(format!("import qiskit\nprint('{text}')"), Target::Gpu).unwrap()).await;
            ensure!(r.is_success(), "run {text}: {:?}", r.outcome);
        }
        ensure!(builder.build_count() == 1, "identical dependencies built {} times", builder.build_count());

        let mut table = DependencyTable::default();
        table.mapping.insert("qiskit".into(), "qiskit==1.0.1".into());
        let config = DispatchConfig { dependencies: table, ..DispatchConfig::default() };
        let bumped = h.dispatcher(h.client.clone(), builder.clone(), config).with_cache(cache);
        let r = bumped.execute(&CellTask::cell("import qiskit\nprint('three')", Target::Gpu).unwrap()).await;
        ensure!(r.is_success(), "bumped run: {:?}", r.outcome);
        ensure!(builder.build_count() == 2, "after a version change the builder ran {} times", builder.build_count());
        h.clean()
    })
}

fn identity(report: &BenchReport) -> Check {
    for r in report.ok_rows() {
        let err = (r.mean_wall_s - (r.mean_simulator_s + r.mean_overhead_s)).abs();
        ensure!(err <= 1e-9, "{} {} n={}: identity off by {err:e}", r.scenario, r.routine.as_str(), r.n);
    }
    Ok(())
}

fn timing_accounting() -> Check {
    block_on(async {
        for routine in Routine::ALL {
            let plan = BenchPlan::new(routine)
                .qubits(3, 12)
                .iterations(3)
                .scenario(Scenario::local("local"))
                .scenario(Scenario::fake("workstation", NodeSpec::workstation()))
                .scenario(Scenario::fake("cloud-a100", NodeSpec::cloud_a100()));
            let report = run_bench(&plan).await.map_err(sim_err)?;
            ensure!(report.ok_rows().count() == 30, "{routine}: {} ok rows", report.ok_rows().count());
            identity(&report)?;
        }

        let pair = |node: NodeSpec, start, end| {
            BenchPlan::new(Routine::Qft)
                .qubits(start, end)
                .iterations(2)
                .scenario(Scenario::local("local"))
                .scenario(Scenario::fake("fake", node))
        };
        let fast = NodeSpec::workstation().with_schedule_delay_ms(0).with_speed_factor(5.0);
        let report = run_bench(&pair(fast, 16, 16)).await.map_err(sim_err)?;
        identity(&report)?;
        let s = speedup(&report.scenario_rows("local"), &report.scenario_rows("fake"));
        let sim = s.first().map(|x| x.simulator_speedup).ok_or("no speedup row at n=16")?;
        ensure!((sim - 5.0).abs() <= 1.0, "simulator speedup {sim} at speed factor 5");

        let delayed = NodeSpec::workstation().with_schedule_delay_ms(2000).with_speed_factor(5.0);
        let mut plan = pair(delayed, 6, 16);
        plan.parallel = true;
        let report = run_bench(&plan).await.map_err(sim_err)?;
        identity(&report)?;
        let s = speedup(&report.scenario_rows("local"), &report.scenario_rows("fake"));
        let wall = |n: usize| s.iter().find(|x| x.n == n).map(|x| x.wall_speedup);
        let (w6, w16) = (wall(6).ok_or("no n=6 row")?, wall(16).ok_or("no n=16 row")?);
        ensure!(w6 < 1.0, "wall speedup {w6} at n=6 with a 2 s delay");
        ensure!(w16 > 1.0, "wall speedup {w16} at n=16 with a 2 s delay");
        Ok(())
    })
}

fn manifest_fidelity() -> Check {
    let job = JobManifest {
        name: "quantum-job".into(),
        pod_name: "quantum-pod".into(),
        container_name: "quantum-task".into(),
        image: "registry.com/user/job-dependencies:v1".into(),
        command: vec!["python".into(), "/app/main.py".into()],
        limit: ResourceLimit::for_target(Target::Gpu),
        volume_name: "source-code-volume".into(),
        configmap_name: "task-files".into(),
        mount_path: "/app".into(),
        restart_policy: "Never".into(),
    };
    ensure!(job.to_yaml() == GOLDEN_JOB, "job yaml differs from golden:\n{}", job.to_yaml());
    let cm = ConfigMapManifest {
        name: "task-files".into(),
        data: BTreeMap::from([("main.py".into(), "code".into())]),
    };
    ensure!(cm.to_yaml() == GOLDEN_CONFIGMAP, "configmap yaml differs from golden:\n{}", cm.to_yaml());

    let task = CellTask::new("#q8s: routine=qft n=4", Target::Gpu, "swap").unwrap();
    let image = "registry.com/user/job-dependencies:v1";
    let (gpu, _) = make_manifests(&task, image, "q8s-swap-1").map_err(sim_err)?;
    let (qpu, _) = make_manifests(&task.with_target(Target::Qpu), image, "q8s-swap-1").map_err(sim_err)?;
    let (g, q) = (gpu.to_yaml(), qpu.to_yaml());
    let (gl, ql): (Vec<&str>, Vec<&str>) = (g.lines().collect(), q.lines().collect());
    ensure!(gl.len() == ql.len(), "gpu has {} lines, qpu {}", gl.len(), ql.len());
    let diffs: Vec<(&&str, &&str)> = gl.iter().zip(&ql).filter(|(a, b)| a != b).collect();
    ensure!(diffs.len() == 1, "gpu and qpu differ in {} lines: {diffs:?}", diffs.len());
    let (a, b) = (diffs[0].0.trim(), diffs[0].1.trim());
    ensure!(a.starts_with("nvidia.com/gpu:") && b.starts_with("vendor.example.com/qpu:"), "differing line {a:?} / {b:?}");
    Ok(())
}

fn kernel_protocol() -> Check {
    block_on(async {
        let h = harness(NodeSpec::workstation()).await;
        let d = h.dispatcher(h.client.clone(), Arc::new(NoopBuilder), DispatchConfig::default());
        let config = KernelConfig { default_target: Target::Cpu, executor: Arc::new(d) as Arc<dyn Executor> };
        let kernel = start_kernel(ConnectionInfo::ephemeral(), config).await.map_err(sim_err)?;
        let mut fe = frontend::Frontend::connect(kernel.connection_info()).await;

        ensure!(fe.ping(b"beat").await == b"beat", "heartbeat did not echo");
        let id = fe.send_shell("kernel_info_request", serde_json::json!({})).await;
        let info = fe.recv_shell().await;
        ensure!(info.msg_type() == "kernel_info_reply" && info.signature_ok, "kernel_info reply {info:?}");
        let io = fe.iopub_until_idle(&id, frontend::WAIT).await;
        bracketed(&io, &id)?;

        let (reply, io) = fe.execute("%%q8s target=gpu\n#q8s: routine=qft n=8\nprint('done')").await;
        ensure!(reply.content["status"] == "ok", "execute reply {:?}", reply.content);
        ensure!(reply.signature_ok, "execute reply has a bad signature");
        let unsigned = io.iter().filter(|m| !m.signature_ok).count();
        ensure!(unsigned == 0, "{unsigned} iopub messages failed HMAC verification");
        bracketed(&io, reply.parent_id().unwrap_or_default())?;
        let out = frontend::stream_text(&io, "stdout");
        ensure!(out.contains("Q8S_SIM_SECONDS=") && out.ends_with("done\n"), "stdout {out:?}");
        ensure!(reply.metadata["q8s"]["target"] == "gpu", "metadata {:?}", reply.metadata);
        h.clean()
    })
}

/// Exactly one busy then one idle for `parent`, with busy first overall.
fn bracketed(io: &[frontend::Received], parent: &str) -> Check {
    let states: Vec<&str> = io
        .iter()
        .filter(|m| m.msg_type() == "status" && m.parent_id() == Some(parent))
        .map(|m| m.content["execution_state"].as_str().unwrap_or_default())
        .collect();
    ensure!(states == ["busy", "idle"], "status sequence {states:?}");
    ensure!(io.first().map(|m| m.content["execution_state"] == "busy") == Some(true), "first iopub is not busy");
    ensure!(io.last().map(|m| m.content["execution_state"] == "idle") == Some(true), "last iopub is not idle");
    Ok(())
}
