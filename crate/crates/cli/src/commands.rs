use std::ffi::OsString;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use clap::Parser;
use q8s_core::bench::{
    emit_json, run_bench_with, speedup, write_csv, BenchPlan, BenchRow, ClockMode, ClusterTarget, Scenario,
};
use q8s_core::celldeps::{CellTask, CommandBuilder, ImageBuilder, NoopBuilder, Target};
use q8s_core::clock::WallClock;
use q8s_core::clusterapi::{load_kubeconfig, ClusterClient, ClusterConfig};
use q8s_core::dispatch::{DispatchConfig, Dispatcher, ExecutionResult, Executor, LocalExecutor};
use q8s_core::fakecluster::{FakeCluster, NodeSpec, ServeOptions};
use q8s_core::runner::{RunnerConfig, SimRunner};
use q8s_kernel::{install_kernelspec, serve_kernel, KernelConfig, KernelSpec};

use crate::scenario::{parse_qubit_range, parse_scenario, ScenarioKind};
use crate::settings::Settings;
use crate::{
    BenchArgs, ClockArg, Cli, CliError, ClusterFlags, Command, FakeClusterArgs, InstallArgs, KernelArgs, RunArgs,
    TimingArg, EXIT_JOB_FAILED, EXIT_OK, EXIT_USAGE,
};

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_tracing();
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("q8s: cannot start runtime: {e}");
            return EXIT_USAGE;
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Run(a) => run(a).await,
            Command::Bench(a) => bench(a).await,
            Command::Kernel(a) => kernel(a).await,
            Command::InstallKernelspec(a) => install(a),
            Command::FakeCluster(a) => fake_cluster(a).await,
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("q8s: {}", e.message);
            e.code
        }
    }
}

/// Logs go to stderr, filtered by `RUST_LOG` (default `warn`).
fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn settings(flags: &ClusterFlags) -> Result<Settings, CliError> {
    Settings::from_process(&flags.flag_values()).map_err(CliError::usage)
}

fn builder(s: &Settings) -> Arc<dyn ImageBuilder> {
    match (&s.build_command, &s.push_command) {
        (Some(build), push) => Arc::new(CommandBuilder::from_templates(build, push.as_deref().unwrap_or("true"))),
        (None, _) => {
            tracing::info!("no build command configured; dependency images must already exist");
            Arc::new(NoopBuilder)
        }
    }
}

fn dispatch_config(s: &Settings) -> DispatchConfig {
    DispatchConfig {
        base_image: s.base_image.clone(),
        registry_prefix: s.registry_prefix.clone(),
        timeout: s.timeout,
        ..DispatchConfig::default()
    }
}

/// Local when asked for, or for cpu payloads with no kubeconfig anywhere;
/// otherwise the cluster named by the kubeconfig chain.
fn executor(flags: &ClusterFlags, s: &Settings, target: Target) -> Result<Arc<dyn Executor>, CliError> {
    if flags.local || (target == Target::Cpu && s.kubeconfig.is_none()) {
        return Ok(Arc::new(LocalExecutor::new(
            Arc::new(SimRunner::new(RunnerConfig::default())),
            WallClock::shared(),
        )));
    }
    let cfg = s.cluster_config().map_err(|e| CliError::usage(e.to_string()))?;
    let client = ClusterClient::new(&cfg).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(Arc::new(Dispatcher::new(
        Arc::new(client),
        builder(s),
        WallClock::shared(),
        dispatch_config(s),
    )))
}

pub fn timing_line(r: &ExecutionResult) -> String {
    let t = r.timing;
    format!(
        "Q8S_TIMING wall={:.6} sim={:.6} overhead={:.6}",
        t.wall_seconds, t.simulator_seconds, t.overhead_seconds
    )
}

async fn run(a: RunArgs) -> Result<i32, CliError> {
    let source = std::fs::read_to_string(&a.payload)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", a.payload.display())))?;
    let s = settings(&a.cluster)?;
    let target = Target::from(a.target);
    let exec = executor(&a.cluster, &s, target)?;
    let hint = a
        .payload
        .file_stem()
        .map(|h| q8s_core::celldeps::sanitize_hint(&h.to_string_lossy()))
        .unwrap_or_default();
    let task = CellTask::new(source, target, hint).map_err(|e| CliError::usage(e.to_string()))?;
    let r = exec.execute(&task).await;
    let mut out = std::io::stdout().lock();
    if let Some(text) = r.stdout() {
        let _ = out.write_all(text.as_bytes());
    }
    if let Some(text) = r.stderr() {
        eprint!("{text}");
        if !text.ends_with('\n') {
            eprintln!();
        }
    }
    let _ = writeln!(out, "{}", timing_line(&r));
    let _ = out.flush();
    Ok(if r.is_success() {
        EXIT_OK
    } else if r.is_infrastructure_failure() {
        EXIT_USAGE
    } else {
        EXIT_JOB_FAILED
    })
}

fn cluster_target(path: Option<&Path>, s: &Settings) -> Result<ClusterTarget, CliError> {
    let config: ClusterConfig = match path {
        Some(p) => load_kubeconfig(p),
        None => s.cluster_config(),
    }
    .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(ClusterTarget {
        config,
        builder: builder(s),
        dispatch: dispatch_config(s),
    })
}

pub fn banner(plan: &BenchPlan) -> String {
    let labels: Vec<&str> = plan.scenarios.iter().map(|s| s.label.as_str()).collect();
    format!(
        "q8s bench: routine {}, qubits {}..{}, iterations {}, clock {}, scenarios {}",
        plan.routine,
        plan.qubit_start,
        plan.qubit_end,
        plan.iterations,
        match plan.clock {
            ClockMode::Virtual => "virtual",
            ClockMode::Wall => "wall",
        },
        labels.join(", ")
    )
}

fn progress(row: &BenchRow) {
    match &row.failure {
        None => eprintln!(
            "  {} n={}: sim {:.6}s overhead {:.6}s wall {:.6}s",
            row.scenario, row.n, row.mean_simulator_s, row.mean_overhead_s, row.mean_wall_s
        ),
        Some(reason) => eprintln!("  {} n={}: failed ({reason})", row.scenario, row.n),
    }
}

pub fn build_plan(a: &BenchArgs, s: &Settings) -> Result<BenchPlan, CliError> {
    let (start, end) = parse_qubit_range(&a.qubits).map_err(CliError::usage)?;
    let mut plan = BenchPlan::new(a.routine.into()).qubits(start, end).iterations(a.iterations);
    plan.seed = a.seed;
    plan.d = a.depth;
    plan.p = a.layers;
    plan.target = a.target.into();
    plan.parallel = a.parallel;
    plan.clock = match a.clock {
        ClockArg::Virtual => ClockMode::Virtual,
        ClockArg::Wall => ClockMode::Wall,
    };
    let timing = a.timing.unwrap_or(match a.clock {
        ClockArg::Virtual => TimingArg::Modeled,
        ClockArg::Wall => TimingArg::Measured,
    });
    plan.runner = match timing {
        TimingArg::Modeled => RunnerConfig::modeled(),
        TimingArg::Measured => RunnerConfig::default(),
    };
    if a.cluster.timeout.is_some() {
        plan.timeout = Some(s.timeout);
    }
    let specs = if a.scenarios.is_empty() {
        vec!["local".to_string(), "fake:workstation".to_string()]
    } else {
        a.scenarios.clone()
    };
    for text in &specs {
        let spec = parse_scenario(text).map_err(CliError::usage)?;
        plan.scenarios.push(match spec.kind {
            ScenarioKind::Local => Scenario::local(spec.label),
            ScenarioKind::Fake(node) => Scenario::fake(spec.label, node),
            ScenarioKind::Cluster(path) => Scenario::cluster(spec.label, cluster_target(path.as_deref(), s)?),
        });
    }
    plan.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(plan)
}

async fn bench(a: BenchArgs) -> Result<i32, CliError> {
    let s = settings(&a.cluster)?;
    let plan = build_plan(&a, &s)?;
    eprintln!("{}", banner(&plan));
    let report = run_bench_with(&plan, progress)
        .await
        .map_err(|e| CliError::usage(e.to_string()))?;
    let io_err = |e: q8s_core::bench::BenchError| CliError::usage(e.to_string());
    if a.out == "-" {
        write_csv(&report.rows, std::io::stdout().lock()).map_err(io_err)?;
    } else {
        q8s_core::bench::emit_csv(&report.rows, Path::new(&a.out)).map_err(io_err)?;
    }
    if let Some(path) = &a.json {
        emit_json(&report, path).map_err(io_err)?;
    }
    if let Some(baseline) = plan.scenarios.first() {
        for other in &plan.scenarios[1..] {
            for sp in speedup(&report.scenario_rows(&baseline.label), &report.scenario_rows(&other.label)) {
                eprintln!(
                    "  speedup {} vs {} n={}: wall {:.3} simulator {:.3}",
                    other.label, baseline.label, sp.n, sp.wall_speedup, sp.simulator_speedup
                );
            }
        }
    }
    for f in &report.failed_scenarios {
        eprintln!("q8s: scenario {} failed: {}", f.scenario, f.message);
    }
    Ok(if report.hard_failed() { EXIT_JOB_FAILED } else { EXIT_OK })
}

async fn kernel(a: KernelArgs) -> Result<i32, CliError> {
    let s = settings(&a.cluster)?;
    let target = Target::from(a.target);
    let config = KernelConfig {
        default_target: target,
        executor: executor(&a.cluster, &s, target)?,
    };
    serve_kernel(&a.connection_file, config)
        .await
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(EXIT_OK)
}

fn install(a: InstallArgs) -> Result<i32, CliError> {
    let dir = a
        .dir
        .or_else(q8s_kernel::default_kernels_dir)
        .ok_or_else(|| CliError::usage("cannot locate the Jupyter data directory; pass --dir"))?;
    let program = std::env::current_exe().map_err(|e| CliError::usage(format!("cannot locate q8s binary: {e}")))?;
    let mut extra = Vec::new();
    if let Some(t) = a.target {
        extra.extend(["--target".to_string(), Target::from(t).to_string()]);
    }
    if let Some(k) = a.kubeconfig {
        let k = std::path::absolute(&k).unwrap_or(k);
        extra.extend(["--kubeconfig".to_string(), k.display().to_string()]);
    }
    if a.local {
        extra.push("--local".to_string());
    }
    let path = install_kernelspec(&dir, &KernelSpec::for_program(&program, &extra))
        .map_err(|e| CliError::usage(format!("cannot install kernelspec in {}: {e}", dir.display())))?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

async fn fake_cluster(a: FakeClusterArgs) -> Result<i32, CliError> {
    let node: NodeSpec = a.profile.parse().map_err(|e| CliError::usage(format!("{e}")))?;
    let listen = a
        .listen
        .parse()
        .map_err(|e| CliError::usage(format!("invalid --listen {:?}: {e}", a.listen)))?;
    let runner = match a.timing {
        TimingArg::Modeled => RunnerConfig::modeled(),
        TimingArg::Measured => RunnerConfig::default(),
    };
    let opts = ServeOptions {
        listen,
        clock: WallClock::shared(),
        token: a.token,
    };
    let cluster = FakeCluster::serve(node, Arc::new(SimRunner::new(runner)), opts)
        .await
        .map_err(|e| CliError::usage(format!("cannot serve on {}: {e}", a.listen)))?;
    let path = a.kubeconfig_out.unwrap_or_else(|| {
        std::env::temp_dir().join(format!("q8s-fake-{}.kubeconfig", cluster.local_addr().port()))
    });
    std::fs::write(&path, cluster.kubeconfig_yaml())
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    println!(
        "q8s fake-cluster ready endpoint={} kubeconfig={} profile={}",
        cluster.endpoint().as_str().trim_end_matches('/'),
        path.display(),
        a.profile
    );
    let _ = std::io::stdout().flush();
    wait_for_signal().await;
    cluster.shutdown().await;
    Ok(EXIT_OK)
}

async fn wait_for_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}
