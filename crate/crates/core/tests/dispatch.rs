mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{recording_builder, virtual_harness, wall_harness};
use q8s_core::celldeps::{CellTask, ImageBuilder, NoopBuilder, Target};
use q8s_core::clock::{SharedClock, VirtualClock, WallClock};
use q8s_core::clusterapi::ClusterPort;
use q8s_core::dispatch::{
    execute_local, DispatchConfig, Journal, JournalBuilder, PortCall, RecordingCluster, Stage,
    DEADLINE_EXCEEDED,
};
use q8s_core::fakecluster::NodeSpec;
use q8s_core::manifests::ResourceKind;
use q8s_core::runner::{RunnerConfig, SimRunner, CAPACITY_REASON};

fn task(src: &str, target: Target) -> CellTask {
    CellTask::cell(src, target).unwrap()
}

fn fast_node() -> NodeSpec {
    NodeSpec::workstation().with_schedule_delay_ms(0)
}

#[tokio::test]
async fn stage_order_and_image_cache() {
    let h = virtual_harness(NodeSpec::workstation(), RunnerConfig::default()).await;
    let journal = Journal::new();
    let port: Arc<dyn ClusterPort> = Arc::new(RecordingCluster::new(h.client.clone(), journal.clone()));
    let builder: Arc<dyn ImageBuilder> = Arc::new(JournalBuilder::new(Arc::new(NoopBuilder), journal.clone()));
    let d = h.dispatcher_with(port, builder, DispatchConfig::default());

    let r = d.execute(&task("import numpy\nprint('one')", Target::Gpu)).await;
    assert!(r.is_success(), "{r:?}");
    let name = r.job_name.clone().unwrap();
    let calls = journal.collapsed();
    let tag = match &calls[0] {
        PortCall::Build { tag } => tag.clone(),
        other => panic!("first call {other:?}"),
    };
    assert_eq!(
        calls,
        vec![
            PortCall::Build { tag: tag.clone() },
            PortCall::Push { tag },
            PortCall::Create { kind: ResourceKind::ConfigMap, name: name.clone() },
            PortCall::Create { kind: ResourceKind::Job, name: name.clone() },
            PortCall::GetStatus { name: name.clone() },
            PortCall::GetLogs { name: name.clone() },
            PortCall::Delete { kind: ResourceKind::Job, name: name.clone() },
            PortCall::Delete { kind: ResourceKind::ConfigMap, name },
        ]
    );

    journal.clear();
    let r = d.execute(&task("import numpy\nprint('two')", Target::Gpu)).await;
    assert!(r.is_success());
    let calls = journal.calls();
    assert!(
        calls.iter().all(|c| !matches!(c, PortCall::Build { .. } | PortCall::Push { .. })),
        "cache hit must not rebuild: {calls:?}"
    );
    let i = h.cluster.introspect();
    assert_eq!((i.jobs, i.configmaps), (0, 0));
}

#[tokio::test]
async fn hello_world_round_trip() {
    let h = virtual_harness(NodeSpec::workstation(), RunnerConfig::default()).await;
    let d = h.dispatcher(recording_builder());
    let r = d.execute(&task("print('hello')", Target::Gpu)).await;
    assert_eq!(r.stdout(), Some("hello\n"));
    assert_eq!(r.timing.simulator_seconds, 0.0);
    assert!(r.timing.wall_seconds >= 1.0, "schedule delay is part of wall time");
    assert_eq!(r.timing.overhead_seconds, r.timing.wall_seconds);
}

#[tokio::test]
async fn reported_simulator_time_matches_log() {
    let h = virtual_harness(NodeSpec::workstation(), RunnerConfig::modeled()).await;
    let d = h.dispatcher(recording_builder());
    let r = d.execute(&task("#q8s: routine=qft n=10", Target::Gpu)).await;
    assert!(r.is_success(), "{r:?}");
    let from_log = q8s_simkit::parse_sim_seconds(r.stdout().unwrap()).unwrap();
    assert_eq!(r.timing.simulator_seconds, from_log);
    assert!(r.timing.simulator_seconds > 0.0);
    assert!(r.timing.wall_seconds >= r.timing.simulator_seconds);
    let t = r.timing;
    assert!((t.wall_seconds - t.simulator_seconds - t.overhead_seconds).abs() < 1e-9);
}

#[tokio::test]
async fn oom_failure_leaves_no_resources() {
    let h = virtual_harness(NodeSpec::workstation(), RunnerConfig::default()).await;
    let d = h.dispatcher(recording_builder());
    let r = d.execute(&task("#q8s: routine=qaoa n=30", Target::Gpu)).await;
    assert!(!r.is_success());
    assert_eq!(r.reason(), Some("OOMKilled"));
    assert_eq!(r.exit_code(), Some(137));
    assert!(!r.is_infrastructure_failure());
    assert!(r.stderr().unwrap().contains("137"), "{:?}", r.stderr());
    let i = h.cluster.introspect();
    assert_eq!((i.jobs, i.configmaps), (0, 0));
}

#[tokio::test]
async fn unschedulable_job_times_out_and_is_cleaned_up() {
    let h = virtual_harness(NodeSpec::workstation(), RunnerConfig::default()).await;
    let config = DispatchConfig {
        timeout: Duration::from_secs(20),
        ..DispatchConfig::default()
    };
    let d = h.dispatcher_with(h.client.clone(), recording_builder(), config);
    let r = d.execute(&task("print('never')", Target::Qpu)).await;
    assert_eq!(r.reason(), Some(DEADLINE_EXCEEDED));
    assert_eq!(r.failed_stage(), Some(Stage::Poll));
    assert!(r.timing.wall_seconds >= 20.0);
    let i = h.cluster.introspect();
    assert_eq!((i.jobs, i.configmaps), (0, 0));
}

#[tokio::test]
async fn nonzero_exit_surfaces_stderr() {
    let h = virtual_harness(fast_node(), RunnerConfig::default()).await;
    let d = h.dispatcher(recording_builder());
    let r = d.execute(&task("import sys\nprint('bye', file=sys.stderr)\nsys.exit(3)", Target::Cpu)).await;
    assert_eq!(r.exit_code(), Some(3));
    assert_eq!(r.stderr(), Some("bye\n"));
    assert_eq!(r.failed_stage(), None);
}

#[tokio::test]
async fn image_failure_creates_nothing() {
    let h = virtual_harness(fast_node(), RunnerConfig::default()).await;
    let builder = recording_builder();
    builder.fail_builds_with(Some("no space left on device"));
    let journal = Journal::new();
    let port: Arc<dyn ClusterPort> = Arc::new(RecordingCluster::new(h.client.clone(), journal.clone()));
    let d = h.dispatcher_with(port, builder, DispatchConfig::default());
    let r = d.execute(&task("print(1)", Target::Gpu)).await;
    assert_eq!(r.failed_stage(), Some(Stage::Image));
    assert!(r.is_infrastructure_failure());
    assert!(r.stderr().unwrap().contains("no space left on device"));
    assert!(journal.calls().is_empty(), "{:?}", journal.calls());
    assert_eq!(r.job_name, None);
}

#[tokio::test]
async fn concurrent_dispatches_do_not_cross_talk() {
    let h = virtual_harness(fast_node(), RunnerConfig::default()).await;
    let d = Arc::new(h.dispatcher(recording_builder()));
    let mut handles = Vec::new();
    for i in 0..8 {
        let d = d.clone();
        let target = if i % 2 == 0 { Target::Gpu } else { Target::Cpu };
        handles.push(tokio::spawn(async move { (i, d.execute(&task(&format!("print('cell {i}')"), target)).await) }));
    }
    let mut names = std::collections::BTreeSet::new();
    for handle in handles {
        let (i, r) = handle.await.unwrap();
        assert_eq!(r.stdout(), Some(format!("cell {i}\n").as_str()), "{r:?}");
        assert!(names.insert(r.job_name.unwrap()));
    }
    let i = h.cluster.introspect();
    assert_eq!((i.jobs, i.configmaps), (0, 0));
}

#[tokio::test]
async fn local_capacity_error_for_large_circuits() {
    let clock: SharedClock = VirtualClock::shared();
    let runner = Arc::new(SimRunner::new(RunnerConfig::default()));
    let r = execute_local(&task("#q8s: routine=qv n=31", Target::Gpu), runner, &clock).await;
    assert_eq!(r.reason(), Some(CAPACITY_REASON));
    assert!(!r.is_infrastructure_failure());
    assert!(r.stderr().unwrap().contains("31"));
}

#[tokio::test]
async fn local_wall_time_covers_modeled_simulator_time() {
    let clock: SharedClock = VirtualClock::shared();
    let runner = Arc::new(SimRunner::new(RunnerConfig::modeled()));
    let r = execute_local(&task("#q8s: routine=qft n=14", Target::Cpu), runner, &clock).await;
    assert!(r.is_success());
    assert!(r.timing.wall_seconds >= r.timing.simulator_seconds);
    assert!(r.timing.simulator_seconds > 0.0);
}

/// Same circuit timed on the wall clock both ways: simulator times agree
/// while the cluster adds scheduling and polling overhead.
#[tokio::test(flavor = "multi_thread")]
async fn local_and_cluster_measured_runs_agree_on_simulator_time() {
    let node = NodeSpec::workstation().with_schedule_delay_ms(300);
    let h = wall_harness(node, RunnerConfig::default()).await;
    let d = h.dispatcher(recording_builder());
    let src = "#q8s: routine=qft n=20";
    let local_runner = Arc::new(SimRunner::new(RunnerConfig::default()));
    let clock = WallClock::shared();
    let local = execute_local(&task(src, Target::Cpu), local_runner, &clock).await;
    let remote = d.execute(&task(src, Target::Gpu)).await;
    assert!(local.is_success() && remote.is_success(), "{local:?} {remote:?}");
    let (a, b) = (local.timing.simulator_seconds, remote.timing.simulator_seconds);
    assert!((a - b).abs() <= 0.5 * a.max(b), "local {a} cluster {b}");
    assert!(remote.timing.overhead_seconds > local.timing.overhead_seconds);
    assert!(remote.timing.overhead_seconds >= 0.3);
    h.cluster.shutdown().await;
}
