#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use q8s_core::celldeps::{ImageBuilder, RecordingBuilder};
use q8s_core::clock::{SharedClock, VirtualClock, WallClock};
use q8s_core::clusterapi::{ClusterClient, ClusterPort};
use q8s_core::dispatch::{DispatchConfig, Dispatcher};
use q8s_core::fakecluster::{FakeCluster, NodeSpec, ServeOptions};
use q8s_core::runner::{RunnerConfig, SimRunner};

pub struct Harness {
    pub cluster: FakeCluster,
    pub clock: SharedClock,
    pub client: Arc<ClusterClient>,
}

pub async fn virtual_harness(node: NodeSpec, runner: RunnerConfig) -> Harness {
    let clock: SharedClock = VirtualClock::shared();
    harness(node, runner, clock, None).await
}

pub async fn wall_harness(node: NodeSpec, runner: RunnerConfig) -> Harness {
    harness(node, runner, WallClock::shared(), None).await
}

pub async fn harness(
    node: NodeSpec,
    runner: RunnerConfig,
    clock: SharedClock,
    token: Option<&str>,
) -> Harness {
    let opts = ServeOptions {
        clock: clock.clone(),
        token: token.map(str::to_string),
        ..ServeOptions::default()
    };
    let cluster = FakeCluster::serve(node, Arc::new(SimRunner::new(runner)), opts)
        .await
        .expect("fake cluster binds");
    let client = Arc::new(ClusterClient::new(&cluster.cluster_config()).expect("client"));
    Harness { cluster, clock, client }
}

impl Harness {
    pub fn dispatcher(&self, builder: Arc<dyn ImageBuilder>) -> Dispatcher {
        self.dispatcher_with(self.client.clone(), builder, DispatchConfig::default())
    }

    pub fn dispatcher_with(
        &self,
        port: Arc<dyn ClusterPort>,
        builder: Arc<dyn ImageBuilder>,
        mut config: DispatchConfig,
    ) -> Dispatcher {
        config.name_seed.get_or_insert(7);
        Dispatcher::new(port, builder, self.clock.clone(), config)
    }

    pub async fn sleep(&self, secs: f64) {
        self.clock.sleep(Duration::from_secs_f64(secs)).await;
    }
}

pub fn recording_builder() -> Arc<RecordingBuilder> {
    Arc::new(RecordingBuilder::new())
}
