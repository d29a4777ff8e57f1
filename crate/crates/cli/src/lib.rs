//! The `q8s` command: run payloads, sweep benchmarks, serve the notebook
//! kernel and a local fake cluster.
//!
//! Exit codes: 0 on success, 1 when the job (or a benchmark scenario)
//! failed, 2 for usage, configuration and transport errors.

mod commands;
pub mod scenario;
pub mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use q8s_core::celldeps::Target;

pub use commands::run_cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_JOB_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failure with its exit code; the message goes to stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

fn version() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (kernel protocol 5.3)")
}

#[derive(Debug, Parser)]
#[command(name = "q8s", version = version(), about = "Run notebook cell payloads as cluster jobs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute one payload file and print its output and timing.
    Run(RunArgs),
    /// Sweep a benchmark routine over a qubit range.
    Bench(BenchArgs),
    /// Serve the notebook kernel on a connection file.
    Kernel(KernelArgs),
    /// Install the "Python Q8s kernel" kernelspec.
    InstallKernelspec(InstallArgs),
    /// Serve an in-process fake cluster API.
    FakeCluster(FakeClusterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Cpu,
    Gpu,
    Qpu,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Cpu => Target::Cpu,
            TargetArg::Gpu => Target::Gpu,
            TargetArg::Qpu => Target::Qpu,
        }
    }
}

/// Cluster and image settings shared by the executing subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct ClusterFlags {
    /// Kubeconfig file; defaults to $KUBECONFIG.
    #[arg(long)]
    pub kubeconfig: Option<PathBuf>,
    /// Configuration file; defaults to $Q8S_CONFIG, then ~/.config/q8s/config.toml.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Registry prefix for dependency images; defaults to $Q8S_REGISTRY_PREFIX.
    #[arg(long)]
    pub registry_prefix: Option<String>,
    /// Base image for dependency images; defaults to $Q8S_BASE_IMAGE.
    #[arg(long)]
    pub base_image: Option<String>,
    /// Build command template with {tag} and {context}; defaults to
    /// $Q8S_BUILD_COMMAND. Without one, images are assumed to exist.
    #[arg(long)]
    pub build_command: Option<String>,
    /// Push command template with {tag}; defaults to $Q8S_PUSH_COMMAND.
    #[arg(long)]
    pub push_command: Option<String>,
    /// Give up on a job after this many seconds.
    #[arg(long)]
    pub timeout: Option<u64>,
    /// Run in-process instead of on a cluster.
    #[arg(long)]
    pub local: bool,
}

impl ClusterFlags {
    pub fn flag_values(&self) -> settings::FlagValues {
        settings::FlagValues {
            config: self.config.clone(),
            kubeconfig: self.kubeconfig.clone(),
            registry_prefix: self.registry_prefix.clone(),
            base_image: self.base_image.clone(),
            build_command: self.build_command.clone(),
            push_command: self.push_command.clone(),
            timeout_seconds: self.timeout,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Payload source file.
    pub payload: PathBuf,
    #[arg(long, value_enum, default_value_t = TargetArg::Cpu)]
    pub target: TargetArg,
    #[command(flatten)]
    pub cluster: ClusterFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoutineArg {
    Qft,
    Qv,
    Qaoa,
}

impl From<RoutineArg> for q8s_simkit::Routine {
    fn from(r: RoutineArg) -> Self {
        match r {
            RoutineArg::Qft => q8s_simkit::Routine::Qft,
            RoutineArg::Qv => q8s_simkit::Routine::Qv,
            RoutineArg::Qaoa => q8s_simkit::Routine::Qaoa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Virtual,
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimingArg {
    /// Simulator time from the gate-cost model.
    Modeled,
    /// Simulator time measured around the statevector run.
    Measured,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = RoutineArg::Qft)]
    pub routine: RoutineArg,
    /// Inclusive qubit range A..B.
    #[arg(long, default_value = "3..29")]
    pub qubits: String,
    #[arg(long, default_value_t = q8s_core::bench::DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// `[label=]local`, `[label=]fake:<profile>[:delay=ms][:speed=x][:pull=ms][:gpus=n]`
    /// or `[label=]cluster[:<kubeconfig>]`. Repeatable; the first is the
    /// speedup baseline. Defaults to local and fake:workstation.
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
    /// CSV destination; `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Also write the full report, with failures and samples, as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClockArg::Virtual)]
    pub clock: ClockArg,
    /// Defaults to modeled on the virtual clock and measured on the wall clock.
    #[arg(long, value_enum)]
    pub timing: Option<TimingArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Quantum volume depth.
    #[arg(long, default_value_t = 20)]
    pub depth: usize,
    /// QAOA layers.
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    #[arg(long, value_enum, default_value_t = TargetArg::Gpu)]
    pub target: TargetArg,
    /// Run scenarios concurrently (virtual clock, no real clusters).
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub cluster: ClusterFlags,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub connection_file: PathBuf,
    /// Target for cells without a `%%q8s target=` line.
    #[arg(long, value_enum, default_value_t = TargetArg::Cpu)]
    pub target: TargetArg,
    #[command(flatten)]
    pub cluster: ClusterFlags,
}

#[derive(Debug, Args)]
pub struct InstallArgs {
    /// Kernels directory; defaults to the per-user Jupyter data directory.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Default target baked into the kernel command line.
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// Kubeconfig baked into the kernel command line.
    #[arg(long)]
    pub kubeconfig: Option<PathBuf>,
    /// Make the installed kernel run cells in-process.
    #[arg(long)]
    pub local: bool,
}

#[derive(Debug, Args)]
pub struct FakeClusterArgs {
    /// `workstation` or `cloud-a100`, with optional `:delay=ms:speed=x:pull=ms:gpus=n`.
    #[arg(long, default_value = "workstation")]
    pub profile: String,
    #[arg(long, default_value = "127.0.0.1:0")]
    pub listen: String,
    /// Where to write the kubeconfig; defaults to a file in the temp dir.
    #[arg(long)]
    pub kubeconfig_out: Option<PathBuf>,
    /// Require this bearer token.
    #[arg(long)]
    pub token: Option<String>,
    #[arg(long, value_enum, default_value_t = TimingArg::Measured)]
    pub timing: TimingArg,
}
