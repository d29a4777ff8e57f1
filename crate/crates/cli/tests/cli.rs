use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_q8s");

fn q8s(args: &[&str]) -> Command {
    let mut c = Command::new(BIN);
    c.args(args)
        .env_remove("KUBECONFIG")
        .env_remove("Q8S_CONFIG")
        .env("XDG_CONFIG_HOME", "/nonexistent")
        .env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    q8s(args).output().expect("spawn q8s")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn payload(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

/// A `q8s fake-cluster` child, killed on drop.
struct FakeClusterProc {
    child: Child,
    ready: String,
    kubeconfig: PathBuf,
}

impl FakeClusterProc {
    fn start(dir: &Path, profile: &str) -> Self {
        let kc = dir.join("fake.kubeconfig");
        let mut child = q8s(&["fake-cluster", "--profile", profile, "--kubeconfig-out", kc.to_str().unwrap()])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut ready = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut ready).unwrap();
        Self {
            child,
            ready,
            kubeconfig: kc,
        }
    }
}

impl Drop for FakeClusterProc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn run_hello_locally() {
    let dir = tempfile::tempdir().unwrap();
    let p = payload(dir.path(), "hello.py", "print(\"hello\")\n");
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("hello"));
    assert!(lines.next().unwrap().starts_with("Q8S_TIMING wall="));
}

#[test]
fn gpu_without_kubeconfig_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = payload(dir.path(), "hello.py", "print(1)\n");
    let out = run(&["run", "--target", "gpu", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).starts_with("q8s: KUBECONFIG not set"), "{}", text(&out.stderr));
}

#[test]
fn missing_payload_file_exits_2() {
    let out = run(&["run", "/nonexistent/payload.py"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn local_payload_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = payload(dir.path(), "bad.py", "raise ValueError('nope')\n");
    let out = run(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("ValueError: nope"));
}

#[test]
fn fake_cluster_subprocess_serves_run_and_reports_oom() {
    let dir = tempfile::tempdir().unwrap();
    let fc = FakeClusterProc::start(dir.path(), "workstation");
    assert!(fc.ready.contains("endpoint=http://127.0.0.1:"), "{}", fc.ready);
    assert!(fc.ready.contains(&format!("kubeconfig={}", fc.kubeconfig.display())));
    let kc = fc.kubeconfig.to_str().unwrap();

    let ok = payload(dir.path(), "ok.py", "#q8s: routine=qft n=6\nprint('fine')\n");
    let out = run(&["run", "--target", "gpu", "--kubeconfig", kc, ok.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("Q8S_SIM_SECONDS=") && stdout.contains("fine\n"), "{stdout}");

    let oom = payload(dir.path(), "oom.py", "#q8s: routine=qaoa n=30\n");
    let out = q8s(&["run", "--target", "gpu", oom.to_str().unwrap()])
        .env("KUBECONFIG", kc)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("OOMKilled"), "{}", text(&out.stderr));
}

#[test]
fn fake_cluster_rejects_unknown_profile() {
    let out = run(&["fake-cluster", "--profile", "laptop"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("laptop"));
}

#[test]
fn bench_rejects_empty_range() {
    let out = run(&["bench", "--qubits", "5..4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["bench", "--scenario", "gpu"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_defaults_in_banner() {
    let out = run(&["bench", "--qubits", "3..3", "--iterations", "1", "--scenario", "local"]);
    assert_eq!(out.status.code(), Some(0));
    let err = text(&out.stderr);
    assert!(err.contains("routine qft"), "{err}");
    assert!(err.contains("clock virtual"), "{err}");
    let help = text(&run(&["bench", "--help"]).stdout);
    assert!(help.contains("[default: 3..29]") && help.contains("[default: 10]"), "{help}");
}

#[test]
fn bench_stdout_matches_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("out.csv");
    let json = dir.path().join("out.json");
    let args = ["bench", "--routine", "qv", "--qubits", "3..6", "--iterations", "2", "--seed", "3"];
    let to_stdout = run(&args);
    assert_eq!(to_stdout.status.code(), Some(0), "{}", text(&to_stdout.stderr));
    let mut with_file = args.to_vec();
    with_file.extend(["--out", file.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    let to_file = run(&with_file);
    assert_eq!(to_file.status.code(), Some(0));
    assert!(to_file.stdout.is_empty());
    assert_eq!(std::fs::read(&file).unwrap(), to_stdout.stdout);
    let csv = text(&to_stdout.stdout);
    assert!(csv.starts_with("scenario,routine,n,"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    assert!(std::fs::read_to_string(&json).unwrap().contains("\"samples\""));
    assert!(text(&to_stdout.stderr).contains("speedup fake:workstation vs local"));
}

#[test]
fn bench_oom_row_is_failed_but_sweep_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let out = run(&[
        "bench", "--routine", "qaoa", "--qubits", "29..30", "--iterations", "1", "--scenario", "fake:workstation",
        "--json", json.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = text(&out.stdout);
    assert!(csv.contains(",qaoa,29,") && !csv.contains(",qaoa,30,"), "{csv}");
    assert!(std::fs::read_to_string(&json).unwrap().contains("OOMKilled"));
}

#[test]
fn kernelspec_install_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let first = run(&["install-kernelspec", "--dir", d, "--target", "gpu"]);
    assert_eq!(first.status.code(), Some(0), "{}", text(&first.stderr));
    assert_eq!(PathBuf::from(text(&first.stdout).trim()), dir.path().join("q8s"));
    let path = dir.path().join("q8s/kernel.json");
    let a = std::fs::read(&path).unwrap();
    run(&["install-kernelspec", "--dir", d, "--target", "gpu"]);
    assert_eq!(std::fs::read(&path).unwrap(), a);
    let spec = text(&a);
    assert!(spec.contains("Python Q8s kernel") && spec.contains("{connection_file}") && spec.contains("\"gpu\""));
}

#[test]
fn kernel_with_missing_connection_file_exits_2() {
    let out = run(&["kernel", "--connection-file", "/nonexistent/kernel-1.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("/nonexistent/kernel-1.json"), "{}", text(&out.stderr));
}

#[test]
fn version_and_help() {
    let out = run(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("kernel protocol 5.3"));
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for sub in ["run", "bench", "kernel", "install-kernelspec", "fake-cluster"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
