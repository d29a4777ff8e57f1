//! In-process payload runner shared by the fake cluster and local execution.
//!
//! A payload is interpreted line by line. Only top-level statements run:
//! `print(...)` with literal arguments, `sys.exit(n)` and friends, and
//! `raise`. The `#q8s:` directive line, wherever it appears, simulates the
//! requested circuit and prints a state summary plus the simulator-time line.

mod script;

use std::time::Instant;

use q8s_simkit::{
    format_sim_seconds, memory_estimate, run_statevector, Circuit, Directive, Precision, SimError,
};

pub use script::{parse_statement, Statement};

/// Exit code and reason reported when the local memory limit rejects a
/// simulation.
pub const CAPACITY_EXIT_CODE: i32 = 1;
pub const CAPACITY_REASON: &str = "CapacityExceeded";

/// How simulator seconds are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimingMode {
    /// Wall-clock time spent applying gates.
    Measured,
    /// `gate_count × 2^n × seconds_per_amplitude_gate`, independent of the
    /// host. Circuits above the simulation cap are timed without being
    /// materialized.
    Modeled { seconds_per_amplitude_gate: f64 },
}

impl TimingMode {
    pub const DESK_SECONDS_PER_AMPLITUDE_GATE: f64 = 1e-6;

    pub fn desk_model() -> Self {
        TimingMode::Modeled {
            seconds_per_amplitude_gate: Self::DESK_SECONDS_PER_AMPLITUDE_GATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerConfig {
    /// Statevector memory available to the simulator, in bytes.
    pub memory_limit_bytes: u128,
    /// Largest register actually allocated.
    pub max_simulated_qubits: usize,
    pub timing: TimingMode,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            memory_limit_bytes: 16 << 30,
            max_simulated_qubits: 24,
            timing: TimingMode::Measured,
        }
    }
}

impl RunnerConfig {
    pub fn modeled() -> Self {
        Self {
            timing: TimingMode::desk_model(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub reason: Option<String>,
    /// Reported simulator seconds, already divided by the speed factor.
    pub sim_seconds: Option<f64>,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }

    /// stdout followed by stderr, the way a container log presents them.
    pub fn merged_log(&self) -> String {
        let mut log = self.stdout.clone();
        log.push_str(&self.stderr);
        log
    }
}

/// Executes a payload source to completion.
pub trait PayloadRunner: Send + Sync {
    /// `speed_factor` divides the reported simulator time.
    fn run(&self, source: &str, speed_factor: f64) -> RunOutcome;
}

/// The simkit-backed runner.
#[derive(Debug, Clone, Default)]
pub struct SimRunner {
    config: RunnerConfig,
}

impl SimRunner {
    pub fn new(config: RunnerConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &RunnerConfig {
        &self.config
    }

    /// Runs one directive. Returns the printed lines and the raw simulator
    /// seconds, or a failure outcome.
    fn simulate(&self, directive: &Directive) -> Result<(String, f64), RunOutcome> {
        let n = directive.n;
        let need = memory_estimate(u32::try_from(n).unwrap_or(u32::MAX), Precision::Double).bytes;
        if need > self.config.memory_limit_bytes {
            return Err(capacity_failure(&SimError::Capacity {
                n_qubits: n as u32,
                required_bytes: need,
                available_bytes: self.config.memory_limit_bytes,
            }));
        }
        let circuit = directive.build_circuit().map_err(directive_failure)?;
        let gates = circuit.gate_count();
        let oversized = n > self.config.max_simulated_qubits;
        match self.config.timing {
            TimingMode::Modeled {
                seconds_per_amplitude_gate,
            } => {
                let modeled = gates as f64 * 2f64.powi(n as i32) * seconds_per_amplitude_gate;
                let summary = if oversized {
                    format!("{} n={n} gates={gates} state=not-materialized\n", circuit.label())
                } else {
                    self.summarize(&circuit)?.0
                };
                Ok((summary, modeled))
            }
            TimingMode::Measured if oversized => Err(capacity_failure(&SimError::Capacity {
                n_qubits: n as u32,
                required_bytes: need,
                available_bytes: memory_estimate(
                    self.config.max_simulated_qubits as u32,
                    Precision::Double,
                )
                .bytes,
            })),
            TimingMode::Measured => self.summarize(&circuit),
        }
    }

    fn summarize(&self, circuit: &Circuit) -> Result<(String, f64), RunOutcome> {
        let (state, seconds) =
            run_statevector(circuit, self.config.memory_limit_bytes).map_err(|e| match e {
                e @ SimError::Capacity { .. } => capacity_failure(&e),
                e => directive_failure(e),
            })?;
        let (mut max_p, mut min_p) = (0f64, f64::INFINITY);
        for p in state.probabilities() {
            max_p = max_p.max(p);
            min_p = min_p.min(p);
        }
        let line = format!(
            "{} n={} gates={} norm={:.12} max_prob={:.6} min_prob={:.6}\n",
            circuit.label(),
            circuit.n_qubits(),
            circuit.gate_count(),
            state.norm(),
            max_p,
            min_p
        );
        Ok((line, seconds))
    }
}

fn capacity_failure(err: &SimError) -> RunOutcome {
    RunOutcome {
        exit_code: CAPACITY_EXIT_CODE,
        stderr: format!("{err}\n"),
        reason: Some(CAPACITY_REASON.to_string()),
        ..RunOutcome::default()
    }
}

fn directive_failure(err: SimError) -> RunOutcome {
    RunOutcome {
        exit_code: 1,
        stdout: format!("q8s directive error: {err}\n"),
        reason: Some("DirectiveError".to_string()),
        ..RunOutcome::default()
    }
}

impl PayloadRunner for SimRunner {
    fn run(&self, source: &str, speed_factor: f64) -> RunOutcome {
        let started = Instant::now();
        let mut out = RunOutcome::default();
        // The first directive is parsed up front, so a malformed one fails
        // before any output.
        let directive = match Directive::find(source) {
            Ok(d) => d,
            Err(e) => return directive_failure(e),
        };
        let mut simulated = false;
        for (idx, line) in source.lines().enumerate() {
            let stmt = parse_statement(line);
            match stmt {
                Statement::Directive if !simulated => {
                    simulated = true;
                    let Some(directive) = &directive else { continue };
                    match self.simulate(directive) {
                        Ok((summary, raw)) => {
                            let reported = raw / speed_factor;
                            out.stdout.push_str(&summary);
                            out.stdout.push_str(&format_sim_seconds(reported));
                            out.stdout.push('\n');
                            out.sim_seconds = Some(reported);
                        }
                        Err(mut fail) => {
                            fail.stdout.insert_str(0, &out.stdout);
                            return fail;
                        }
                    }
                }
                Statement::Print { text, to_stderr } => {
                    if to_stderr {
                        out.stderr.push_str(&text);
                    } else {
                        out.stdout.push_str(&text);
                    }
                }
                Statement::Exit { code, message } => {
                    if let Some(m) = message {
                        out.stderr.push_str(&m);
                        out.stderr.push('\n');
                    }
                    out.exit_code = code;
                    break;
                }
                Statement::Raise { exception, message } => {
                    out.stderr.push_str(&format!(
                        "Traceback (most recent call last):\n  File \"/app/main.py\", line {}, in <module>\n    {}\n",
                        idx + 1,
                        line.trim()
                    ));
                    match message {
                        Some(m) if !m.is_empty() => out.stderr.push_str(&format!("{exception}: {m}\n")),
                        _ => out.stderr.push_str(&format!("{exception}\n")),
                    }
                    out.exit_code = 1;
                    out.reason = Some("Error".to_string());
                    break;
                }
                _ => {}
            }
        }
        tracing::trace!(elapsed = ?started.elapsed(), exit = out.exit_code, "payload finished");
        out
    }
}
