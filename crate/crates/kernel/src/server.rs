//! The kernel process: heartbeat echo, shell and control request handling
//! and iopub publication.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use q8s_core::celldeps::{CellTask, Target};
use q8s_core::dispatch::{ExecutionResult, Executor};
use serde_json::{json, Value};
use tokio::sync::{watch, Mutex};
use tokio::task::JoinHandle;
use zeromq::{Endpoint, PubSocket, RepSocket, RouterSocket, Socket, SocketRecv, SocketSend, ZmqMessage};

use crate::connection::{ConnectionError, ConnectionInfo};
use crate::wire::{Header, Signer, WireError, WireMessage, PROTOCOL_VERSION};

/// First-line cell magic selecting the target, e.g. `%%q8s target=gpu`.
pub const MAGIC_PREFIX: &str = "%%q8s";
pub const IMPLEMENTATION: &str = "q8s";
const USERNAME: &str = "kernel";
/// Lets the last reply leave before the sockets close.
const SHUTDOWN_GRACE: Duration = Duration::from_millis(100);

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error("cannot bind {endpoint}: {message}")]
    Bind { endpoint: String, message: String },
}

#[derive(Clone)]
pub struct KernelConfig {
    /// Target for cells without a magic line.
    pub default_target: Target,
    pub executor: Arc<dyn Executor>,
}

/// Splits an optional leading magic line off `code`.
pub fn parse_cell(code: &str, default_target: Target) -> Result<(Target, String), String> {
    let mut lines = code.splitn(2, '\n');
    let first = lines.next().unwrap_or_default();
    let Some(args) = first.trim().strip_prefix(MAGIC_PREFIX) else {
        return Ok((default_target, code.to_string()));
    };
    if !args.is_empty() && !args.starts_with(char::is_whitespace) {
        return Ok((default_target, code.to_string()));
    }
    let mut target = default_target;
    for token in args.split_whitespace() {
        match token.split_once('=') {
            Some(("target", v)) => target = v.parse().map_err(|e| format!("{MAGIC_PREFIX}: {e}"))?,
            _ => return Err(format!("{MAGIC_PREFIX}: unknown argument {token:?}, expected target=cpu|gpu|qpu")),
        }
    }
    Ok((target, lines.next().unwrap_or_default().to_string()))
}

/// A kernel bound to its sockets. Ports requested as 0 are resolved in
/// [`RunningKernel::connection_info`].
pub struct RunningKernel {
    info: ConnectionInfo,
    stopped: watch::Receiver<bool>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningKernel {
    pub fn connection_info(&self) -> &ConnectionInfo {
        &self.info
    }

    /// Resolves once a shutdown request was answered or [`Self::shutdown`]
    /// was called.
    pub async fn wait(mut self) {
        let _ = self.stopped.wait_for(|s| *s).await;
        tokio::time::sleep(SHUTDOWN_GRACE).await;
        self.abort();
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        self.wait().await;
    }

    fn abort(&mut self) {
        for t in self.tasks.drain(..) {
            t.abort();
        }
    }
}

impl Drop for RunningKernel {
    fn drop(&mut self) {
        self.abort();
    }
}

async fn bind<S: Socket>(socket: &mut S, info: &ConnectionInfo, port: u16) -> Result<u16, KernelError> {
    let endpoint = info.endpoint(port);
    match socket.bind(&endpoint).await {
        Ok(Endpoint::Tcp(_, port)) => Ok(port),
        Ok(other) => Err(KernelError::Bind {
            endpoint,
            message: format!("unexpected endpoint {other}"),
        }),
        Err(e) => Err(KernelError::Bind {
            endpoint,
            message: e.to_string(),
        }),
    }
}

pub async fn start_kernel(info: ConnectionInfo, config: KernelConfig) -> Result<RunningKernel, KernelError> {
    info.validate()?;
    let mut info = info;
    let mut shell = RouterSocket::new();
    let mut control = RouterSocket::new();
    let mut iopub = PubSocket::new();
    let mut hb = RepSocket::new();
    // The stdin channel is part of the contract but unused: input requests
    // are not supported. Binding it keeps frontends that connect happy.
    let mut stdin = RouterSocket::new();
    info.shell_port = bind(&mut shell, &info, info.shell_port).await?;
    info.iopub_port = bind(&mut iopub, &info, info.iopub_port).await?;
    info.stdin_port = bind(&mut stdin, &info, info.stdin_port).await?;
    info.control_port = bind(&mut control, &info, info.control_port).await?;
    info.hb_port = bind(&mut hb, &info, info.hb_port).await?;

    let (stop, stopped) = watch::channel(false);
    let kernel = Arc::new(Kernel {
        signer: Signer::new(info.key.clone()),
        session: uuid::Uuid::new_v4().to_string(),
        config,
        iopub: Mutex::new(iopub),
        execution_count: Mutex::new(0),
        stop: stop.clone(),
    });
    let tasks = vec![
        tokio::spawn(heartbeat(hb)),
        tokio::spawn(kernel.clone().serve_channel(shell, Channel::Shell)),
        tokio::spawn(kernel.clone().serve_channel(control, Channel::Control)),
        tokio::spawn(async move {
            let _keep = stdin;
            std::future::pending::<()>().await
        }),
    ];
    kernel.publish_status("starting", None).await;
    tracing::info!(shell = info.shell_port, iopub = info.iopub_port, hb = info.hb_port, "kernel listening");
    Ok(RunningKernel {
        info,
        stopped,
        stop,
        tasks,
    })
}

/// Loads `connection_file` and serves until a shutdown request.
pub async fn serve_kernel(connection_file: &Path, config: KernelConfig) -> Result<(), KernelError> {
    let info = ConnectionInfo::load(connection_file)?;
    start_kernel(info, config).await?.wait().await;
    Ok(())
}

async fn heartbeat(mut hb: RepSocket) {
    loop {
        match hb.recv().await {
            Ok(msg) => {
                if let Err(e) = hb.send(msg).await {
                    tracing::debug!(error = %e, "heartbeat reply failed");
                }
            }
            Err(e) => {
                tracing::debug!(error = %e, "heartbeat socket closed");
                return;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Shell,
    Control,
}

struct Kernel {
    signer: Signer,
    session: String,
    config: KernelConfig,
    iopub: Mutex<PubSocket>,
    /// Held for the whole of an execute request, which serializes them.
    execution_count: Mutex<u64>,
    stop: watch::Sender<bool>,
}

fn to_zmq(frames: Vec<Bytes>) -> ZmqMessage {
    ZmqMessage::try_from(frames).expect("kernel messages have frames")
}

impl Kernel {
    async fn serve_channel(self: Arc<Self>, mut socket: RouterSocket, channel: Channel) {
        loop {
            let frames = match socket.recv().await {
                Ok(m) => m.into_vec(),
                Err(e) => {
                    tracing::warn!(?channel, error = %e, "socket receive failed");
                    return;
                }
            };
            let replies = self.handle(frames, channel).await;
            for reply in replies {
                if let Err(e) = socket.send(to_zmq(reply.to_frames(&self.signer))).await {
                    tracing::warn!(?channel, error = %e, "reply send failed");
                }
            }
            if *self.stop.borrow() {
                return;
            }
        }
    }

    /// Handles one request; returns the messages to send back on the same
    /// socket.
    async fn handle(&self, frames: Vec<Bytes>, channel: Channel) -> Vec<WireMessage> {
        let raw = frames.clone();
        let msg = match WireMessage::from_frames(frames, &self.signer) {
            Ok(m) => m,
            Err((WireError::BadSignature, _)) => {
                tracing::warn!(?channel, "dropping message with bad signature");
                return Vec::new();
            }
            Err((err, Some(identities))) => return vec![self.protocol_error(&raw, identities, &err)],
            Err((err, None)) => {
                tracing::warn!(?channel, error = %err, "dropping unframed message");
                return Vec::new();
            }
        };
        match (msg.msg_type(), channel) {
            ("kernel_info_request", _) => {
                self.publish_status("busy", Some(&msg)).await;
                let reply = WireMessage::reply_to(&msg, "kernel_info_reply", kernel_info());
                self.publish_status("idle", Some(&msg)).await;
                vec![reply]
            }
            ("execute_request", Channel::Shell) => vec![self.execute(&msg).await],
            ("shutdown_request", _) => {
                let restart = msg.content.get("restart").and_then(Value::as_bool).unwrap_or(false);
                let reply = WireMessage::reply_to(&msg, "shutdown_reply", json!({"status": "ok", "restart": restart}));
                let _ = self.stop.send(true);
                vec![reply]
            }
            (other, _) => {
                tracing::debug!(?channel, msg_type = other, "unsupported message type ignored");
                Vec::new()
            }
        }
    }

    fn protocol_error(&self, raw: &[Bytes], identities: Vec<Bytes>, err: &WireError) -> WireMessage {
        let header = raw
            .iter()
            .position(|f| f.as_ref() == crate::wire::DELIMITER)
            .and_then(|i| raw.get(i + 2))
            .and_then(|f| serde_json::from_slice::<Header>(f).ok());
        let msg_type = header
            .as_ref()
            .and_then(|h| h.msg_type.strip_suffix("_request"))
            .map(|t| format!("{t}_reply"))
            .unwrap_or_else(|| "error".to_string());
        let mut reply = WireMessage::new(
            Header::new(&msg_type, &self.session, USERNAME),
            json!({
                "status": "error",
                "ename": "ProtocolError",
                "evalue": err.to_string(),
                "traceback": [],
            }),
        );
        reply.identities = identities;
        if let Some(h) = header {
            reply.parent_header = serde_json::to_value(h).expect("header serializes");
        }
        reply
    }

    async fn publish(&self, msg: WireMessage) {
        let mut msg = msg;
        msg.identities = vec![Bytes::from(format!("kernel.{}.{}", self.session, msg.header.msg_type))];
        let frames = msg.to_frames(&self.signer);
        if let Err(e) = self.iopub.lock().await.send(to_zmq(frames)).await {
            tracing::debug!(error = %e, "iopub publish failed");
        }
    }

    async fn publish_on(&self, parent: Option<&WireMessage>, msg_type: &str, content: Value) {
        let msg = match parent {
            Some(p) => WireMessage::reply_to(p, msg_type, content),
            None => WireMessage::new(Header::new(msg_type, &self.session, USERNAME), content),
        };
        self.publish(msg).await;
    }

    async fn publish_status(&self, state: &str, parent: Option<&WireMessage>) {
        self.publish_on(parent, "status", json!({ "execution_state": state })).await;
    }

    async fn stream(&self, parent: &WireMessage, name: &str, text: &str) {
        if !text.is_empty() {
            self.publish_on(Some(parent), "stream", json!({ "name": name, "text": text })).await;
        }
    }

    async fn execute(&self, req: &WireMessage) -> WireMessage {
        let mut count = self.execution_count.lock().await;
        self.publish_status("busy", Some(req)).await;
        let code = req.content.get("code").and_then(Value::as_str).unwrap_or_default().to_string();
        let silent = req.content.get("silent").and_then(Value::as_bool).unwrap_or(false);
        if !silent {
            *count += 1;
        }
        let n = *count;
        self.publish_on(Some(req), "execute_input", json!({ "code": code, "execution_count": n })).await;

        let reply = match parse_cell(&code, self.config.default_target) {
            Err(message) => {
                self.stream(req, "stderr", &format!("{message}\n")).await;
                error_reply(req, n, "UsageError", &message, Value::Null)
            }
            Ok((_, source)) if source.trim().is_empty() => ok_reply(req, n, Value::Null),
            Ok((target, source)) => {
                let result = match CellTask::cell(source, target) {
                    Ok(task) => Some(self.config.executor.execute(&task).await),
                    Err(e) => {
                        self.stream(req, "stderr", &format!("{e}\n")).await;
                        None
                    }
                };
                match result {
                    None => error_reply(req, n, "UsageError", "invalid cell", Value::Null),
                    Some(r) => self.report(req, n, target, &r).await,
                }
            }
        };
        self.publish_status("idle", Some(req)).await;
        reply
    }

    async fn report(&self, req: &WireMessage, n: u64, target: Target, r: &ExecutionResult) -> WireMessage {
        let meta = json!({
            "q8s": {
                "target": target.as_str(),
                "job_name": r.job_name,
                "wall_seconds": r.timing.wall_seconds,
                "simulator_seconds": r.timing.simulator_seconds,
                "overhead_seconds": r.timing.overhead_seconds,
            }
        });
        if r.is_success() {
            self.stream(req, "stdout", r.stdout().unwrap_or_default()).await;
            return ok_reply(req, n, meta);
        }
        let stderr = r.stderr().unwrap_or_default();
        self.stream(req, "stderr", stderr).await;
        let ename = r.reason().unwrap_or("ExecutionError").to_string();
        let evalue = match r.exit_code() {
            Some(code) => format!("job exited with code {code}"),
            None => stderr.lines().next().unwrap_or("execution failed").to_string(),
        };
        error_reply(req, n, &ename, &evalue, meta)
    }
}

fn ok_reply(req: &WireMessage, n: u64, metadata: Value) -> WireMessage {
    let mut reply = WireMessage::reply_to(
        req,
        "execute_reply",
        json!({ "status": "ok", "execution_count": n, "user_expressions": {}, "payload": [] }),
    );
    if !metadata.is_null() {
        reply.metadata = metadata;
    }
    reply
}

fn error_reply(req: &WireMessage, n: u64, ename: &str, evalue: &str, metadata: Value) -> WireMessage {
    let mut reply = WireMessage::reply_to(
        req,
        "execute_reply",
        json!({
            "status": "error",
            "execution_count": n,
            "ename": ename,
            "evalue": evalue,
            "traceback": [format!("{ename}: {evalue}")],
        }),
    );
    if !metadata.is_null() {
        reply.metadata = metadata;
    }
    reply
}

fn kernel_info() -> Value {
    json!({
        "status": "ok",
        "protocol_version": PROTOCOL_VERSION,
        "implementation": IMPLEMENTATION,
        "implementation_version": env!("CARGO_PKG_VERSION"),
        "language_info": {
            "name": "python",
            "version": "3",
            "mimetype": "text/x-python",
            "file_extension": ".py",
        },
        "banner": "Python Q8s kernel: cells run as cluster jobs",
        "help_links": [],
    })
}
