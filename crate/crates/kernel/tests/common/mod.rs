#![allow(dead_code)]

use std::time::Duration;

use bytes::Bytes;
use hmac::{Hmac, Mac};
use q8s_kernel::ConnectionInfo;
use serde_json::{json, Value};
use sha2::Sha256;
use zeromq::{DealerSocket, ReqSocket, Socket, SocketRecv, SocketSend, SubSocket, ZmqMessage};

pub const WAIT: Duration = Duration::from_secs(20);

/// A decoded message plus whether its signature verified under the key.
#[derive(Debug, Clone)]
pub struct Received {
    pub header: Value,
    pub parent: Value,
    pub metadata: Value,
    pub content: Value,
    pub signature_ok: bool,
}

impl Received {
    pub fn msg_type(&self) -> &str {
        self.header["msg_type"].as_str().unwrap()
    }

    pub fn parent_id(&self) -> Option<&str> {
        self.parent.get("msg_id").and_then(Value::as_str)
    }
}

fn hmac_hex(key: &[u8], parts: &[&[u8]]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).unwrap();
    for p in parts {
        mac.update(p);
    }
    hex::encode(mac.finalize().into_bytes())
}

/// Minimal scripted frontend: shell DEALER, control DEALER, iopub SUB and
/// heartbeat REQ. Signing is done here with the hmac crate directly rather
/// than through the kernel's own signer.
pub struct Frontend {
    pub key: Vec<u8>,
    pub shell: DealerSocket,
    pub control: DealerSocket,
    pub iopub: SubSocket,
    pub hb: ReqSocket,
    pub session: String,
}

impl Frontend {
    pub async fn connect(info: &ConnectionInfo) -> Self {
        let mut shell = DealerSocket::new();
        shell.connect(&info.endpoint(info.shell_port)).await.unwrap();
        let mut control = DealerSocket::new();
        control.connect(&info.endpoint(info.control_port)).await.unwrap();
        let mut iopub = SubSocket::new();
        iopub.connect(&info.endpoint(info.iopub_port)).await.unwrap();
        iopub.subscribe("").await.unwrap();
        let mut hb = ReqSocket::new();
        hb.connect(&info.endpoint(info.hb_port)).await.unwrap();
        let mut fe = Self {
            key: info.key.as_bytes().to_vec(),
            shell,
            control,
            iopub,
            hb,
            session: "frontend-session".into(),
        };
        fe.await_iopub().await;
        fe
    }

    /// Publishes dropped before the subscription lands are lost; probe with
    /// kernel_info until iopub traffic arrives, then drain.
    async fn await_iopub(&mut self) {
        for _ in 0..100 {
            let id = self.send_shell("kernel_info_request", json!({})).await;
            self.recv_shell().await;
            if tokio::time::timeout(Duration::from_millis(200), self.iopub.recv()).await.is_ok() {
                let _ = self.iopub_until_idle(&id, Duration::from_millis(300)).await;
                return;
            }
        }
        panic!("iopub never delivered");
    }

    pub fn frames(&self, msg_type: &str, content: Value) -> (String, Vec<Bytes>) {
        let id = uuid::Uuid::new_v4().to_string();
        let header = json!({
            "msg_id": id, "msg_type": msg_type, "session": self.session,
            "username": "tester", "date": "2024-01-01T00:00:00.000000Z", "version": "5.3",
        });
        let parts: Vec<Vec<u8>> = [header, json!({}), json!({}), content]
            .iter()
            .map(|v| serde_json::to_vec(v).unwrap())
            .collect();
        let sig = hmac_hex(&self.key, &parts.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let mut frames = vec![Bytes::from_static(b"<IDS|MSG>"), Bytes::from(sig)];
        frames.extend(parts.into_iter().map(Bytes::from));
        (id, frames)
    }

    pub async fn send_raw(sock: &mut DealerSocket, frames: Vec<Bytes>) {
        sock.send(ZmqMessage::try_from(frames).unwrap()).await.unwrap();
    }

    pub async fn send_shell(&mut self, msg_type: &str, content: Value) -> String {
        let (id, frames) = self.frames(msg_type, content);
        Self::send_raw(&mut self.shell, frames).await;
        id
    }

    pub async fn send_control(&mut self, msg_type: &str, content: Value) -> String {
        let (id, frames) = self.frames(msg_type, content);
        Self::send_raw(&mut self.control, frames).await;
        id
    }

    pub fn decode(&self, frames: Vec<Bytes>) -> Received {
        let at = frames.iter().position(|f| f.as_ref() == b"<IDS|MSG>").expect("delimiter");
        let r = &frames[at + 1..];
        let parts: [&[u8]; 4] = [&r[1], &r[2], &r[3], &r[4]];
        let expected = hmac_hex(&self.key, &parts);
        let json = |b: &[u8]| serde_json::from_slice::<Value>(b).unwrap();
        Received {
            header: json(parts[0]),
            parent: json(parts[1]),
            metadata: json(parts[2]),
            content: json(parts[3]),
            signature_ok: r[0].as_ref() == expected.as_bytes(),
        }
    }

    pub async fn recv_shell(&mut self) -> Received {
        let m = tokio::time::timeout(WAIT, self.shell.recv()).await.expect("shell reply").unwrap();
        self.decode(m.into_vec())
    }

    pub async fn recv_control(&mut self) -> Received {
        let m = tokio::time::timeout(WAIT, self.control.recv()).await.expect("control reply").unwrap();
        self.decode(m.into_vec())
    }

    pub async fn recv_iopub(&mut self, wait: Duration) -> Option<Received> {
        let m = tokio::time::timeout(wait, self.iopub.recv()).await.ok()?.unwrap();
        Some(self.decode(m.into_vec()))
    }

    /// Iopub messages up to and including the idle status for `parent`.
    pub async fn iopub_until_idle(&mut self, parent: &str, wait: Duration) -> Vec<Received> {
        let mut out = Vec::new();
        while let Some(m) = self.recv_iopub(wait).await {
            let done = m.msg_type() == "status"
                && m.content["execution_state"] == "idle"
                && m.parent_id() == Some(parent);
            out.push(m);
            if done {
                return out;
            }
        }
        panic!("no idle for {parent}; got {:?}", out.iter().map(|m| m.msg_type().to_string()).collect::<Vec<_>>());
    }

    pub async fn execute(&mut self, code: &str) -> (Received, Vec<Received>) {
        let id = self.send_shell("execute_request", json!({"code": code, "silent": false})).await;
        let reply = self.recv_shell().await;
        let io = self.iopub_until_idle(&id, WAIT).await;
        assert_eq!(reply.parent_id(), Some(id.as_str()));
        (reply, io)
    }

    pub async fn ping(&mut self, payload: &'static [u8]) -> Vec<u8> {
        self.hb.send(ZmqMessage::from(payload.to_vec())).await.unwrap();
        let m = tokio::time::timeout(WAIT, self.hb.recv()).await.expect("heartbeat").unwrap();
        m.into_vec().concat()
    }
}

pub fn stream_text(io: &[Received], name: &str) -> String {
    io.iter()
        .filter(|m| m.msg_type() == "stream" && m.content["name"] == name)
        .map(|m| m.content["text"].as_str().unwrap().to_string())
        .collect()
}

/// Exactly one busy and one idle for `parent`, busy first.
pub fn assert_bracketed(io: &[Received], parent: &str) {
    let states: Vec<&str> = io
        .iter()
        .filter(|m| m.msg_type() == "status" && m.parent_id() == Some(parent))
        .map(|m| m.content["execution_state"].as_str().unwrap())
        .collect();
    assert_eq!(states, ["busy", "idle"]);
    assert_eq!(io.first().unwrap().content["execution_state"], "busy");
}
