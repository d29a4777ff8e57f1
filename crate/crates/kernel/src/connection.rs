use std::path::Path;

use serde::{Deserialize, Serialize};

pub const SIGNATURE_SCHEME: &str = "hmac-sha256";

#[derive(Debug, thiserror::Error)]
pub enum ConnectionError {
    #[error("cannot read connection file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid connection file: {0}")]
    Parse(String),
    #[error("invalid connection info: {0}")]
    Invalid(String),
}

/// The kernel connection-file contract. Port 0 asks for an ephemeral port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionInfo {
    pub transport: String,
    pub ip: String,
    pub key: String,
    pub signature_scheme: String,
    pub shell_port: u16,
    pub iopub_port: u16,
    pub stdin_port: u16,
    pub control_port: u16,
    pub hb_port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_name: Option<String>,
}

impl ConnectionInfo {
    /// Loopback, ephemeral ports, a random key.
    pub fn ephemeral() -> Self {
        Self {
            transport: "tcp".into(),
            ip: "127.0.0.1".into(),
            key: uuid::Uuid::new_v4().to_string(),
            signature_scheme: SIGNATURE_SCHEME.into(),
            shell_port: 0,
            iopub_port: 0,
            stdin_port: 0,
            control_port: 0,
            hb_port: 0,
            kernel_name: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConnectionError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConnectionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let info: Self = serde_json::from_str(&text).map_err(|e| ConnectionError::Parse(e.to_string()))?;
        info.validate()?;
        Ok(info)
    }

    pub fn validate(&self) -> Result<(), ConnectionError> {
        if self.signature_scheme != SIGNATURE_SCHEME {
            return Err(ConnectionError::Invalid(format!(
                "signature_scheme {:?} unsupported, expected {SIGNATURE_SCHEME}",
                self.signature_scheme
            )));
        }
        if self.transport != "tcp" {
            return Err(ConnectionError::Invalid(format!("transport {:?} unsupported, expected tcp", self.transport)));
        }
        let mut ports: Vec<u16> = self.ports().into_iter().filter(|p| *p != 0).collect();
        ports.sort_unstable();
        if ports.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConnectionError::Invalid("ports must be distinct".into()));
        }
        Ok(())
    }

    /// Shell, iopub, stdin, control, heartbeat.
    pub fn ports(&self) -> [u16; 5] {
        [self.shell_port, self.iopub_port, self.stdin_port, self.control_port, self.hb_port]
    }

    pub fn endpoint(&self, port: u16) -> String {
        format!("{}://{}:{port}", self.transport, self.ip)
    }
}
