//! Kernel message framing and signing.
//!
//! ```text
//! [identities...] <IDS|MSG> signature header parent_header metadata content [buffers...]
//! ```

use bytes::Bytes;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::Sha256;

pub const DELIMITER: &[u8] = b"<IDS|MSG>";
pub const PROTOCOL_VERSION: &str = "5.3";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WireError {
    #[error("missing <IDS|MSG> delimiter")]
    NoDelimiter,
    #[error("expected 5 frames after the identities, got {0}")]
    TooFewFrames(usize),
    #[error("bad signature")]
    BadSignature,
    #[error("malformed {frame}: {message}")]
    Json { frame: &'static str, message: String },
}

/// HMAC-SHA256 over the four JSON frames. An empty key disables signing, as
/// the connection-file contract allows.
#[derive(Clone)]
pub struct Signer {
    key: Vec<u8>,
}

impl Signer {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        Self { key: key.into() }
    }

    fn mac(&self, parts: &[&[u8]]) -> Option<Hmac<Sha256>> {
        if self.key.is_empty() {
            return None;
        }
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.key).expect("hmac accepts any key length");
        for p in parts {
            mac.update(p);
        }
        Some(mac)
    }

    pub fn sign(&self, parts: &[&[u8]]) -> String {
        self.mac(parts)
            .map(|m| hex::encode(m.finalize().into_bytes()))
            .unwrap_or_default()
    }

    /// Constant-time check of a hex signature.
    pub fn verify(&self, parts: &[&[u8]], signature: &[u8]) -> bool {
        match self.mac(parts) {
            None => true,
            Some(mac) => hex::decode(signature).is_ok_and(|sig| mac.verify_slice(&sig).is_ok()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub msg_id: String,
    pub msg_type: String,
    #[serde(default)]
    pub session: String,
    #[serde(default)]
    pub username: String,
    #[serde(default)]
    pub date: String,
    #[serde(default = "default_version")]
    pub version: String,
}

fn default_version() -> String {
    PROTOCOL_VERSION.to_string()
}

impl Header {
    pub fn new(msg_type: &str, session: &str, username: &str) -> Self {
        Self {
            msg_id: uuid::Uuid::new_v4().to_string(),
            msg_type: msg_type.to_string(),
            session: session.to_string(),
            username: username.to_string(),
            date: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            version: PROTOCOL_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub identities: Vec<Bytes>,
    pub header: Header,
    /// Empty object when the message has no parent.
    pub parent_header: Value,
    pub metadata: Value,
    pub content: Value,
    pub buffers: Vec<Bytes>,
}

impl WireMessage {
    pub fn new(header: Header, content: Value) -> Self {
        Self {
            identities: Vec::new(),
            header,
            parent_header: json!({}),
            metadata: json!({}),
            content,
            buffers: Vec::new(),
        }
    }

    /// A message of `msg_type` answering `parent`, routed back to its sender.
    pub fn reply_to(parent: &WireMessage, msg_type: &str, content: Value) -> Self {
        let mut msg = Self::new(Header::new(msg_type, &parent.header.session, &parent.header.username), content);
        msg.identities = parent.identities.clone();
        msg.parent_header = serde_json::to_value(&parent.header).expect("header serializes");
        msg
    }

    pub fn msg_type(&self) -> &str {
        &self.header.msg_type
    }

    pub fn parent_msg_id(&self) -> Option<&str> {
        self.parent_header.get("msg_id").and_then(Value::as_str)
    }

    pub fn to_frames(&self, signer: &Signer) -> Vec<Bytes> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let parent = serde_json::to_vec(&self.parent_header).expect("json serializes");
        let metadata = serde_json::to_vec(&self.metadata).expect("json serializes");
        let content = serde_json::to_vec(&self.content).expect("json serializes");
        let signature = signer.sign(&[&header, &parent, &metadata, &content]);
        let mut frames = self.identities.clone();
        frames.push(Bytes::from_static(DELIMITER));
        frames.push(Bytes::from(signature));
        frames.extend([header, parent, metadata, content].map(Bytes::from));
        frames.extend(self.buffers.iter().cloned());
        frames
    }

    /// Parses and verifies `frames`. The signature is checked before any
    /// JSON is decoded.
    pub fn from_frames(frames: Vec<Bytes>, signer: &Signer) -> Result<Self, (WireError, Option<Vec<Bytes>>)> {
        let split = frames
            .iter()
            .position(|f| f.as_ref() == DELIMITER)
            .ok_or((WireError::NoDelimiter, None))?;
        let identities = frames[..split].to_vec();
        let rest = &frames[split + 1..];
        if rest.len() < 5 {
            return Err((WireError::TooFewFrames(rest.len()), Some(identities)));
        }
        let parts: [&[u8]; 4] = [&rest[1], &rest[2], &rest[3], &rest[4]];
        if !signer.verify(&parts, &rest[0]) {
            return Err((WireError::BadSignature, Some(identities)));
        }
        let decode = |frame: &'static str, bytes: &[u8]| {
            serde_json::from_slice::<Value>(bytes).map_err(|e| WireError::Json { frame, message: e.to_string() })
        };
        let parsed = (|| {
            let header: Header = serde_json::from_slice(parts[0])
                .map_err(|e| WireError::Json { frame: "header", message: e.to_string() })?;
            Ok(Self {
                identities: identities.clone(),
                header,
                parent_header: decode("parent_header", parts[1])?,
                metadata: decode("metadata", parts[2])?,
                content: decode("content", parts[3])?,
                buffers: rest[5..].to_vec(),
            })
        })();
        parsed.map_err(|e| (e, Some(identities)))
    }
}
