use std::path::{Path, PathBuf};

use base64::Engine;
use serde::Deserialize;
use thiserror::Error;
use url::Url;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Auth {
    BearerToken(String),
    ClientCertificate { cert_pem: Vec<u8>, key_pem: Vec<u8> },
    /// No credentials presented.
    Anonymous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterConfig {
    pub server_url: Url,
    pub cluster_ca: Option<Vec<u8>>,
    pub auth: Auth,
    pub namespace: String,
    /// Skip TLS certificate verification. Off unless the config says so.
    pub insecure_skip_tls_verify: bool,
}

impl ClusterConfig {
    /// Plain-HTTP or HTTPS endpoint with a bearer token, namespace `default`.
    pub fn with_token(server_url: Url, token: impl Into<String>) -> Self {
        Self {
            server_url,
            cluster_ca: None,
            auth: Auth::BearerToken(token.into()),
            namespace: "default".to_string(),
            insecure_skip_tls_verify: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("KUBECONFIG not set: export KUBECONFIG=/path/to/kubeconfig or pass --kubeconfig")]
    KubeconfigNotSet,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed kubeconfig: {0}")]
    Parse(String),
    #[error("kubeconfig is missing {0}")]
    MissingKey(String),
    #[error("context not found: {0}")]
    ContextNotFound(String),
    #[error("cluster not found: {0}")]
    ClusterNotFound(String),
    #[error("user not found: {0}")]
    UserNotFound(String),
    #[error("{field} is not valid base64: {message}")]
    Base64 { field: String, message: String },
    #[error("invalid server url {url:?}: {message}")]
    Url { url: String, message: String },
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case")]
struct RawKubeconfig {
    current_context: Option<String>,
    #[serde(default)]
    clusters: Vec<NamedCluster>,
    #[serde(default)]
    users: Vec<NamedUser>,
    #[serde(default)]
    contexts: Vec<NamedContext>,
}

#[derive(Deserialize)]
struct NamedCluster {
    name: String,
    cluster: RawCluster,
}

#[derive(Deserialize)]
struct NamedUser {
    name: String,
    #[serde(default)]
    user: RawUser,
}

#[derive(Deserialize)]
struct NamedContext {
    name: String,
    context: RawContext,
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case")]
struct RawCluster {
    server: Option<String>,
    certificate_authority: Option<String>,
    certificate_authority_data: Option<String>,
    #[serde(default)]
    insecure_skip_tls_verify: bool,
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
struct RawUser {
    token: Option<String>,
    token_file: Option<String>,
    client_certificate: Option<String>,
    client_certificate_data: Option<String>,
    client_key: Option<String>,
    client_key_data: Option<String>,
}

#[derive(Deserialize)]
struct RawContext {
    cluster: String,
    user: Option<String>,
    namespace: Option<String>,
}

/// Reads the kubeconfig named by the `KUBECONFIG` environment variable. When
/// it lists several paths, the first one is used.
pub fn load_from_env() -> Result<ClusterConfig, ConfigError> {
    let value = std::env::var_os("KUBECONFIG").ok_or(ConfigError::KubeconfigNotSet)?;
    let first = std::env::split_paths(&value)
        .find(|p| !p.as_os_str().is_empty())
        .ok_or(ConfigError::KubeconfigNotSet)?;
    load_kubeconfig(&first)
}

pub fn load_kubeconfig(path: &Path) -> Result<ClusterConfig, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_kubeconfig(&bytes, path.parent())
}

/// Resolves the current context of a kubeconfig document. Relative file
/// references are taken relative to `base_dir`.
pub fn parse_kubeconfig(bytes: &[u8], base_dir: Option<&Path>) -> Result<ClusterConfig, ConfigError> {
    let raw: RawKubeconfig =
        serde_yaml::from_slice(bytes).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let current = raw
        .current_context
        .filter(|c| !c.is_empty())
        .ok_or_else(|| ConfigError::MissingKey("current-context".into()))?;
    let context = raw
        .contexts
        .into_iter()
        .find(|c| c.name == current)
        .ok_or_else(|| ConfigError::ContextNotFound(current.clone()))?
        .context;
    let cluster = raw
        .clusters
        .into_iter()
        .find(|c| c.name == context.cluster)
        .ok_or_else(|| ConfigError::ClusterNotFound(context.cluster.clone()))?
        .cluster;
    let user = match &context.user {
        Some(name) => {
            raw.users
                .into_iter()
                .find(|u| &u.name == name)
                .ok_or_else(|| ConfigError::UserNotFound(name.clone()))?
                .user
        }
        None => RawUser::default(),
    };

    let server = cluster
        .server
        .ok_or_else(|| ConfigError::MissingKey(format!("clusters[{}].cluster.server", context.cluster)))?;
    let server_url = Url::parse(&server).map_err(|e| ConfigError::Url {
        url: server.clone(),
        message: e.to_string(),
    })?;
    if !matches!(server_url.scheme(), "http" | "https") {
        return Err(ConfigError::Url {
            url: server,
            message: "scheme must be http or https".into(),
        });
    }

    let cluster_ca = inline_or_file(
        cluster.certificate_authority_data.as_deref(),
        cluster.certificate_authority.as_deref(),
        "certificate-authority-data",
        base_dir,
    )?;

    let auth = if let Some(token) = user.token {
        Auth::BearerToken(token)
    } else if let Some(file) = user.token_file {
        let bytes = read_relative(&file, base_dir)?;
        Auth::BearerToken(String::from_utf8_lossy(&bytes).trim().to_string())
    } else {
        let cert = inline_or_file(
            user.client_certificate_data.as_deref(),
            user.client_certificate.as_deref(),
            "client-certificate-data",
            base_dir,
        )?;
        let key = inline_or_file(
            user.client_key_data.as_deref(),
            user.client_key.as_deref(),
            "client-key-data",
            base_dir,
        )?;
        match (cert, key) {
            (Some(cert_pem), Some(key_pem)) => Auth::ClientCertificate { cert_pem, key_pem },
            (Some(_), None) => return Err(ConfigError::MissingKey("client-key-data".into())),
            (None, Some(_)) => return Err(ConfigError::MissingKey("client-certificate-data".into())),
            (None, None) => Auth::Anonymous,
        }
    };

    Ok(ClusterConfig {
        server_url,
        cluster_ca,
        auth,
        namespace: context.namespace.unwrap_or_else(|| "default".to_string()),
        insecure_skip_tls_verify: cluster.insecure_skip_tls_verify,
    })
}

fn inline_or_file(
    data: Option<&str>,
    file: Option<&str>,
    field: &str,
    base_dir: Option<&Path>,
) -> Result<Option<Vec<u8>>, ConfigError> {
    if let Some(data) = data {
        let compact: String = data.split_whitespace().collect();
        return base64::engine::general_purpose::STANDARD
            .decode(compact)
            .map(Some)
            .map_err(|e| ConfigError::Base64 {
                field: field.to_string(),
                message: e.to_string(),
            });
    }
    file.map(|f| read_relative(f, base_dir)).transpose()
}

fn read_relative(file: &str, base_dir: Option<&Path>) -> Result<Vec<u8>, ConfigError> {
    let path = Path::new(file);
    let path = match base_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    };
    std::fs::read(&path).map_err(|source| ConfigError::Io { path, source })
}
