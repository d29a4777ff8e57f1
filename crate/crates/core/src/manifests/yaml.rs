//! Fixed-layout YAML emitter for the two resource kinds, and a serde-based
//! parser that accepts any YAML or JSON document of the same shape.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

use super::{ConfigMapManifest, JobManifest, Manifest, ManifestError, ResourceLimit};

impl JobManifest {
    pub fn to_yaml(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "apiVersion: batch/v1");
        let _ = writeln!(w, "kind: Job");
        let _ = writeln!(w, "metadata:");
        let _ = writeln!(w, "  name: {}", quote_double(&self.name));
        let _ = writeln!(w, "spec:");
        let _ = writeln!(w, "  template:");
        let _ = writeln!(w, "    metadata:");
        let _ = writeln!(w, "      name: {}", quote_double(&self.pod_name));
        let _ = writeln!(w, "    spec:");
        let _ = writeln!(w, "      containers:");
        let _ = writeln!(w, "        - name: {}", quote_double(&self.container_name));
        let _ = writeln!(w, "          image: {}", plain_or_double(&self.image));
        let command: Vec<String> = self.command.iter().map(|a| quote_double(a)).collect();
        let _ = writeln!(w, "          command: [{}]", command.join(", "));
        if let Some(limit) = &self.limit {
            let _ = writeln!(w, "          resources:");
            let _ = writeln!(w, "            limits:");
            let _ = writeln!(
                w,
                "              {}: {}",
                plain_or_double(&limit.key),
                quote_single(&limit.quantity)
            );
        }
        let _ = writeln!(w, "          volumeMounts:");
        let _ = writeln!(w, "          - name: {}", plain_or_double(&self.volume_name));
        let _ = writeln!(w, "            mountPath: {}", plain_or_double(&self.mount_path));
        let _ = writeln!(w, "      volumes:");
        let _ = writeln!(w, "        - name: {}", plain_or_double(&self.volume_name));
        let _ = writeln!(w, "          configMap:");
        let _ = writeln!(w, "            name: {}", plain_or_double(&self.configmap_name));
        let _ = writeln!(w, "      restartPolicy: {}", plain_or_double(&self.restart_policy));
        out
    }

    pub fn from_yaml(text: &str) -> Result<Self, ManifestError> {
        let raw: RawJob = from_text(text)?;
        expect_kind(&raw.api_version, &raw.kind, "batch/v1", "Job")?;
        let pod = raw.spec.template.spec;
        let [container]: [RawContainer; 1] = pod
            .containers
            .try_into()
            .map_err(|_| ManifestError::Shape("expected exactly one container".into()))?;
        let [mount]: [RawMount; 1] = container
            .volume_mounts
            .try_into()
            .map_err(|_| ManifestError::Shape("expected exactly one volume mount".into()))?;
        let volume = pod
            .volumes
            .into_iter()
            .find(|v| v.name == mount.name)
            .ok_or_else(|| ManifestError::Shape(format!("no volume named {:?}", mount.name)))?;
        let configmap = volume
            .config_map
            .ok_or_else(|| ManifestError::Shape("mounted volume is not a configMap".into()))?;
        let limits = container.resources.and_then(|r| r.limits).unwrap_or_default();
        if limits.len() > 1 {
            return Err(ManifestError::Shape("expected at most one resource limit".into()));
        }
        let limit = limits
            .into_iter()
            .next()
            .map(|(key, qty)| -> Result<ResourceLimit, ManifestError> {
                Ok(ResourceLimit {
                    key,
                    quantity: scalar_text(qty)?,
                })
            })
            .transpose()?;
        Ok(JobManifest {
            name: raw.metadata.name,
            pod_name: raw.spec.template.metadata.map(|m| m.name).unwrap_or_default(),
            container_name: container.name,
            image: container.image,
            command: container.command,
            limit,
            volume_name: volume.name,
            configmap_name: configmap.name,
            mount_path: mount.mount_path,
            restart_policy: pod.restart_policy,
        })
    }
}

impl ConfigMapManifest {
    pub fn to_yaml(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "apiVersion: v1");
        let _ = writeln!(w, "kind: ConfigMap");
        let _ = writeln!(w, "metadata:");
        let _ = writeln!(w, "  name: {}", quote_double(&self.name));
        if self.data.is_empty() {
            let _ = writeln!(w, "data: {{}}");
        } else {
            let _ = writeln!(w, "data:");
            for (k, v) in &self.data {
                let _ = writeln!(w, "  {}: {}", plain_or_double(k), quote_double(v));
            }
        }
        out
    }

    pub fn from_yaml(text: &str) -> Result<Self, ManifestError> {
        let raw: RawConfigMap = from_text(text)?;
        expect_kind(&raw.api_version, &raw.kind, "v1", "ConfigMap")?;
        Ok(ConfigMapManifest {
            name: raw.metadata.name,
            data: raw.data.unwrap_or_default(),
        })
    }
}

impl Manifest {
    pub fn to_yaml(&self) -> String {
        match self {
            Manifest::Job(j) => j.to_yaml(),
            Manifest::ConfigMap(c) => c.to_yaml(),
        }
    }

    /// Parses either resource kind, dispatching on `kind`.
    pub fn from_yaml(text: &str) -> Result<Self, ManifestError> {
        let head: RawHead = from_text(text)?;
        match head.kind.as_str() {
            "Job" => JobManifest::from_yaml(text).map(Manifest::Job),
            "ConfigMap" => ConfigMapManifest::from_yaml(text).map(Manifest::ConfigMap),
            other => Err(ManifestError::Shape(format!("unsupported kind {other:?}"))),
        }
    }
}

fn from_text<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ManifestError> {
    serde_yaml::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))
}

fn expect_kind(
    api_version: &str,
    kind: &str,
    want_version: &str,
    want_kind: &str,
) -> Result<(), ManifestError> {
    if api_version == want_version && kind == want_kind {
        Ok(())
    } else {
        Err(ManifestError::Shape(format!(
            "expected {want_version} {want_kind}, got {api_version} {kind}"
        )))
    }
}

fn scalar_text(v: serde_yaml::Value) -> Result<String, ManifestError> {
    match v {
        serde_yaml::Value::String(s) => Ok(s),
        serde_yaml::Value::Number(n) => Ok(n.to_string()),
        other => Err(ManifestError::Shape(format!("quantity must be a scalar, got {other:?}"))),
    }
}

/// YAML double-quoted scalar. Everything YAML treats as non-printable or as
/// a line break is escaped, so the value survives a parse unchanged.
pub fn quote_double(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if needs_escape(c) => {
                let cp = c as u32;
                if cp <= 0xFFFF {
                    let _ = write!(out, "\\u{cp:04X}");
                } else {
                    let _ = write!(out, "\\U{cp:08X}");
                }
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn needs_escape(c: char) -> bool {
    let cp = c as u32;
    c.is_control()
        || matches!(cp, 0x2028 | 0x2029 | 0xFEFF | 0xFFFE | 0xFFFF)
        || (0xD800..=0xDFFF).contains(&cp)
}

fn quote_single(s: &str) -> String {
    if s.chars().any(needs_escape) || s.contains('\n') {
        return quote_double(s);
    }
    format!("'{}'", s.replace('\'', "''"))
}

/// Bare when the string is unambiguous as a plain scalar, double-quoted
/// otherwise.
fn plain_or_double(s: &str) -> String {
    let safe_chars = s
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || "._/:@-".contains(c));
    let starts_well = s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '/');
    let reserved = matches!(
        s.to_ascii_lowercase().as_str(),
        "true" | "false" | "yes" | "no" | "on" | "off" | "null" | "y" | "n"
    );
    if safe_chars && starts_well && !reserved && !s.ends_with(':') && !s.contains("::") {
        s.to_string()
    } else {
        quote_double(s)
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawHead {
    kind: String,
}

#[derive(Deserialize)]
struct RawMeta {
    name: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawConfigMap {
    api_version: String,
    kind: String,
    metadata: RawMeta,
    data: Option<BTreeMap<String, String>>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawJob {
    api_version: String,
    kind: String,
    metadata: RawMeta,
    spec: RawJobSpec,
}

#[derive(Deserialize)]
struct RawJobSpec {
    template: RawTemplate,
}

#[derive(Deserialize)]
struct RawTemplate {
    metadata: Option<RawMeta>,
    spec: RawPodSpec,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawPodSpec {
    containers: Vec<RawContainer>,
    #[serde(default)]
    volumes: Vec<RawVolume>,
    restart_policy: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawContainer {
    name: String,
    image: String,
    #[serde(default)]
    command: Vec<String>,
    resources: Option<RawResources>,
    #[serde(default)]
    volume_mounts: Vec<RawMount>,
}

#[derive(Deserialize)]
struct RawResources {
    limits: Option<BTreeMap<String, serde_yaml::Value>>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawMount {
    name: String,
    mount_path: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawVolume {
    name: String,
    config_map: Option<RawConfigMapRef>,
}

#[derive(Deserialize)]
struct RawConfigMapRef {
    name: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_rules() {
        assert_eq!(quote_double("a\"b\\c\nd"), r#""a\"b\\c\nd""#);
        assert_eq!(quote_double("\u{85}\u{2028}"), r#""\u0085\u2028""#);
        assert_eq!(plain_or_double("registry.com/user/job-dependencies:v1"), "registry.com/user/job-dependencies:v1");
        assert_eq!(plain_or_double("true"), "\"true\"");
        assert_eq!(plain_or_double("123"), "\"123\"");
        assert_eq!(plain_or_double("a: b"), "\"a: b\"");
        assert_eq!(plain_or_double("img:"), "\"img:\"");
        assert_eq!(quote_single("it's"), "'it''s'");
    }

    #[test]
    fn accepts_json_documents() {
        let json = r#"{"apiVersion":"v1","kind":"ConfigMap","metadata":{"name":"x"},"data":{"main.py":"print(1)"}}"#;
        let cm = ConfigMapManifest::from_yaml(json).unwrap();
        assert_eq!(cm.source(), Some("print(1)"));
    }

    #[test]
    fn unquoted_quantity_is_read_as_text() {
        let doc = JobManifest {
            name: "a".into(),
            pod_name: "a-pod".into(),
            container_name: "c".into(),
            image: "img".into(),
            command: vec![],
            limit: None,
            volume_name: "v".into(),
            configmap_name: "a".into(),
            mount_path: "/app".into(),
            restart_policy: "Never".into(),
        }
        .to_yaml()
        .replace("          volumeMounts:", "          resources:\n            limits:\n              nvidia.com/gpu: 1\n          volumeMounts:");
        let job = JobManifest::from_yaml(&doc).unwrap();
        assert_eq!(job.limit.unwrap().quantity, "1");
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let cm = ConfigMapManifest {
            name: "x".into(),
            data: BTreeMap::new(),
        };
        assert!(matches!(
            JobManifest::from_yaml(&cm.to_yaml()),
            Err(ManifestError::Parse(_) | ManifestError::Shape(_))
        ));
        assert!(Manifest::from_yaml("kind: Pod\n").is_err());
        assert!(Manifest::from_yaml(": : :").is_err());
    }
}
