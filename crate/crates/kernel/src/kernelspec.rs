use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const KERNEL_NAME: &str = "q8s";
pub const DISPLAY_NAME: &str = "Python Q8s kernel";
pub const CONNECTION_FILE_PLACEHOLDER: &str = "{connection_file}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub argv: Vec<String>,
    pub display_name: String,
    pub language: String,
    #[serde(default)]
    pub interrupt_mode: Option<String>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl KernelSpec {
    /// Launches `program kernel --connection-file {connection_file}` followed
    /// by `extra_args`.
    pub fn for_program(program: &Path, extra_args: &[String]) -> Self {
        let mut argv = vec![
            program.display().to_string(),
            "kernel".to_string(),
            "--connection-file".to_string(),
            CONNECTION_FILE_PLACEHOLDER.to_string(),
        ];
        argv.extend(extra_args.iter().cloned());
        Self {
            argv,
            display_name: DISPLAY_NAME.to_string(),
            language: "python".to_string(),
            interrupt_mode: Some("message".to_string()),
            metadata: serde_json::json!({ "debugger": false }),
        }
    }

    /// `argv` with the placeholder replaced.
    pub fn launch_argv(&self, connection_file: &Path) -> Vec<String> {
        let path = connection_file.display().to_string();
        self.argv
            .iter()
            .map(|a| a.replace(CONNECTION_FILE_PLACEHOLDER, &path))
            .collect()
    }
}

/// `$JUPYTER_DATA_DIR/kernels`, else the per-user data directory.
pub fn default_kernels_dir() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os("JUPYTER_DATA_DIR") {
        return Some(PathBuf::from(dir).join("kernels"));
    }
    let home = PathBuf::from(std::env::var_os("HOME")?);
    Some(if cfg!(target_os = "macos") {
        home.join("Library/Jupyter/kernels")
    } else {
        home.join(".local/share/jupyter/kernels")
    })
}

/// Writes `<kernels_dir>/q8s/kernel.json`, replacing any previous spec.
pub fn install_kernelspec(kernels_dir: &Path, spec: &KernelSpec) -> std::io::Result<PathBuf> {
    let dir = kernels_dir.join(KERNEL_NAME);
    std::fs::create_dir_all(&dir)?;
    let mut text = serde_json::to_string_pretty(spec).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(dir.join("kernel.json"), text)?;
    Ok(dir)
}

/// Names of the kernelspecs under `kernels_dir`, sorted.
pub fn list_kernelspecs(kernels_dir: &Path) -> std::io::Result<Vec<String>> {
    let mut names = Vec::new();
    let entries = match std::fs::read_dir(kernels_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(names),
        Err(e) => return Err(e),
    };
    for entry in entries {
        let entry = entry?;
        if entry.path().join("kernel.json").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

pub fn read_kernelspec(dir: &Path) -> std::io::Result<KernelSpec> {
    let text = std::fs::read_to_string(dir.join("kernel.json"))?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}
