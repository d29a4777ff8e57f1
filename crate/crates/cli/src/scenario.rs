//! `--scenario` and `--qubits` syntax for `q8s bench`.

use std::path::PathBuf;

use q8s_core::fakecluster::NodeSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    Local,
    Fake(NodeSpec),
    /// Real cluster; kubeconfig from the flag/env chain when `None`.
    Cluster(Option<PathBuf>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub label: String,
    pub kind: ScenarioKind,
}

/// Parses `[label=]local`, `[label=]fake:<profile>[:k=v...]` or
/// `[label=]cluster[:<kubeconfig>]`. The label defaults to the whole argument.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, String> {
    let head = text.split(':').next().unwrap_or_default();
    let (label, body) = match head.split_once('=') {
        Some((label, _)) => (label.to_string(), &text[label.len() + 1..]),
        None => (text.to_string(), text),
    };
    if label.is_empty() {
        return Err(format!("scenario {text:?} has an empty label"));
    }
    let (kind, rest) = body.split_once(':').map_or((body, None), |(k, r)| (k, Some(r)));
    let kind = match (kind, rest) {
        ("local", None) => ScenarioKind::Local,
        ("fake", Some(profile)) => ScenarioKind::Fake(profile.parse().map_err(|e| format!("scenario {text:?}: {e}"))?),
        ("fake", None) => ScenarioKind::Fake(NodeSpec::workstation()),
        ("cluster", path) => ScenarioKind::Cluster(path.filter(|p| !p.is_empty()).map(PathBuf::from)),
        _ => {
            return Err(format!(
                "unknown scenario {text:?}, expected local, fake:<profile> or cluster[:<kubeconfig>]"
            ))
        }
    };
    Ok(ScenarioSpec { label, kind })
}

/// `A..B`, inclusive, with A ≤ B.
pub fn parse_qubit_range(text: &str) -> Result<(usize, usize), String> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| format!("qubit range {text:?} must look like A..B"))?;
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| format!("qubit range {text:?}: {s:?} is not a non-negative integer"))
    };
    let (a, b) = (num(a)?, num(b)?);
    if a == 0 || a > b {
        return Err(format!("qubit range {a}..{b} is empty or starts at 0"));
    }
    Ok((a, b))
}
