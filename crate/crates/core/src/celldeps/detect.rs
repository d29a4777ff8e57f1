use std::collections::{BTreeMap, BTreeSet};

use super::stdlib::PYTHON_STDLIB;

/// Pins from module names to requirement lines, plus the modules that ship
/// with the interpreter and never need installing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyTable {
    pub mapping: BTreeMap<String, String>,
    pub builtins: BTreeSet<String>,
}

impl DependencyTable {
    pub fn new(
        mapping: impl IntoIterator<Item = (String, String)>,
        builtins: impl IntoIterator<Item = String>,
    ) -> Self {
        Self {
            mapping: mapping.into_iter().collect(),
            builtins: builtins.into_iter().collect(),
        }
    }

    /// The requirement line for `module`: the pinned entry, or the bare
    /// module name when the table has none.
    pub fn requirement_for(&self, module: &str) -> String {
        self.mapping
            .get(module)
            .cloned()
            .unwrap_or_else(|| module.to_string())
    }

    /// Reverse lookup of a requirement line back to its module name.
    fn module_for(&self, requirement: &str) -> String {
        self.mapping
            .iter()
            .find(|(_, req)| req.as_str() == requirement)
            .map(|(m, _)| m.clone())
            .unwrap_or_else(|| {
                let end = requirement
                    .find(|c: char| "=<>!~;[ ".contains(c))
                    .unwrap_or(requirement.len());
                requirement[..end].to_string()
            })
    }
}

impl Default for DependencyTable {
    /// Versions used on every evaluation machine: qiskit 1.0.0 and
    /// qiskit-aer 0.13.3.
    fn default() -> Self {
        Self::new(
            [
                ("qiskit".to_string(), "qiskit==1.0.0".to_string()),
                ("qiskit_aer".to_string(), "qiskit-aer==0.13.3".to_string()),
            ],
            PYTHON_STDLIB.iter().map(|s| s.to_string()),
        )
    }
}

/// Sorted `(module, requirement)` pairs without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DependencySet {
    entries: BTreeMap<String, String>,
}

impl DependencySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, module: impl Into<String>, requirement: impl Into<String>) {
        self.entries.insert(module.into(), requirement.into());
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(m, r)| (m.as_str(), r.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One requirement per line, each terminated by `\n`, in module order.
    pub fn requirements_text(&self) -> String {
        self.entries.values().map(|r| format!("{r}\n")).collect()
    }

    /// Inverse of [`DependencySet::requirements_text`] under `table`.
    pub fn parse_requirements(text: &str, table: &DependencyTable) -> Self {
        let mut set = Self::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            set.insert(table.module_for(line), line);
        }
        set
    }
}

impl<M: Into<String>, R: Into<String>> FromIterator<(M, R)> for DependencySet {
    fn from_iter<I: IntoIterator<Item = (M, R)>>(iter: I) -> Self {
        let mut set = Self::new();
        for (m, r) in iter {
            set.insert(m, r);
        }
        set
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Detection {
    pub dependencies: DependencySet,
    /// Import-looking lines that could not be understood, with line numbers.
    pub warnings: Vec<String>,
}

/// Scans `source` for `import X`, `import X as Y, Z` and `from X import ...`
/// statements at any indentation and maps their root modules through
/// `table`. Relative imports and builtin modules are dropped.
///
/// Dynamic imports (`__import__`, `importlib`) are not seen.
pub fn detect_dependencies(source: &str, table: &DependencyTable) -> Detection {
    let mut detection = Detection::default();
    for (lineno, raw) in source.lines().enumerate() {
        let code = raw.split('#').next().unwrap_or("");
        for stmt in code.split(';').map(str::trim) {
            match parse_import(stmt) {
                Ok(modules) => {
                    for module in modules {
                        if !table.builtins.contains(&module) {
                            let req = table.requirement_for(&module);
                            detection.dependencies.insert(module, req);
                        }
                    }
                }
                Err(()) => detection
                    .warnings
                    .push(format!("line {}: cannot parse import {stmt:?}", lineno + 1)),
            }
        }
    }
    detection
}

/// Root module names imported by one statement. `Ok(vec![])` for anything
/// that is not an import statement or is a relative import.
fn parse_import(stmt: &str) -> Result<Vec<String>, ()> {
    if let Some(rest) = keyword_rest(stmt, "import") {
        let mut roots = Vec::new();
        for part in rest.split(',') {
            let mut words = part.split_whitespace();
            let dotted = words.next().ok_or(())?;
            match (words.next(), words.next(), words.next()) {
                (None, _, _) => {}
                (Some("as"), Some(alias), None) if is_identifier(alias) => {}
                _ => return Err(()),
            }
            roots.push(root_module(dotted)?);
        }
        return Ok(roots);
    }
    if let Some(rest) = keyword_rest(stmt, "from") {
        let mut words = rest.split_whitespace();
        let dotted = words.next().ok_or(())?;
        if words.next() != Some("import") || words.next().is_none() {
            return Err(());
        }
        if dotted.starts_with('.') {
            return Ok(vec![]);
        }
        return Ok(vec![root_module(dotted)?]);
    }
    Ok(vec![])
}

fn keyword_rest<'a>(stmt: &'a str, keyword: &str) -> Option<&'a str> {
    let rest = stmt.strip_prefix(keyword)?;
    if rest.is_empty() {
        return Some(rest);
    }
    rest.starts_with(char::is_whitespace).then_some(rest)
}

fn root_module(dotted: &str) -> Result<String, ()> {
    let mut parts = dotted.split('.');
    let root = parts.next().ok_or(())?;
    if !is_identifier(root) || !parts.all(is_identifier) {
        return Err(());
    }
    Ok(root.to_string())
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_alphabetic())
        && chars.all(|c| c == '_' || c.is_alphanumeric())
}
