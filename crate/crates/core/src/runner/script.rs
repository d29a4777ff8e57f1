//! Recognizer for the handful of top-level Python statements the runner
//! evaluates. Anything else is `Statement::Other` and has no effect.

use q8s_simkit::directive::DIRECTIVE_PREFIX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Directive,
    /// Fully rendered output, `end` included.
    Print { text: String, to_stderr: bool },
    Exit { code: i32, message: Option<String> },
    Raise { exception: String, message: Option<String> },
    Other,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Int(i64),
    Float(String),
    Const(&'static str),
    Stderr,
    Stdout,
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => f.clone(),
            Value::Const(c) => (*c).to_string(),
            Value::Stderr => "<_io.TextIOWrapper name='<stderr>'>".to_string(),
            Value::Stdout => "<_io.TextIOWrapper name='<stdout>'>".to_string(),
        }
    }
}

pub fn parse_statement(line: &str) -> Statement {
    if line.trim_start().starts_with(DIRECTIVE_PREFIX) {
        return Statement::Directive;
    }
    if line.starts_with(|c: char| c.is_whitespace()) {
        return Statement::Other;
    }
    let code = strip_comment(line).trim_end();
    let code = code.strip_suffix(';').unwrap_or(code).trim_end();
    if let Some(args) = call_args(code, &["print"]) {
        return parse_print(args).unwrap_or(Statement::Other);
    }
    if let Some(args) = call_args(code, &["sys.exit", "exit", "quit", "os._exit"]) {
        return parse_exit(args).unwrap_or(Statement::Other);
    }
    if let Some(rest) = code.strip_prefix("raise") {
        if rest.is_empty() || rest.starts_with(' ') {
            return parse_raise(rest.trim()).unwrap_or(Statement::Other);
        }
    }
    Statement::Other
}

fn call_args<'a>(code: &'a str, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|name| {
        code.strip_prefix(name)?
            .trim_start()
            .strip_prefix('(')?
            .strip_suffix(')')
    })
}

fn parse_print(args: &str) -> Option<Statement> {
    let (mut sep, mut end, mut to_stderr) = (" ".to_string(), "\n".to_string(), false);
    let mut parts = Vec::new();
    for arg in split_args(args)? {
        match arg.split_once('=') {
            Some((key, value)) if is_ident(key.trim()) => {
                let value = parse_value(value.trim())?;
                match (key.trim(), value) {
                    ("sep", Value::Str(s)) => sep = s,
                    ("sep", Value::Const("None")) => {}
                    ("end", Value::Str(s)) => end = s,
                    ("end", Value::Const("None")) => {}
                    ("file", Value::Stderr) => to_stderr = true,
                    ("file", Value::Stdout) => {}
                    ("flush", _) => {}
                    _ => return None,
                }
            }
            _ => parts.push(parse_value(arg.trim())?.render()),
        }
    }
    let mut text = parts.join(&sep);
    text.push_str(&end);
    Some(Statement::Print { text, to_stderr })
}

fn parse_exit(args: &str) -> Option<Statement> {
    let args = split_args(args)?;
    match args.as_slice() {
        [] => Some(Statement::Exit {
            code: 0,
            message: None,
        }),
        [arg] => Some(exit_with(parse_value(arg.trim())?)),
        _ => None,
    }
}

fn exit_with(value: Value) -> Statement {
    match value {
        Value::Int(i) => Statement::Exit {
            code: i as i32,
            message: None,
        },
        Value::Const("None") => Statement::Exit {
            code: 0,
            message: None,
        },
        other => Statement::Exit {
            code: 1,
            message: Some(other.render()),
        },
    }
}

fn parse_raise(expr: &str) -> Option<Statement> {
    if expr.is_empty() {
        return Some(Statement::Raise {
            exception: "RuntimeError".to_string(),
            message: Some("No active exception to reraise".to_string()),
        });
    }
    let (name, args) = match expr.find('(') {
        Some(open) => (expr[..open].trim(), Some(expr[open + 1..].strip_suffix(')')?)),
        None => (expr, None),
    };
    if !name.split('.').all(is_ident) {
        return None;
    }
    let values = match args {
        Some(a) => split_args(a)?
            .into_iter()
            .map(|s| parse_value(s.trim()))
            .collect::<Option<Vec<_>>>()?,
        None => Vec::new(),
    };
    if name == "SystemExit" {
        return Some(match values.into_iter().next() {
            Some(v) => exit_with(v),
            None => Statement::Exit {
                code: 0,
                message: None,
            },
        });
    }
    let message = match values.as_slice() {
        [] => None,
        [v] => Some(v.render()),
        many => Some(format!(
            "({})",
            many.iter().map(repr).collect::<Vec<_>>().join(", ")
        )),
    };
    Some(Statement::Raise {
        exception: name.to_string(),
        message,
    })
}

fn repr(v: &Value) -> String {
    match v {
        Value::Str(s) => format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")),
        other => other.render(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_value(s: &str) -> Option<Value> {
    match s {
        "True" => return Some(Value::Const("True")),
        "False" => return Some(Value::Const("False")),
        "None" => return Some(Value::Const("None")),
        "sys.stderr" => return Some(Value::Stderr),
        "sys.stdout" => return Some(Value::Stdout),
        _ => {}
    }
    if let Some(q) = s.chars().next().filter(|c| *c == '"' || *c == '\'') {
        return parse_string(s, q).map(Value::Str);
    }
    if let Ok(i) = s.parse::<i64>() {
        return Some(Value::Int(i));
    }
    if s.chars().all(|c| c.is_ascii_digit() || "+-.eE".contains(c)) {
        if let Ok(f) = s.parse::<f64>() {
            return Some(Value::Float(python_float(f)));
        }
    }
    None
}

fn python_float(f: f64) -> String {
    let text = format!("{f:?}");
    if text.contains('e') {
        text.replace("e", "e+").replace("e+-", "e-")
    } else {
        text
    }
}

/// Single-line quoted literal with the common backslash escapes.
fn parse_string(s: &str, quote: char) -> Option<String> {
    let inner = s.strip_prefix(quote)?.strip_suffix(quote)?;
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next()? {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                '\\' => out.push('\\'),
                '\'' => out.push('\''),
                '"' => out.push('"'),
                other => {
                    out.push('\\');
                    out.push(other);
                }
            },
            c if c == quote => return None,
            c => out.push(c),
        }
    }
    Some(out)
}

/// Splits on top-level commas outside string literals. `None` on
/// unbalanced quotes or brackets.
fn split_args(args: &str) -> Option<Vec<&str>> {
    let mut parts = Vec::new();
    let (mut depth, mut quote, mut escaped, mut start) = (0i32, None, false, 0);
    for (i, c) in args.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&args[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return None;
        }
    }
    if quote.is_some() || depth != 0 {
        return None;
    }
    let last = &args[start..];
    // A trailing comma leaves an empty tail, which is dropped.
    if !last.trim().is_empty() {
        parts.push(last);
    }
    if parts.iter().any(|p| p.trim().is_empty()) {
        return None;
    }
    Some(parts)
}

fn strip_comment(line: &str) -> &str {
    let mut quote = None;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None if c == '#' => return &line[..i],
            None if c == '"' || c == '\'' => quote = Some(c),
            None => {}
        }
    }
    line
}
