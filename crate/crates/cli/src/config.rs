//! JSON config merging. Each subcommand's section is turned into flag tokens
//! placed right after the subcommand name, ahead of the user's own flags, so
//! with self-overriding arguments an explicit flag always wins.

use std::ffi::OsString;
use std::path::PathBuf;

use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Path given to `--config`, if any (before a `--` terminator).
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(rest));
        }
    }
    None
}

/// Index of the first token naming a subcommand, skipping the config value.
fn subcommand_index(args: &[OsString], names: &[String]) -> Option<usize> {
    let mut skip_next = false;
    for (i, a) in args.iter().enumerate().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        let s = a.to_string_lossy();
        if s == "--config" {
            skip_next = true;
        } else if names.iter().any(|n| *n == s) {
            return Some(i);
        }
    }
    None
}

/// Flag tokens for one section. Keys are long flag names (underscores are
/// accepted for dashes); `true` emits a bare switch, `false` and `null` emit
/// nothing, arrays become comma-separated values.
pub fn section_tokens(section: &Map<String, Value>) -> CliResult<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| -> CliResult<String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(CliError::usage(format!("config key {key:?}: unsupported value {v}"))),
            }
        };
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<CliResult<Vec<_>>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            v => {
                out.push(flag.into());
                out.push(scalar(v)?.into());
            }
        }
    }
    Ok(out)
}

/// Returns `args` with the config section of the invoked subcommand spliced in.
pub fn merge(args: Vec<OsString>, subcommands: &[String]) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let bytes = std::fs::read(&path)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(sections) = doc else {
        return Err(CliError::usage(format!("config {}: top level must be an object", path.display())));
    };
    for key in sections.keys() {
        if !subcommands.iter().any(|n| n == key) {
            return Err(CliError::usage(format!(
                "config {}: unknown section {key:?} (expected one of {})",
                path.display(),
                subcommands.join(", ")
            )));
        }
    }
    let Some(at) = subcommand_index(&args, subcommands) else {
        return Ok(args);
    };
    let name = args[at].to_string_lossy().into_owned();
    let tokens = match sections.get(&name) {
        None => return Ok(args),
        Some(Value::Object(section)) => section_tokens(section)?,
        Some(_) => {
            return Err(CliError::usage(format!(
                "config {}: section {name:?} must be an object",
                path.display()
            )))
        }
    };
    let mut merged = args[..=at].to_vec();
    merged.extend(tokens);
    merged.extend_from_slice(&args[at + 1..]);
    Ok(merged)
}
