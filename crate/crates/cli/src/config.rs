//! `--config <file.json>` support.
//!
//! The file holds a flat JSON object whose keys are long flag names
//! (`epoch_size` or `epoch-size`). Each key not already given on the command
//! line is appended to argv, so explicit flags always win.

use std::collections::HashSet;

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Flags that spell the same option.
const ALIASES: &[(&str, &str)] = &[("count", "epoch-size")];

fn canonical(flag: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == flag).map_or(flag, |(_, c)| c)
}

/// Locate `--config PATH` or `--config=PATH` in `argv`.
fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

pub fn merge(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
    let Value::Object(map) = value else {
        bail!("config {path} must hold a JSON object");
    };
    let given: HashSet<String> = argv
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| canonical(a.split('=').next().unwrap_or(a)).to_string())
        .collect();
    let mut out = argv;
    for (key, v) in map {
        let flag = key.replace('_', "-");
        if flag == "config" || given.contains(canonical(&flag)) {
            continue;
        }
        let values: Vec<&Value> = match &v {
            Value::Array(items) => items.iter().collect(),
            other => vec![other],
        };
        for item in values {
            match item {
                Value::Bool(true) => out.push(format!("--{flag}")),
                Value::Bool(false) | Value::Null => {}
                Value::String(s) => out.extend([format!("--{flag}"), s.clone()]),
                Value::Number(n) => out.extend([format!("--{flag}"), n.to_string()]),
                _ => bail!("config key {key:?}: nested values are not supported"),
            }
        }
    }
    Ok(out)
}
