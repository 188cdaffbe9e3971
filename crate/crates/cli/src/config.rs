//! `--config FILE`: a JSON object whose keys are long flag names. Its values
//! are spliced into the argument list right after the subcommand, so any
//! flag repeated on the command line overrides the file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::Value;

use crate::args::SUBCOMMANDS;

/// Returns `args` with the config file's flags inserted, or unchanged when
/// no `--config` is present.
pub fn expand(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = find_config(&args) else {
        return Ok(args);
    };
    let Some(at) = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
    else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let tokens = to_tokens(&text).with_context(|| format!("config {}", path.display()))?;
    let mut out = args;
    out.splice(at + 1..at + 1, tokens);
    Ok(out)
}

fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_str()?;
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(Path::new(p).to_path_buf());
        }
    }
    None
}

fn to_tokens(text: &str) -> anyhow::Result<Vec<OsString>> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(map) = value else {
        bail!("expected a JSON object of flag values");
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            continue;
        }
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Number(n) => {
                out.push(flag.into());
                out.push(n.to_string().into());
            }
            Value::String(s) => {
                out.push(flag.into());
                out.push(s.into());
            }
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => Ok(s.clone()),
                        Value::Number(n) => Ok(n.to_string()),
                        other => bail!("unsupported list item {other} for {key}"),
                    })
                    .collect::<anyhow::Result<_>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            Value::Object(_) => bail!("nested objects are not flag values ({key})"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[OsString]) -> Vec<&str> {
        v.iter().map(|s| s.to_str().unwrap()).collect()
    }

    #[test]
    fn json_values_become_flags() {
        let toks = to_tokens(r#"{"rank": 5, "deterministic": true, "no_x": false, "users": [1, 2], "out": "d"}"#)
            .unwrap();
        assert_eq!(
            strs(&toks),
            ["--deterministic", "--out", "d", "--rank", "5", "--users", "1,2"]
        );
        assert!(to_tokens("[1]").is_err());
        assert!(to_tokens(r#"{"a": {"b": 1}}"#).is_err());
    }

    #[test]
    fn config_flag_is_located() {
        let a: Vec<OsString> = ["nutf", "fit", "--config=c.json"].iter().map(Into::into).collect();
        assert_eq!(find_config(&a), Some(PathBuf::from("c.json")));
        let b: Vec<OsString> = ["nutf", "--config", "x", "fit"].iter().map(Into::into).collect();
        assert_eq!(find_config(&b), Some(PathBuf::from("x")));
        let c: Vec<OsString> = ["nutf", "fit"].iter().map(Into::into).collect();
        assert_eq!(find_config(&c), None);
    }
}
