//! Flat `key = value` config files: loading them as injected flags and
//! writing the effective flags of a run back out in the same form.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::binio::read_file;
use crate::error::{Error, Result};

/// `(key, value)` pairs in file order. Keys use dashes; underscores are
/// accepted and converted.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("bad key {:?}", k.trim()),
            });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    // a trailing comment needs whitespace before the hash
    match line.find(" #").or_else(|| line.find("\t#")) {
        Some(p) => &line[..p],
        None => line,
    }
}

fn config_path(args: &[OsString]) -> Result<Option<OsString>> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it
                .next()
                .cloned()
                .map(Some)
                .ok_or_else(|| Error::Input("--config needs a path".into()));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(p.into()));
        }
    }
    Ok(None)
}

fn given_flags(args: &[OsString]) -> HashSet<String> {
    args.iter()
        .filter_map(|a| {
            let s = a.to_str()?;
            let name = s.strip_prefix("--")?;
            Some(name.split('=').next().unwrap_or(name).to_string())
        })
        .collect()
}

/// Splice config-file entries in right after the subcommand name, skipping
/// any key the command line already sets. `true` becomes a bare switch and
/// `false` is dropped.
pub fn inject_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let path = Path::new(&path);
    if !path.is_file() {
        return Err(Error::Input(format!("config file not found: {}", path.display())));
    }
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "config is not UTF-8"))?;
    let entries = parse_config(&text).map_err(|e| e.context(format!("reading config {}", path.display())))?;
    let given = given_flags(&args);
    let Some(sub) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(args);
    };
    let at = sub + 2;
    let mut injected = Vec::new();
    for (k, v) in entries {
        if given.contains(&k) || k == "config" {
            continue;
        }
        match v.as_str() {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{k}={v}"))),
        }
    }
    let mut out = args[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

/// The effective flags of a command as a config file that reproduces it.
pub fn snapshot<T: Serialize>(command: &str, args: &T) -> Result<String> {
    let value = serde_json::to_value(args).map_err(|e| Error::Input(format!("cannot record configuration: {e}")))?;
    let Value::Object(map) = value else {
        return Err(Error::Input("command arguments are not a record".into()));
    };
    let mut s = format!("# hpdkit {command}\n");
    let mut line = |k: &str, v: &Value| match v {
        Value::Null | Value::Bool(false) => {}
        Value::String(x) => s.push_str(&format!("{} = {x}\n", k.replace('_', "-"))),
        other => s.push_str(&format!("{} = {other}\n", k.replace('_', "-"))),
    };
    for (k, v) in &map {
        match v {
            Value::Array(items) => items.iter().for_each(|x| line(k, x)),
            _ => line(k, v),
        }
    }
    Ok(s)
}
