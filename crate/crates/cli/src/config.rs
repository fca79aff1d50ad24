//! `--config FILE`: `key = value` lines become `--key=value` flags placed
//! right after the subcommand, so flags given on the command line win.

use std::ffi::OsString;
use std::path::Path;

use crate::failure::{CliResult, Failure};

pub const SUBCOMMANDS: [&str; 5] = ["generate", "analyze", "cae", "teleport", "inspect"];

pub fn parse_config(text: &str) -> CliResult<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(Failure::usage(format!("config line {}: invalid key {key:?}", n + 1)));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.push(OsString::from(format!("--{key}={value}")));
    }
    Ok(out)
}

fn config_path(raw: &[OsString]) -> Option<OsString> {
    let mut it = raw.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(OsString::from(v));
        }
    }
    None
}

pub fn expand_args(raw: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&raw) else {
        return Ok(raw);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Failure::input(format!("config file {}: {e}", Path::new(&path).display())))?;
    let extra = parse_config(&text)?;
    let Some(pos) = raw
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(raw);
    };
    let mut out = raw[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&raw[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_become_flags() {
        let flags = parse_config("# run\nseed = 7\n\nmax_epochs=3\nprompt = \"a b\"\n").unwrap();
        assert_eq!(flags, vec!["--seed=7", "--max-epochs=3", "--prompt=a b"]);
        assert!(parse_config("nonsense").is_err());
    }
}
