//! `key = value` config files and the resolved-config echo.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, ArgMatches, Command};

/// Parse `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {raw:?}", i + 1);
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Splice the entries of any `--config FILE` into `args` right after the
/// subcommand name, so that flags given on the command line win.
pub fn expand_config_args(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let Some(sub) = args.iter().position(|a| a.to_str().is_some_and(|a| subcommands.contains(&a))) else {
        return Ok(args);
    };
    let mut path = None;
    let mut iter = args[sub + 1..].iter();
    while let Some(a) = iter.next() {
        match a.to_str() {
            Some("--config") => path = iter.next().map(PathBuf::from),
            Some(s) if s.starts_with("--config=") => path = Some(PathBuf::from(&s["--config=".len()..])),
            _ => {}
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let mut injected = Vec::new();
    for (key, value) in parse_config(&text)? {
        if key == "config" {
            continue;
        }
        match value.as_str() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{key}")));
                injected.push(OsString::from(value));
            }
        }
    }
    let mut out = args[..=sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

/// Every argument of `cmd` as resolved in `matches` (defaults included), as config text.
pub fn render_resolved(cmd: &Command, matches: &ArgMatches) -> String {
    let mut s = String::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(id, "config" | "help" | "threads") {
            continue;
        }
        let Some(long) = arg.get_long() else { continue };
        match arg.get_action() {
            ArgAction::SetTrue => {
                let _ = writeln!(s, "{long} = {}", matches.get_flag(id));
            }
            _ => {
                if let Some(values) = matches.get_raw(id) {
                    let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
                    let _ = writeln!(s, "{long} = {}", joined.join(","));
                }
            }
        }
    }
    s
}

/// `<output>.config` next to the primary output.
pub fn echo_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(".config");
    output.with_file_name(name)
}
