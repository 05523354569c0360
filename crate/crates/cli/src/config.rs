//! Plain-text `key = value` configuration files.
//!
//! Each entry becomes a `--key value` flag inserted right after the
//! subcommand name, ahead of the flags given on the command line, so explicit
//! flags take precedence. Underscores in keys are read as dashes. Keys that
//! the chosen subcommand does not accept are skipped; keys that no
//! subcommand accepts are an error.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::Command;

#[derive(Debug)]
pub struct ConfigError(pub String);

pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError(format!("line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn accepts(cmd: &Command, key: &str) -> bool {
    cmd.get_arguments().any(|a| a.get_long() == Some(key))
}

/// Rewrites `args` with the entries of the `--config` file, if one is given.
pub fn expand_args(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| {
        ConfigError(format!(
            "cannot read config {}: {e}",
            path.to_string_lossy()
        ))
    })?;
    let entries = parse_entries(&text)?;

    let Some((pos, sub)) = args
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a.to_str()?).map(|s| (i, s)))
    else {
        return Ok(args);
    };

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        if accepts(sub, &key) || accepts(cmd, &key) {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else if !cmd.get_subcommands().any(|s| accepts(s, &key)) {
            return Err(ConfigError(format!("unknown config key {key:?}")));
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, Command};

    fn cmd() -> Command {
        Command::new("t")
            .args_override_self(true)
            .arg(Arg::new("seed").long("seed").global(true))
            .arg(Arg::new("config").long("config").global(true))
            .subcommand(Command::new("a").arg(Arg::new("learning-rate").long("learning-rate")))
            .subcommand(Command::new("b").arg(Arg::new("ratio").long("ratio")))
    }

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_entries() {
        let e = parse_entries("# c\nlearning_rate = 0.1\n\nseed=3\n").unwrap();
        assert_eq!(
            e,
            vec![
                ("learning-rate".to_string(), "0.1".to_string()),
                ("seed".to_string(), "3".to_string())
            ]
        );
        assert!(parse_entries("novalue\n").is_err());
    }

    #[test]
    fn injects_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "learning_rate = 0.5\nratio = 2\nseed = 7\n").unwrap();
        let p = path.to_str().unwrap();
        let out = expand_args(&cmd(), os(&["t", "--config", p, "a", "--seed", "1"])).unwrap();
        assert_eq!(
            out,
            os(&[
                "t",
                "--config",
                p,
                "a",
                "--learning-rate",
                "0.5",
                "--seed",
                "7",
                "--seed",
                "1"
            ])
        );
        let m = cmd().try_get_matches_from(out).unwrap();
        let (_, sub) = m.subcommand().unwrap();
        assert_eq!(sub.get_one::<String>("seed").unwrap(), "1");
        assert_eq!(sub.get_one::<String>("learning-rate").unwrap(), "0.5");
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "bogus = 1\n").unwrap();
        let p = path.to_str().unwrap();
        assert!(expand_args(&cmd(), os(&["t", "--config", p, "a"])).is_err());
    }
}
