//! Config files: a TOML table whose keys are long flag names of the invoked
//! subcommand (`batch-size = 16`, `no-skip = true`, `eps = [0.1, 0.05]`).
//! Keys are turned into flags and spliced in after the subcommand name unless
//! the same flag was given on the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;

fn scalar(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        _ => bail!("config key `{key}` must be a string, number or boolean"),
    })
}

/// Flags equivalent to the entries of a config table.
pub fn config_flags(table: &toml::Table) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (key, value) in table {
        if key == "config" {
            bail!("config files cannot include other config files");
        }
        let flag = format!("--{key}");
        let args = match value {
            toml::Value::Boolean(true) => vec![flag.clone()],
            toml::Value::Boolean(false) => continue,
            toml::Value::Array(items) => {
                let parts = items.iter().map(|v| scalar(key, v)).collect::<Result<Vec<_>>>()?;
                vec![flag.clone(), parts.join(",")]
            }
            other => vec![flag.clone(), scalar(key, other)?],
        };
        out.push((flag, args));
    }
    Ok(out)
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<toml::Table>()
        .with_context(|| format!("parsing config {}", path.display()))
}

/// Parses `args`, then re-parses with the config file's flags merged in when
/// one is named.
pub fn parse_with_config<C: Parser>(args: &[String], config_of: impl Fn(&C) -> Option<PathBuf>) -> Result<C> {
    let first = C::parse_from(args);
    let Some(path) = config_of(&first) else {
        return Ok(first);
    };
    let table = read_table(&path)?;
    let command = C::command();
    let names: Vec<&str> = command.get_subcommands().map(|s| s.get_name()).collect();
    let at = args
        .iter()
        .skip(1)
        .position(|a| names.contains(&a.as_str()))
        .map(|i| i + 2)
        .context("no subcommand given")?;
    let given = |flag: &str| {
        args.iter()
            .any(|a| a == flag || a.strip_prefix(flag).is_some_and(|rest| rest.starts_with('=')))
    };
    let mut merged: Vec<String> = args[..at].to_vec();
    for (flag, extra) in config_flags(&table)? {
        if !given(&flag) {
            merged.extend(extra);
        }
    }
    merged.extend_from_slice(&args[at..]);
    C::try_parse_from(&merged).map_err(|e| {
        anyhow::anyhow!("{}", e.to_string().trim()).context(format!("invalid config {}", path.display()))
    })
}
