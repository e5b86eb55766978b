//! Flat `key=value` config files, spliced into the argument list ahead of
//! the command-line flags so that explicit flags win.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Turns config lines into `--key value` pairs. Blank lines and `#` comments
/// are skipped; `key=true` becomes a bare flag and `key=false` is dropped.
pub fn config_args(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got '{line}'", i + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => {
                out.push(format!("--{key}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Removes `--config <path>` from `argv` and inserts the file's flags right
/// after the subcommand.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let extra = config_args(&text).with_context(|| format!("in config {path}"))?;
    // argv[0] is the program, argv[1] the subcommand
    let at = rest.len().min(2);
    rest.splice(at..at, extra);
    Ok(rest)
}
