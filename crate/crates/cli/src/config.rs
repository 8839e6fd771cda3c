//! Flat `key = value` configuration files.
//!
//! Keys are the long option names of a subcommand (`max-iters` or
//! `max_iters`). Blank lines and `#` comments are ignored. Boolean flags take
//! `true` or `false`. Entries are turned into command-line tokens placed
//! before the explicit arguments, so the command line wins on conflicts.

use std::path::Path;

use clap::Command;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{path}:{line}: {message}")]
    Entry { path: String, line: usize, message: String },
}

/// Parsed `(line, key, value)` entries, keys normalized to kebab case.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>, (usize, String)> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err((i + 1, format!("expected key = value, found `{line}`")));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err((i + 1, "empty key".into()));
        }
        entries.push((i + 1, key, value.trim().to_string()));
    }
    Ok(entries)
}

/// Command-line tokens equivalent to the entries of `path` for the
/// subcommand `sub`.
pub fn config_tokens(sub: &Command, path: &Path) -> Result<Vec<String>, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: shown.clone(),
        source,
    })?;
    let entry_error = |line, message| ConfigError::Entry {
        path: shown.clone(),
        line,
        message,
    };
    let entries = parse_entries(&text).map_err(|(line, message)| entry_error(line, message))?;
    let mut tokens = Vec::new();
    for (line, key, value) in entries {
        if key == "config" {
            return Err(entry_error(
                line,
                "config files cannot include other config files".into(),
            ));
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(entry_error(
                line,
                format!("unknown key `{key}` for `{}`", sub.get_name()),
            ));
        };
        if arg.get_action().takes_values() {
            tokens.push(format!("--{key}={value}"));
        } else {
            match value.as_str() {
                "true" => tokens.push(format!("--{key}")),
                "false" => {}
                other => {
                    return Err(entry_error(
                        line,
                        format!("`{key}` takes true or false, found `{other}`"),
                    ))
                }
            }
        }
    }
    Ok(tokens)
}
