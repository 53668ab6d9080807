//! Flat `key = value` config files. Explicit flags always override file
//! entries; file entries override built-in defaults.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug)]
pub struct FileConfig {
    entries: HashMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    /// Parse a config file. Lines are `key = value`; blank lines and lines
    /// starting with `#` are ignored. Keys must come from `allowed`, which
    /// mirrors the command's flag names.
    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "config line {} is not `key = value`: {line}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::usage(format!(
                    "config line {}: unknown key '{key}'",
                    lineno + 1
                )));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::usage(format!("config key '{key}': cannot parse '{raw}'"))),
        }
    }

    /// Resolve one setting: explicit flag, then config file, then default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_merges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\n\ntau = 0.5\nepochs=7\n").unwrap();
        let cfg = FileConfig::load(&path, &["tau", "epochs", "bank"]).unwrap();
        assert_eq!(cfg.pick(None, "tau", 0.04).unwrap(), 0.5);
        assert_eq!(cfg.pick(Some(0.1), "tau", 0.04).unwrap(), 0.1);
        assert_eq!(cfg.pick::<usize>(None, "epochs", 30).unwrap(), 7);
        assert_eq!(cfg.pick::<usize>(None, "bank", 2048).unwrap(), 2048);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "nope = 1\n").unwrap();
        assert_eq!(FileConfig::load(&path, &["tau"]).unwrap_err().code, 2);
        std::fs::write(&path, "just words\n").unwrap();
        assert_eq!(FileConfig::load(&path, &["tau"]).unwrap_err().code, 2);
        std::fs::write(&path, "tau = abc\n").unwrap();
        let cfg = FileConfig::load(&path, &["tau"]).unwrap();
        assert_eq!(cfg.get::<f64>("tau").unwrap_err().code, 2);
    }
}
