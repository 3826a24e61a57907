//! Key-value config files mirroring the CLI flags. Lines look like
//! `trials = 3704`; `#` starts a comment. Explicit flags override file
//! values.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use prespeech_core::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn empty() -> ConfigFile {
        ConfigFile::default()
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Dataset(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    /// Flag value if given, else the config-file value, else the default.
    pub fn resolve<T: FromStr + Clone>(&self, flag: &Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v.clone());
        }
        match self.values.get(key) {
            Some(text) => text.parse::<T>().map_err(|_| {
                Error::InvalidConfig(format!("config key '{key}' has unparseable value '{text}'"))
            }),
            None => Ok(default),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_with_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "trials = 100\nseed=7 # master seed\n\n# comment\n").unwrap();
        let cfg = ConfigFile::load(&path).unwrap();
        assert_eq!(cfg.resolve(&None::<usize>, "trials", 5).unwrap(), 100);
        assert_eq!(cfg.resolve(&Some(42usize), "trials", 5).unwrap(), 42);
        assert_eq!(cfg.resolve(&None::<u64>, "seed", 0).unwrap(), 7);
        assert_eq!(cfg.resolve(&None::<u64>, "missing", 9).unwrap(), 9);
    }

    #[test]
    fn malformed_lines_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "not a pair\n").unwrap();
        assert!(ConfigFile::load(&path).is_err());
    }

    #[test]
    fn unparseable_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad2.conf");
        std::fs::write(&path, "trials = banana\n").unwrap();
        let cfg = ConfigFile::load(&path).unwrap();
        assert!(cfg.resolve(&None::<usize>, "trials", 1).is_err());
    }
}
