//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment. `include = path` splices
//! another file in place, resolved relative to the including file. Later
//! assignments override earlier ones. A key may be scoped to one subcommand
//! as `train-acoustic.steps = 500`; scoped keys win over bare ones, and
//! command-line flags win over both.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Files read, in include order.
    pub sources: Vec<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        let mut stack = Vec::new();
        cfg.read_file(path, &mut stack)?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        cfg.read_text(text, Path::new("<inline>"), Path::new("."), &mut Vec::new())?;
        Ok(cfg)
    }

    fn read_file(&mut self, path: &Path, stack: &mut Vec<PathBuf>) -> Result<(), CliError> {
        let canonical = path
            .canonicalize()
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(pos) = stack.iter().position(|p| p == &canonical) {
            let chain: Vec<String> = stack[pos..]
                .iter()
                .chain(std::iter::once(&canonical))
                .map(|p| p.display().to_string())
                .collect();
            return Err(CliError::Usage(format!("include cycle: {}", chain.join(" -> "))));
        }
        let text = std::fs::read_to_string(&canonical)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        stack.push(canonical.clone());
        self.sources.push(canonical.clone());
        let dir = canonical.parent().unwrap_or(Path::new(".")).to_path_buf();
        self.read_text(&text, &canonical, &dir, stack)?;
        stack.pop();
        Ok(())
    }

    fn read_text(&mut self, text: &str, origin: &Path, dir: &Path, stack: &mut Vec<PathBuf>) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", origin.display(), i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CliError::Usage(format!(
                    "{}:{}: bad key {key:?}",
                    origin.display(),
                    i + 1
                )));
            }
            if key == "include" {
                self.read_file(&dir.join(value), stack)?;
            } else {
                self.values.insert(key.to_string(), value.to_string());
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.into(), value.into());
    }

    /// Raw value for `key` under `command`, preferring the scoped form.
    pub fn raw(&self, command: &str, key: &str) -> Option<&str> {
        self.values
            .get(&format!("{command}.{key}"))
            .or_else(|| self.values.get(key))
            .map(String::as_str)
    }

    pub fn get<T>(&self, command: &str, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(command, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key} = {v:?}: {e}"))),
        }
    }

    /// Flag value, else config value.
    pub fn opt<T>(&self, flag: Option<T>, command: &str, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(command, key),
        }
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, command: &str, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(command, key)?.unwrap_or(default),
        })
    }

    /// Flag value or config value; missing both is a usage error.
    pub fn require<T>(&self, flag: Option<T>, command: &str, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self
                .get(command, key)?
                .ok_or_else(|| CliError::Usage(format!("{command}: --{key} is required"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_keys_override_bare_keys() {
        let c = Config::parse_str("seed = 3\n# note\ntrain-acoustic.seed = 9 # trailing\n\nroot=exp\n").unwrap();
        assert_eq!(c.get::<u64>("train-acoustic", "seed").unwrap(), Some(9));
        assert_eq!(c.get::<u64>("synth", "seed").unwrap(), Some(3));
        assert_eq!(c.raw("synth", "root"), Some("exp"));
        assert_eq!(c.pick(Some(1u64), "synth", "seed", 0).unwrap(), 1);
        assert_eq!(c.pick(None, "synth", "steps", 7usize).unwrap(), 7);
    }

    #[test]
    fn malformed_lines_are_usage_errors() {
        assert!(matches!(Config::parse_str("seed 3"), Err(CliError::Usage(_))));
        let c = Config::parse_str("steps = many").unwrap();
        assert!(matches!(c.get::<usize>("x", "steps"), Err(CliError::Usage(_))));
        assert!(matches!(
            c.require::<usize>(None, "x", "batch"),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn includes_apply_in_order_and_cycles_fail() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/base.cfg"), "seed = 1\nsteps = 10\n").unwrap();
        std::fs::write(
            dir.path().join("main.cfg"),
            "steps = 5\ninclude = sub/base.cfg\nseed = 2\n",
        )
        .unwrap();
        let c = Config::load(&dir.path().join("main.cfg")).unwrap();
        assert_eq!(c.get::<u64>("x", "seed").unwrap(), Some(2));
        assert_eq!(c.get::<u64>("x", "steps").unwrap(), Some(10));
        assert_eq!(c.sources.len(), 2);

        std::fs::write(dir.path().join("a.cfg"), "include = b.cfg\n").unwrap();
        std::fs::write(dir.path().join("b.cfg"), "include = a.cfg\n").unwrap();
        match Config::load(&dir.path().join("a.cfg")) {
            Err(CliError::Usage(m)) => assert!(m.contains("include cycle"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
