use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use serde_json::json;

use super::{sha256_hex, usage, CliResult};
use crate::error::{Error, Result};

/// Settings read from a `key = value` file. Keys are flag names without the
/// leading dashes; `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overlay {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

fn canonical_key(key: &str) -> String {
    key.trim().trim_start_matches("--").to_ascii_lowercase().replace('_', "-")
}

impl Overlay {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!("config line {}: expected key = value", n + 1)));
            };
            let key = canonical_key(key);
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("config line {}: empty key", n + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!("config key `{key}` given twice")));
            }
        }
        Ok(Self {
            values,
            used: RefCell::default(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn unused(&self) -> Vec<&str> {
        let used = self.used.borrow();
        self.values
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect()
    }
}

/// Resolved settings of one invocation.
#[derive(Debug)]
pub struct RunConfig {
    pub command: String,
    pub overlay: Overlay,
    /// Every resolved non-path setting, as text; hashed into provenance.
    pub settings: BTreeMap<String, String>,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(command: &str, overlay: Overlay) -> Self {
        Self {
            command: command.to_string(),
            overlay,
            settings: BTreeMap::new(),
            seed: 0,
            out: PathBuf::new(),
        }
    }

    fn lookup<T>(&self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.overlay
            .get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|e| usage(format!("config key `{key}`: cannot parse `{raw}`: {e}")))
            })
            .transpose()
    }

    /// Flag value, else config value.
    pub fn take<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => {
                self.overlay.get(key);
                Some(v)
            }
            None => self.lookup(key)?,
        };
        if let Some(v) = &value {
            self.settings.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn take_or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.take(key, flag)?.unwrap_or(default);
        self.settings.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// A switch that is on when passed on the command line or set true in
    /// the config file.
    pub fn take_switch(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        let on = flag || self.lookup::<bool>(key)?.unwrap_or(false);
        self.settings.insert(key.to_string(), on.to_string());
        Ok(on)
    }

    /// Comma-separated list; a non-empty flag list replaces the config entry.
    pub fn take_list<T>(&mut self, key: &str, flag: Vec<T>) -> CliResult<Vec<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_config = self.overlay.get(key);
        let values = if !flag.is_empty() {
            flag
        } else if let Some(raw) = from_config {
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|e| usage(format!("config key `{key}`: cannot parse `{s}`: {e}")))
                })
                .collect::<CliResult<Vec<T>>>()?
        } else {
            Vec::new()
        };
        if !values.is_empty() {
            let joined = values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
            self.settings.insert(key.to_string(), joined);
        }
        Ok(values)
    }

    /// Paths are resolved like other settings but left out of the hash.
    pub fn take_path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
        match flag {
            Some(p) => {
                self.overlay.get(key);
                Ok(Some(p))
            }
            None => Ok(self.overlay.get(key).map(PathBuf::from)),
        }
    }

    pub fn require_path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        let path = self
            .take_path(key, flag)?
            .ok_or_else(|| usage(format!("--{key} is required")))?;
        super::require_path(key, &path)?;
        Ok(path)
    }

    pub fn forget(&mut self, key: &str) {
        self.settings.remove(key);
    }

    /// Rejects config keys that no step of the command asked for.
    pub fn finish(&self) -> CliResult<()> {
        let unused = self.overlay.unused();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(usage(format!(
                "config keys not used by `{}`: {}",
                self.command,
                unused.join(", ")
            )))
        }
    }

    /// SHA-256 over the command name and resolved settings.
    pub fn hash(&self) -> String {
        let doc = json!({ "command": self.command, "settings": self.settings });
        sha256_hex(doc.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let o = Overlay::parse("# run\nseed = 7\nlearning_rate=0.1\n\n--metric = map, mauc\n").unwrap();
        assert_eq!(o.len(), 3);
        assert_eq!(o.get("seed"), Some("7"));
        assert_eq!(o.get("learning-rate"), Some("0.1"));
        assert_eq!(o.get("metric"), Some("map, mauc"));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Overlay::parse("seed 7").is_err());
        assert!(Overlay::parse("seed=1\nseed=2").is_err());
        assert!(Overlay::parse(" = 3").is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut rc = RunConfig::new("eval", Overlay::parse("seed = 7\nepochs = 5").unwrap());
        assert_eq!(rc.take("seed", Some(3u64)).unwrap(), Some(3));
        assert_eq!(rc.take::<usize>("epochs", None).unwrap(), Some(5));
        assert_eq!(rc.settings["seed"], "3");
        rc.finish().unwrap();
    }

    #[test]
    fn unused_keys_fail() {
        let mut rc = RunConfig::new("eval", Overlay::parse("seed = 7\nbogus = 1").unwrap());
        rc.take::<u64>("seed", None).unwrap();
        let err = rc.finish().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn lists_and_switches() {
        let mut rc = RunConfig::new("eval", Overlay::parse("l2 = 1e-4, 1e-3\naugment = true").unwrap());
        assert_eq!(rc.take_list::<f64>("l2", vec![]).unwrap(), vec![1e-4, 1e-3]);
        assert!(rc.take_switch("augment", false).unwrap());
        assert!(rc.take_list::<f64>("missing", vec![]).unwrap().is_empty());
    }

    #[test]
    fn hash_ignores_paths() {
        let mut a = RunConfig::new("embed", Overlay::default());
        let mut b = RunConfig::new("embed", Overlay::default());
        a.take_path("out", Some("x".into())).unwrap();
        b.take_path("out", Some("y".into())).unwrap();
        assert_eq!(a.hash(), b.hash());
        a.take_or("pool", None, "avg".to_string()).unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
