//! Setting resolution: command-line flag, then config file, then built-in
//! default. Every resolved value lands in the run manifest's snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Environment fallback for `seed` when neither flag nor config sets it.
pub const SEED_ENV: &str = "TS2IMG_SEED";

/// Parses `key = value` lines. `#` starts a comment; keys are normalised so
/// `batch-size` and `batch_size` are the same setting.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key=value, got `{line}`", i + 1)))?;
        let key = normalise(k);
        if key.is_empty() {
            return Err(CliError::Config(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("config line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

fn normalise(key: &str) -> String {
    key.trim().replace('-', "_").to_ascii_lowercase()
}

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    snapshot: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            ..Self::default()
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self::new(parse_config(&text)?))
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let key = normalise(key);
        let Some(raw) = self.file.get(&key) else {
            return Ok(None);
        };
        self.used.insert(key.clone());
        raw.parse()
            .map(Some)
            .map_err(|e| CliError::Config(format!("config key `{key}` = `{raw}`: {e}")))
    }

    /// Records the resolved value. A key read here counts as used even when
    /// a flag overrode the file.
    pub fn record(&mut self, key: &str, value: impl Display) {
        let key = normalise(key);
        if self.file.contains_key(&key) {
            self.used.insert(key.clone());
        }
        self.snapshot.insert(key, value.to_string());
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    /// Comma-separated list setting.
    pub fn get_list<T: FromStr + Display>(&mut self, key: &str, flag: Option<Vec<T>>) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file_value::<String>(key)? {
                Some(raw) => Some(
                    raw.split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| {
                            s.trim()
                                .parse()
                                .map_err(|e| CliError::Config(format!("config key `{key}` item `{s}`: {e}")))
                        })
                        .collect::<Result<Vec<T>, _>>()?,
                ),
                None => None,
            },
        };
        if let Some(v) = &v {
            let joined: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            self.record(key, joined.join(","));
        }
        Ok(v)
    }

    /// Seed precedence: flag, config `seed`, `TS2IMG_SEED`, then 0.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let v = match flag {
            Some(v) => v,
            None => match self.file_value("seed")? {
                Some(v) => v,
                None => match std::env::var(SEED_ENV) {
                    Ok(raw) => raw
                        .trim()
                        .parse()
                        .map_err(|e| CliError::Config(format!("{SEED_ENV}=`{raw}`: {e}")))?,
                    Err(_) => 0,
                },
            },
        };
        self.record("seed", v);
        Ok(v)
    }

    /// Config keys this command never read.
    pub fn unused(&self) -> Vec<&str> {
        self.file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect()
    }

    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.snapshot
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_files() {
        let m = parse_config("# comment\nwindow = 64\nbatch-size=32 # trailing\n\n").unwrap();
        assert_eq!(m["window"], "64");
        assert_eq!(m["batch_size"], "32");
        assert!(parse_config("window").is_err());
        assert!(parse_config("a=1\nA=2").is_err());
        assert!(parse_config("=3").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = Settings::new(parse_config("window=64\nstep=5\nbins=x").unwrap());
        assert_eq!(s.get("window", Some(10usize), 100).unwrap(), 10);
        assert_eq!(s.get("step", None, 20usize).unwrap(), 5);
        assert_eq!(s.get("epochs", None, 7usize).unwrap(), 7);
        assert!(matches!(s.get("bins", None, 8usize), Err(CliError::Config(_))));
        assert_eq!(s.snapshot()["window"], "10");
        assert_eq!(s.unused(), Vec::<&str>::new());
    }

    #[test]
    fn lists_file_value() {
        let mut s = Settings::new(parse_config("channels = hr, eda").unwrap());
        let v: Option<Vec<String>> = s.get_list("channels", None).unwrap();
        assert_eq!(v.unwrap(), vec!["hr", "eda"]);
        assert_eq!(s.snapshot()["channels"], "hr,eda");
    }

    #[test]
    fn seed_file_value_before_env() {
        let mut s = Settings::new(parse_config("seed=9").unwrap());
        assert_eq!(s.seed(None).unwrap(), 9);
        assert_eq!(s.seed(Some(3)).unwrap(), 3);
    }
}
