//! key=value configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use crate::commands::Usage;

/// Every key any command understands. Keys are matched after replacing `-`
/// with `_`.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    // train-kmeans
    "k",
    "max_iterations",
    "rel_tolerance",
    "init",
    "max_swaps",
    // train-durpred
    "embed_dim",
    "filter_size",
    "kernel_size",
    "dropout",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "epochs",
    "batch_utterances",
    "max_duration",
    // simulate, evaluate
    "mode",
    "distance",
    // gen-corpus
    "profile",
    "n",
    "mean",
    "sd",
    "unit_share",
    "dim",
    "centroid_scale",
    "noise_sd",
    "min_frames",
    "max_frames",
];

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(Usage(format!("line {}: expected key=value, got {line:?}", n + 1)));
            };
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!(Usage(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!(Usage(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        Ok(Self { values })
    }

    /// The flag value if given, else the file value, else `None`.
    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Usage(format!("config key {key}: cannot parse {v:?}: {e}")).into()),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let s = Settings::parse("# comment\nepochs = 3\nlearning-rate=0.01 # trailing\n\n").unwrap();
        assert_eq!(s.get_or("epochs", None, 10usize).unwrap(), 3);
        assert_eq!(s.get_or("epochs", Some(7), 10usize).unwrap(), 7);
        assert_eq!(s.get_or("learning_rate", None, 1.0f64).unwrap(), 0.01);
        assert_eq!(s.get_or("seed", None, 5u64).unwrap(), 5);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(Settings::parse("colour=blue").is_err());
        assert!(Settings::parse("k=1\nk=2").is_err());
        assert!(Settings::parse("just words").is_err());
        let s = Settings::parse("k=many").unwrap();
        assert!(s.get::<usize>("k", None).is_err());
    }
}
