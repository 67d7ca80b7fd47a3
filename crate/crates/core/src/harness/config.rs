use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Flat `key = value` config with `#` comments and comma-separated lists.
///
/// Values are consumed through the typed getters; [`ConfigMap::finish`]
/// rejects keys nobody asked for and returns a hash of the resolved values.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if raw.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{k}`")));
            }
        }
        Ok(Self { raw, resolved: BTreeMap::new() })
    }

    fn parse_one<T: FromStr>(key: &str, s: &str) -> Result<T> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{}`", s.trim())))
    }

    fn take_raw(&mut self, key: &str) -> Option<String> {
        self.raw.remove(key)
    }

    fn record(&mut self, key: &str, canonical: String) {
        self.resolved.insert(key.to_string(), canonical);
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String> {
        let v = self.take_raw(key).unwrap_or_else(|| default.to_string());
        if v.is_empty() {
            return Err(Error::Config(format!("`{key}` is empty")));
        }
        self.record(key, v.clone());
        Ok(v)
    }

    pub fn optional_string(&mut self, key: &str) -> Option<String> {
        let v = self.take_raw(key).filter(|v| !v.is_empty());
        if let Some(v) = &v {
            self.record(key, v.clone());
        }
        v
    }

    pub fn list(&mut self, key: &str, default: &str) -> Result<Vec<String>> {
        let v = self.take_raw(key).unwrap_or_else(|| default.to_string());
        let items: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::Config(format!("`{key}` must be a non-empty list")));
        }
        self.record(key, items.join(","));
        Ok(items)
    }

    pub fn usize_value(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = match self.take_raw(key) {
            Some(s) => Self::parse_one(key, &s)?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn positive_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.usize_value(key, default)?;
        if v == 0 {
            return Err(Error::Config(format!("`{key}` must be positive")));
        }
        Ok(v)
    }

    pub fn positive_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.f64_value(key, default)?;
        if !(v > 0.0) {
            return Err(Error::Config(format!("`{key}` must be positive, got {v}")));
        }
        Ok(v)
    }

    pub fn f64_value(&mut self, key: &str, default: f64) -> Result<f64> {
        let v: f64 = match self.take_raw(key) {
            Some(s) => Self::parse_one(key, &s)?,
            None => default,
        };
        if !v.is_finite() {
            return Err(Error::Config(format!("`{key}` must be finite")));
        }
        self.record(key, super::fmt_f64(v));
        Ok(v)
    }

    pub fn bool_value(&mut self, key: &str, default: bool) -> Result<bool> {
        let v = match self.take_raw(key) {
            Some(s) => match s.as_str() {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => return Err(Error::Config(format!("`{key}`: expected true or false, got `{s}`"))),
            },
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn positive_usize_list(&mut self, key: &str, default: &str) -> Result<Vec<usize>> {
        let items = self.list(key, default)?;
        let v: Vec<usize> = items.iter().map(|s| Self::parse_one(key, s)).collect::<Result<_>>()?;
        if v.contains(&0) {
            return Err(Error::Config(format!("`{key}` entries must be positive")));
        }
        Ok(v)
    }

    pub fn f64_list(&mut self, key: &str, default: &str) -> Result<Vec<f64>> {
        let items = self.list(key, default)?;
        let v: Vec<f64> = items.iter().map(|s| Self::parse_one(key, s)).collect::<Result<_>>()?;
        if v.iter().any(|x: &f64| !x.is_finite()) {
            return Err(Error::Config(format!("`{key}` entries must be finite")));
        }
        self.record(key, v.iter().map(|x| super::fmt_f64(*x)).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    /// Rejects unknown keys and returns the hash of the resolved config.
    pub fn finish(self, experiment: &str) -> Result<String> {
        if let Some(k) = self.raw.keys().next() {
            return Err(Error::Config(format!("unknown key `{k}` for {experiment}")));
        }
        let mut h = Sha256::new();
        h.update(experiment.as_bytes());
        h.update(b"\n");
        for (k, v) in &self.resolved {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        let digest = h.finalize();
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}
