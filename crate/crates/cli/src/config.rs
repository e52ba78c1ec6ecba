//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    /// `None` means required unless the command says otherwise
    pub default: Option<&'static str>,
    pub help: &'static str,
    /// may be given several times
    pub multi: bool,
    pub hidden: bool,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        default: Some(default),
        help,
        multi: false,
        hidden: false,
    }
}

pub const fn required(name: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        default: None,
        help,
        multi: false,
        hidden: false,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    values: BTreeMap<String, Vec<String>>,
}

fn spec<'a>(keys: &'a [KeySpec], name: &str) -> Result<&'a KeySpec> {
    keys.iter().find(|k| k.name == name).ok_or_else(|| {
        let known: Vec<&str> = keys.iter().filter(|k| !k.hidden).map(|k| k.name).collect();
        anyhow!("unknown config key `{name}` (known: {})", known.join(", "))
    })
}

impl RunConfig {
    pub fn parse(text: &str, keys: &[KeySpec]) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{raw}`", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            let s = spec(keys, k).with_context(|| format!("line {}", n + 1))?;
            let slot = cfg.values.entry(k.to_string()).or_default();
            if !s.multi && !slot.is_empty() {
                bail!("line {}: key `{k}` given twice", n + 1);
            }
            slot.push(v.to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, keys: &[KeySpec]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, keys).with_context(|| format!("in config {}", path.display()))
    }

    /// Replaces whatever the file said for `name`.
    pub fn set(&mut self, name: &str, values: Vec<String>, keys: &[KeySpec]) -> Result<()> {
        spec(keys, name)?;
        self.values.insert(name.to_string(), values);
        Ok(())
    }

    /// Fills defaults and checks that every required key is present.
    pub fn resolve(mut self, keys: &[KeySpec]) -> Result<Self> {
        let mut missing = Vec::new();
        for k in keys {
            if self.values.get(k.name).is_none_or(Vec::is_empty) {
                match k.default {
                    Some(d) => {
                        self.values.insert(k.name.to_string(), vec![d.to_string()]);
                    }
                    None => missing.push(k.name),
                }
            }
        }
        if !missing.is_empty() {
            bail!("missing required config: {}", missing.join(", "));
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<&str> {
        self.values
            .get(name)
            .and_then(|v| v.first())
            .map(String::as_str)
            .ok_or_else(|| anyhow!("config key `{name}` not set"))
    }

    pub fn all(&self, name: &str) -> &[String] {
        self.values.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn parse_as<T>(&self, name: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let raw = self.get(name)?;
        raw.parse::<T>().map_err(|e| anyhow!("config key `{name}` = `{raw}`: {e}"))
    }

    pub fn flag(&self, name: &str) -> Result<bool> {
        match self.get(name)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => bail!("config key `{name}` = `{other}`: expected true or false"),
        }
    }

    /// Resolved configuration as sorted `key = value` lines; loading it
    /// again reproduces the run.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, vs) in &self.values {
            for v in vs {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
