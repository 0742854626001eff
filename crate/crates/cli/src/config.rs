//! Flat key-value configuration: INI-style files, `FOVIQ_` environment
//! overrides, and command-line flags, in increasing precedence.

use std::collections::BTreeMap;
use std::path::Path;

use foviq_core::{Error, Result};

/// Ordered key-value settings with layered overrides.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    /// Parse a flat INI-style file: `key = value` lines, `#`/`;` comments,
    /// section headers ignored (keys are global).
    pub fn from_ini(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!(
                    "config line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                ))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Settings { map })
    }

    /// Apply `FOVIQ_<KEY>` environment variables (key lowercased).
    pub fn apply_env(&mut self) {
        for (k, v) in std::env::vars() {
            if let Some(rest) = k.strip_prefix("FOVIQ_") {
                self.map.insert(rest.to_ascii_lowercase(), v);
            }
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn get_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::invalid(format!("config '{key}': bad number '{s}'"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::invalid(format!("config '{key}': bad integer '{s}'"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(key, default as u64)? as usize)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => match s.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                other => Err(Error::invalid(format!("config '{key}': bad bool '{other}'"))),
            },
        }
    }

    /// Canonical text rendering, used for the config hash.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Stable hash of the canonical settings text, hex-encoded (FNV-1a 64).
pub fn config_hash(settings: &Settings) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in settings.canonical().bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Parse a `start:step:stop` eccentricity bin spec into left-edge values.
pub fn parse_bins(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::invalid(format!(
            "bins spec '{spec}' should be start:step:stop"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse()
                .map_err(|_| Error::invalid(format!("bins spec '{spec}': bad number '{p}'")))
        })
        .collect::<Result<_>>()?;
    let (start, step, stop) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || stop < start {
        return Err(Error::invalid(format!(
            "bins spec '{spec}': need step > 0 and stop >= start"
        )));
    }
    let mut bins = Vec::new();
    let mut i = 0usize;
    loop {
        let v = start + step * i as f64;
        if v > stop + 1e-9 {
            break;
        }
        bins.push(v);
        i += 1;
    }
    Ok(bins)
}

/// Parse `WxHxD` (or `WxH` for a single slice) into `(w, h, d)`.
pub fn parse_dims(spec: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = spec.split(['x', 'X']).collect();
    if parts.len() != 2 && parts.len() != 3 {
        return Err(Error::invalid(format!("dims '{spec}' should be WxH or WxHxD")));
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.parse()
                .map_err(|_| Error::invalid(format!("dims '{spec}': bad integer '{p}'")))
        })
        .collect::<Result<_>>()?;
    let d = if nums.len() == 3 { nums[2] } else { 1 };
    if nums[0] == 0 || nums[1] == 0 || d == 0 {
        return Err(Error::invalid(format!("dims '{spec}' must be positive")));
    }
    Ok((nums[0], nums[1], d))
}

/// Parse a comma-separated list with a per-item parser.
pub fn parse_list<T>(spec: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}
