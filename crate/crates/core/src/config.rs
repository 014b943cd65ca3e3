// SPDX-License-Identifier: Apache-2.0

//! `key=value` run configuration.
//!
//! ```text
//! # baseline
//! scheme=DAMQS
//! width=8
//! height=8
//! fault_rate=0.02
//! ```
//!
//! Overrides (from command-line flags) are applied after the file, so they
//! win. `scheme` must be given by one of the two.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::model::{ModelError, SimConfig};

pub const CONFIG_KEYS: [&str; 15] = [
    "scheme",
    "width",
    "height",
    "vc_count",
    "packet_len",
    "vb",
    "shared_size",
    "injection_rate",
    "fault_rate",
    "seed",
    "warmup_cycles",
    "measure_cycles",
    "drain_limit_cycles",
    "traffic",
    "misroute_budget",
];

pub const REQUIRED_KEYS: [&str; 1] = ["scheme"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected key=value")]
    Malformed { line: usize },
    #[error("invalid value {value:?} for {key}")]
    TypeError { key: String, value: String },
    #[error("missing required key {0}")]
    MissingRequired(String),
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A `key=value` setting and the line it came from (0 for overrides).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting {
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl Setting {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Setting {
            line: 0,
            key: key.into(),
            value: value.into(),
        }
    }
}

pub fn parse_settings(text: &str) -> Result<Vec<Setting>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Malformed { line })?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        out.push(Setting {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

fn parsed<T: FromStr>(s: &Setting) -> Result<T, ConfigError> {
    s.value.parse().map_err(|_| ConfigError::TypeError {
        key: s.key.clone(),
        value: s.value.clone(),
    })
}

pub fn apply(cfg: &mut SimConfig, s: &Setting) -> Result<(), ConfigError> {
    match s.key.as_str() {
        "scheme" => cfg.scheme = parsed(s)?,
        "width" => cfg.width = parsed(s)?,
        "height" => cfg.height = parsed(s)?,
        "vc_count" => cfg.vc_count = parsed(s)?,
        "packet_len" => cfg.packet_len = parsed(s)?,
        "vb" => cfg.vb = parsed(s)?,
        "shared_size" => cfg.shared_size = parsed(s)?,
        "injection_rate" => cfg.injection_rate = parsed(s)?,
        "fault_rate" => cfg.fault_rate = parsed(s)?,
        "seed" => cfg.seed = parsed(s)?,
        "warmup_cycles" => cfg.warmup_cycles = parsed(s)?,
        "measure_cycles" => cfg.measure_cycles = parsed(s)?,
        "drain_limit_cycles" => cfg.drain_limit_cycles = parsed(s)?,
        "traffic" => cfg.traffic = parsed(s)?,
        "misroute_budget" => {
            cfg.misroute_budget = match s.value.as_str() {
                "" | "auto" => None,
                _ => Some(parsed(s)?),
            }
        }
        _ => {
            return Err(ConfigError::UnknownKey {
                line: s.line,
                key: s.key.clone(),
            })
        }
    }
    Ok(())
}

/// Builds a config from defaults, then `file` settings, then `overrides`.
pub fn build_config(file: &[Setting], overrides: &[Setting]) -> Result<SimConfig, ConfigError> {
    let mut cfg = SimConfig::default();
    for key in REQUIRED_KEYS {
        if !file.iter().chain(overrides).any(|s| s.key == key) {
            return Err(ConfigError::MissingRequired(key.to_string()));
        }
    }
    for s in file.iter().chain(overrides) {
        apply(&mut cfg, s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_settings(path: &Path) -> Result<Vec<Setting>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_settings(&text)
}

pub fn parse_config(path: Option<&Path>, overrides: &[Setting]) -> Result<SimConfig, ConfigError> {
    let file = match path {
        Some(p) => read_settings(p)?,
        None => Vec::new(),
    };
    build_config(&file, overrides)
}

/// Renders `cfg` in the file format, one line per key.
pub fn to_config_string(cfg: &SimConfig) -> String {
    let budget = cfg
        .misroute_budget
        .map_or_else(|| "auto".to_string(), |b| b.to_string());
    let values = [
        cfg.scheme.to_string(),
        cfg.width.to_string(),
        cfg.height.to_string(),
        cfg.vc_count.to_string(),
        cfg.packet_len.to_string(),
        cfg.vb.to_string(),
        cfg.shared_size.to_string(),
        cfg.injection_rate.to_string(),
        cfg.fault_rate.to_string(),
        cfg.seed.to_string(),
        cfg.warmup_cycles.to_string(),
        cfg.measure_cycles.to_string(),
        cfg.drain_limit_cycles.to_string(),
        cfg.traffic.to_string(),
        budget,
    ];
    CONFIG_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}
