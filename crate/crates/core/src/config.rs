// SPDX-License-Identifier: Apache-2.0

//! Plain-text `key = value` configuration files.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Used for
//! model and hardware descriptions, bin grids and sweep plans.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::domain::{BinGrid, HardwareSpec, ModelConfig};
use crate::error::{Error, Result};

/// Parsed key-value pairs in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", idx + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", idx + 1)));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    idx + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{raw}`")))
    }

    pub fn parse_optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None | Some("") => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{raw}`"))),
        }
    }

    /// Comma-separated list of integers.
    pub fn parse_list(&self, key: &str) -> Result<Vec<u64>> {
        parse_u64_list(self.require(key)?)
            .map_err(|bad| Error::Config(format!("key `{key}`: bad list entry `{bad}`")))
    }

    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_u64_list(raw: &str) -> std::result::Result<Vec<u64>, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|_| s.to_string()))
        .collect()
}

pub(crate) fn join_list(values: &[u64]) -> String {
    values
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

const MODEL_KEYS: &[&str] = &[
    "n_layers",
    "d_model",
    "n_heads",
    "n_kv_heads",
    "d_ff",
    "vocab_size",
    "n_params",
    "tied_embeddings",
];

impl ModelConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(MODEL_KEYS)?;
        let cfg = ModelConfig {
            n_layers: kv.parse_required("n_layers")?,
            d_model: kv.parse_required("d_model")?,
            n_heads: kv.parse_required("n_heads")?,
            n_kv_heads: kv.parse_required("n_kv_heads")?,
            d_ff: kv.parse_required("d_ff")?,
            vocab_size: kv.parse_required("vocab_size")?,
            n_params: kv.parse_optional("n_params")?,
            tied_embeddings: kv.parse_optional("tied_embeddings")?.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }
}

impl HardwareSpec {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&["name", "tdp", "peak_flops"])?;
        HardwareSpec::new(
            kv.require("name")?,
            kv.parse_required("tdp")?,
            kv.parse_required("peak_flops")?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }
}

impl BinGrid {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&["input_bins", "output_bins"])?;
        BinGrid::new(kv.parse_list("input_bins")?, kv.parse_list("output_bins")?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "input_bins = {}\noutput_bins = {}\n",
            join_list(self.input_bins()),
            join_list(self.output_bins())
        )
    }
}
