// SPDX-License-Identifier: MIT OR Apache-2.0

//! Plain `key = value` config files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Values are read as JSON literals when they parse as one
//! (numbers, booleans) and as bare strings otherwise. Any serde struct
//! whose fields are scalars round-trips through this format.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::data::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub fn to_kv<C: Serialize>(config: &C) -> Result<String> {
    let Value::Object(map) = serde_json::to_value(config)? else {
        return Err(Error::Config("config must serialize to a flat object".into()));
    };
    let mut out = String::new();
    for (k, v) in map {
        let text = match v {
            Value::String(s) => s,
            Value::Object(_) | Value::Array(_) => {
                return Err(Error::Config(format!("field {k} is not a scalar")));
            }
            other => other.to_string(),
        };
        out.push_str(&format!("{k}={text}\n"));
    }
    Ok(out)
}

/// Parse `text`, starting from `defaults`. Unknown keys, duplicate keys and
/// ill-typed values are errors naming the offending line.
pub fn from_kv<C: Serialize + DeserializeOwned>(text: &str, defaults: &C) -> Result<C> {
    let Value::Object(mut map) = serde_json::to_value(defaults)? else {
        return Err(Error::Config("config must serialize to a flat object".into()));
    };
    let mut seen = Map::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !map.contains_key(k) {
            return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        if seen.insert(k.to_string(), Value::Null).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        let value = match map[k] {
            Value::String(_) => Value::String(v.to_string()),
            _ => serde_json::from_str(v)
                .map_err(|_| Error::Config(format!("line {}: bad value {v:?} for {k}", n + 1)))?,
        };
        map.insert(k.to_string(), value);
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_kv<C: Serialize + DeserializeOwned>(path: &Path, defaults: &C) -> Result<C> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_kv(&text, defaults)
}

pub fn save_kv<C: Serialize>(path: &Path, config: &C) -> Result<()> {
    write_atomic(path, to_kv(config)?.as_bytes())
}
