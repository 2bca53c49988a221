//! Run descriptions loaded from TOML or JSON and merged over defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use udn_core::DepthMode;

use crate::error::CliError;

/// Reads a TOML or JSON document. A document with a top-level `config`
/// key (a previous run's summary) yields that key.
pub fn read_document(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let mut doc: Value = if is_toml {
        let t: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| CliError::Config(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    if let Some(inner) = doc.get_mut("config") {
        return Ok(inner.take());
    }
    Ok(doc)
}

fn check_keys(base: &Value, over: &Value, path: &str) -> Result<(), CliError> {
    if let (Value::Object(b), Value::Object(o)) = (base, over) {
        if b.get("kind").is_some() && b.get("kind") != o.get("kind") && o.get("kind").is_some() {
            return Ok(());
        }
        for (k, v) in o {
            let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match b.get(k) {
                None => return Err(CliError::Config(format!("unknown config key `{here}`"))),
                Some(bv) => check_keys(bv, v, &here)?,
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            // A different tagged variant replaces the whole object.
            if o.get("kind").is_some() && b.get("kind") != o.get("kind") {
                *b = o;
                return;
            }
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// `defaults` with the values of `over` laid on top.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, over: Option<Value>) -> Result<T, CliError> {
    let mut base = serde_json::to_value(defaults).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(over) = over {
        check_keys(&base, &over, "")?;
        merge(&mut base, over);
    }
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("config: {e}")))
}

/// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let text = serde_json::to_string(config).expect("serializable config");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn parse_model(text: &str) -> Result<DepthMode, CliError> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("udn") {
        return Ok(DepthMode::Variational);
    }
    if let Some(depth) = t.strip_prefix("fixed:") {
        let depth: usize = depth
            .parse()
            .map_err(|_| CliError::Config(format!("bad model `{t}`: expected fixed:<depth>")))?;
        if depth == 0 {
            return Err(CliError::Config("fixed depth must be at least 1".into()));
        }
        return Ok(DepthMode::Fixed(depth));
    }
    Err(CliError::Config(format!("unknown model `{t}`: expected udn or fixed:<depth>")))
}

pub fn model_label(mode: DepthMode) -> String {
    match mode {
        DepthMode::Variational => "udn".into(),
        DepthMode::Fixed(depth) => format!("fixed:{depth}"),
    }
}

/// `start:stop:step`, inclusive of `stop`.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("bad sweep `{text}`: expected start:stop:step with step > 0"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}
