//! Option files: flags override values read from `--config`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub fn load(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    if !v.is_object() {
        return Err(smartnet::Error::Parse(format!(
            "{}: config must be a JSON object",
            path.display()
        ))
        .into());
    }
    Ok(v)
}

/// Overlay non-null flag values onto the file's values. A report file
/// (`{"command": ..., "config": {...}}`) contributes its `config`.
pub fn merge<T: Serialize + DeserializeOwned>(
    command: &str,
    flags: T,
    file: Option<&Value>,
) -> Result<T, CliError> {
    let mut base = match file {
        None => Map::new(),
        Some(v) => match (v.get("command"), v.get("config")) {
            (Some(Value::String(c)), Some(Value::Object(cfg))) => {
                if c != command {
                    return Err(CliError::usage(format!(
                        "config is from a `{c}` report, not `{command}`"
                    )));
                }
                cfg.clone()
            }
            _ => v.as_object().cloned().unwrap_or_default(),
        },
    };
    if let Value::Object(given) = serde_json::to_value(&flags)? {
        for (k, v) in given {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::usage(format!("config: {e}")))
}
