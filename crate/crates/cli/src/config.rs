//! Config resolution: built-in defaults, then the JSON config file, then
//! command-line flags. Every resolved key is logged with its source.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Error caused by the invocation itself (bad flags or config keys) rather
/// than by the data. Reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Flag overrides keyed by dotted config path, e.g. `lstm.epochs`.
#[derive(Debug, Default)]
pub struct Overrides(Vec<(String, Value)>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key.to_string(), serde_json::to_value(v).expect("flag value serializes")));
        }
        self
    }
}

fn set_path(root: &mut Map<String, Value>, path: &str, value: Value) {
    let mut parts = path.split('.').peekable();
    let mut cur = root;
    while let Some(p) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(p.to_string(), value);
            return;
        }
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if !entry.is_object() {
            *entry = Value::Object(Map::new());
        }
        cur = entry.as_object_mut().expect("object");
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Reads a JSON object from `path`.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(usage(format!("config file {} must hold a JSON object", path.display()))),
        Err(e) => Err(usage(format!("config file {}: {e}", path.display()))),
    }
}

/// Merges file and flags, deserializes into `T` (whose `Default` supplies
/// the remaining keys) and logs where every key came from.
pub fn resolve<T>(file: Option<&Map<String, Value>>, overrides: &Overrides) -> Result<T>
where
    T: DeserializeOwned + Serialize,
{
    let mut merged = file.cloned().unwrap_or_default();
    for (k, v) in &overrides.0 {
        set_path(&mut merged, k, v.clone());
    }
    let resolved: T = serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid config: {e}")))?;

    let mut file_keys = Vec::new();
    if let Some(f) = file {
        flatten("", &Value::Object(f.clone()), &mut file_keys);
    }
    let file_keys: BTreeSet<String> = file_keys.into_iter().map(|(k, _)| k).collect();
    let flag_keys: BTreeSet<&str> = overrides.0.iter().map(|(k, _)| k.as_str()).collect();
    let mut all = Vec::new();
    flatten("", &serde_json::to_value(&resolved)?, &mut all);
    for (key, value) in all {
        let under = |set: &dyn Fn(&str) -> bool| {
            let mut k = key.as_str();
            loop {
                if set(k) {
                    return true;
                }
                match k.rfind('.') {
                    Some(i) => k = &k[..i],
                    None => return false,
                }
            }
        };
        let source = if under(&|k| flag_keys.contains(k)) {
            "flag"
        } else if under(&|k| file_keys.contains(k)) {
            "file"
        } else {
            "default"
        };
        log::info!("config key={key} source={source} value={value}");
    }
    Ok(resolved)
}

/// Writes the resolved configuration as pretty JSON.
pub fn write_resolved<T: Serialize>(config: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields, default)]
    struct Inner {
        epochs: usize,
        rate: f64,
    }

    impl Default for Inner {
        fn default() -> Self {
            Self { epochs: 5, rate: 0.1 }
        }
    }

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields, default)]
    struct Outer {
        name: Option<String>,
        inner: Inner,
    }

    #[test]
    fn precedence_is_flag_then_file_then_default() {
        let file: Map<String, Value> = serde_json::from_str(r#"{"name":"a","inner":{"epochs":7}}"#).unwrap();
        let mut o = Overrides::default();
        o.set("inner.rate", Some(0.5));
        let r: Outer = resolve(Some(&file), &o).unwrap();
        assert_eq!(r.name.as_deref(), Some("a"));
        assert_eq!(r.inner, Inner { epochs: 7, rate: 0.5 });

        let mut o = Overrides::default();
        o.set("inner.epochs", Some(9)).set::<usize>("ignored", None);
        let r: Outer = resolve(Some(&file), &o).unwrap();
        assert_eq!(r.inner.epochs, 9);
        let r: Outer = resolve(None, &Overrides::default()).unwrap();
        assert_eq!(r, Outer::default());
    }

    #[test]
    fn unknown_keys_name_the_offender() {
        let file: Map<String, Value> = serde_json::from_str(r#"{"inner":{"epoch":7}}"#).unwrap();
        let err = resolve::<Outer>(Some(&file), &Overrides::default()).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(err.to_string().contains("epoch"), "{err}");
    }
}
