//! Flat `key=value` scenario parameters.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Real,
    Int,
    Bool,
    Choice(&'static [&'static str]),
}

/// One documented parameter. A default of `"auto"` is resolved by the
/// scenario from the other parameters.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Real(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Text(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn parse_value(spec: &ParamSpec, raw: &str) -> Result<Value, ConfigError> {
    let raw = raw.trim();
    if raw == "auto" && spec.default == "auto" {
        return Ok(Value::Text("auto".into()));
    }
    match spec.kind {
        Kind::Real => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Value::Real(v)),
            _ => err(format!("{}: expected a finite real, got '{raw}'", spec.key)),
        },
        Kind::Int => raw
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| ConfigError(format!("{}: expected an integer, got '{raw}'", spec.key))),
        Kind::Bool => match raw {
            "true" | "on" | "1" => Ok(Value::Bool(true)),
            "false" | "off" | "0" => Ok(Value::Bool(false)),
            _ => err(format!("{}: expected true or false, got '{raw}'", spec.key)),
        },
        Kind::Choice(options) => {
            if options.contains(&raw) {
                Ok(Value::Text(raw.to_string()))
            } else {
                err(format!(
                    "{}: expected one of {}, got '{raw}'",
                    spec.key,
                    options.join(", ")
                ))
            }
        }
    }
}

/// Resolved parameters of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: BTreeMap<String, Value>,
}

impl Params {
    /// Fill defaults, then apply `overrides` in order. Unknown keys are
    /// rejected.
    pub fn resolve(
        specs: &'static [ParamSpec],
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for spec in specs {
            values.insert(spec.key.to_string(), parse_value(spec, spec.default)?);
        }
        for (key, raw) in overrides {
            let Some(spec) = specs.iter().find(|s| s.key == key) else {
                let known: Vec<&str> = specs.iter().map(|s| s.key).collect();
                return err(format!("unknown key '{key}' (known: {})", known.join(", ")));
            };
            values.insert(key.clone(), parse_value(spec, raw)?);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &BTreeMap<String, Value> {
        &self.values
    }

    fn get(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("parameter '{key}' is not declared"))
    }

    pub fn is_auto(&self, key: &str) -> bool {
        matches!(self.get(key), Value::Text(t) if t == "auto")
    }

    pub fn real(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::Real(v) => *v,
            Value::Int(v) => *v as f64,
            other => panic!("parameter '{key}' is not real: {other}"),
        }
    }

    /// `None` when the parameter is left at `auto`.
    pub fn real_or_auto(&self, key: &str) -> Option<f64> {
        if self.is_auto(key) {
            None
        } else {
            Some(self.real(key))
        }
    }

    pub fn int(&self, key: &str) -> i64 {
        match self.get(key) {
            Value::Int(v) => *v,
            other => panic!("parameter '{key}' is not an integer: {other}"),
        }
    }

    /// Integer parameter that must be at least `min`.
    pub fn count(&self, key: &str, min: i64) -> Result<usize, ConfigError> {
        let v = self.int(key);
        if v < min {
            return err(format!("{key} must be at least {min}, got {v}"));
        }
        Ok(v as usize)
    }

    pub fn flag(&self, key: &str) -> bool {
        match self.get(key) {
            Value::Bool(v) => *v,
            other => panic!("parameter '{key}' is not a flag: {other}"),
        }
    }

    pub fn choice(&self, key: &str) -> &str {
        match self.get(key) {
            Value::Text(v) => v,
            other => panic!("parameter '{key}' is not a choice: {other}"),
        }
    }
}

/// Parse a config file: one `key = value` per line, `#` comments.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(format!("line {}: expected key=value, got '{line}'", n + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return err(format!("line {}: empty key", n + 1));
        }
        out.push((k.replace('-', "_"), v.to_string()));
    }
    Ok(out)
}

/// Parse trailing `--key value`, `--key=value` and `key=value` arguments.
pub fn parse_args(args: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let body = a.strip_prefix("--").unwrap_or(a);
        if let Some((k, v)) = body.split_once('=') {
            out.push((k.replace('-', "_"), v.to_string()));
            i += 1;
        } else if a.starts_with("--") {
            let Some(v) = args.get(i + 1) else {
                return err(format!("missing value for {a}"));
            };
            out.push((body.replace('-', "_"), v.clone()));
            i += 2;
        } else {
            return err(format!("unexpected argument '{a}'"));
        }
    }
    Ok(out)
}
