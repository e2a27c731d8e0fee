use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Concurrency;

/// A configuration scalar, string or list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ConfigValue>),
}

impl ConfigValue {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigValue::Bool(_) => "bool",
            ConfigValue::Int(_) => "int",
            ConfigValue::Float(_) => "float",
            ConfigValue::Str(_) => "string",
            ConfigValue::List(_) => "list",
        }
    }
}

impl fmt::Display for ConfigValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigValue::Bool(b) => write!(f, "{b}"),
            ConfigValue::Int(i) => write!(f, "{i}"),
            ConfigValue::Float(x) => write!(f, "{x}"),
            ConfigValue::Str(s) => write!(f, "{s:?}"),
            ConfigValue::List(l) => {
                f.write_str("[")?;
                for (i, v) in l.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config key `{key}` holds a {found}, expected {expected}")]
pub struct TypeMismatch {
    pub key: String,
    pub expected: &'static str,
    pub found: &'static str,
}

/// Types that can be read out of a [`ConfigValue`].
pub trait FromConfig: Sized {
    const EXPECTED: &'static str;
    fn from_config(value: &ConfigValue) -> Option<Self>;
}

impl FromConfig for i64 {
    const EXPECTED: &'static str = "int";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl FromConfig for u64 {
    const EXPECTED: &'static str = "non-negative int";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::Int(i) => u64::try_from(*i).ok(),
            _ => None,
        }
    }
}

impl FromConfig for usize {
    const EXPECTED: &'static str = "non-negative int";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::Int(i) => usize::try_from(*i).ok(),
            _ => None,
        }
    }
}

impl FromConfig for f64 {
    const EXPECTED: &'static str = "number";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::Float(x) => Some(*x),
            ConfigValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl FromConfig for bool {
    const EXPECTED: &'static str = "bool";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl FromConfig for String {
    const EXPECTED: &'static str = "string";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::Str(s) => Some(s.clone()),
            _ => None,
        }
    }
}

impl FromConfig for Vec<ConfigValue> {
    const EXPECTED: &'static str = "list";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::List(l) => Some(l.clone()),
            _ => None,
        }
    }
}

impl FromConfig for ConfigValue {
    const EXPECTED: &'static str = "value";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        Some(value.clone())
    }
}

/// Accepts a positive integer or the string `"unlimited"`.
impl FromConfig for Concurrency {
    const EXPECTED: &'static str = "positive int or \"unlimited\"";
    fn from_config(value: &ConfigValue) -> Option<Self> {
        match value {
            ConfigValue::Int(i) => usize::try_from(*i).ok().and_then(Concurrency::bounded),
            ConfigValue::Str(s) if s == "unlimited" => Some(Concurrency::Unlimited),
            _ => None,
        }
    }
}

/// Read-only, string-keyed configuration available at registration time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigMap(BTreeMap<String, ConfigValue>);

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: ConfigValue) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn raw(&self, key: &str) -> Option<&ConfigValue> {
        self.0.get(key)
    }

    /// Returns the configured value for `key`, or `default` when absent.
    pub fn get_or<T: FromConfig>(&self, key: &str, default: T) -> Result<T, TypeMismatch> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => T::from_config(v).ok_or_else(|| TypeMismatch {
                key: key.to_string(),
                expected: T::EXPECTED,
                found: v.kind(),
            }),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ConfigValue)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, ConfigValue)> for ConfigMap {
    fn from_iter<I: IntoIterator<Item = (String, ConfigValue)>>(iter: I) -> Self {
        ConfigMap(iter.into_iter().collect())
    }
}

/// Free-function form of [`ConfigMap::get_or`].
pub fn config_get<T: FromConfig>(config: &ConfigMap, key: &str, default: T) -> Result<T, TypeMismatch> {
    config.get_or(key, default)
}
