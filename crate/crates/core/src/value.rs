//! Payload model for file-driven pipelines: integers, floats, strings and
//! homogeneous lists of those.

use std::fmt;

use serde_json::Value as Json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot read {found} as `{tag}`")]
pub struct CoerceError {
    pub tag: String,
    pub found: String,
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Numeric view; integers widen to floats.
    pub fn as_float(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(xs) => Some(xs),
            _ => None,
        }
    }

    /// Whether this value inhabits the type named by `tag`
    /// (`int`, `float`, `string`, or `<tag>_list`).
    pub fn conforms(&self, tag: &str) -> bool {
        match (self, tag) {
            (Value::Int(_), "int") | (Value::Float(_), "float") | (Value::Str(_), "string") => true,
            (Value::List(xs), t) => match t.strip_suffix("_list") {
                Some(inner) => xs.iter().all(|x| x.conforms(inner)),
                None => false,
            },
            _ => false,
        }
    }

    /// Converts to the type named by `tag`, widening integers to floats
    /// where a float is expected.
    pub fn coerce(self, tag: &str) -> Result<Value, CoerceError> {
        let err = |v: &Value| CoerceError {
            tag: tag.to_string(),
            found: v.describe(),
        };
        match (self, tag) {
            (Value::Int(i), "float") => Ok(Value::Float(i as f64)),
            (Value::List(xs), t) if t.ends_with("_list") => {
                let inner = &t[..t.len() - "_list".len()];
                xs.into_iter()
                    .map(|x| x.coerce(inner))
                    .collect::<Result<_, _>>()
                    .map(Value::List)
                    .map_err(|_| CoerceError {
                        tag: tag.to_string(),
                        found: "a list with mismatched elements".to_string(),
                    })
            }
            (v, t) if v.conforms(t) => Ok(v),
            (v, _) => Err(err(&v)),
        }
    }

    fn describe(&self) -> String {
        match self {
            Value::Int(i) => format!("integer {i}"),
            Value::Float(f) => format!("float {f}"),
            Value::Str(s) => format!("string {s:?}"),
            Value::List(_) => "a list".to_string(),
        }
    }

    /// Reads an untyped JSON value.
    pub fn from_json(json: &Json) -> Option<Value> {
        match json {
            Json::Number(n) => n.as_i64().map(Value::Int).or_else(|| n.as_f64().map(Value::Float)),
            Json::String(s) => Some(Value::Str(s.clone())),
            Json::Array(xs) => xs.iter().map(Value::from_json).collect::<Option<_>>().map(Value::List),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Int(i) => Json::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f).map(Json::Number).unwrap_or(Json::Null),
            Value::Str(s) => Json::String(s.clone()),
            Value::List(xs) => Json::Array(xs.iter().map(Value::to_json).collect()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}
