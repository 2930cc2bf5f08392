//! Typed values for metadata and annotation attributes.

use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// Declared type of a metadata or annotation attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataType {
    Text,
    Integer,
    Real,
    Boolean,
    DateTime,
}

impl DataType {
    pub const ALL: [DataType; 5] = [
        DataType::Text,
        DataType::Integer,
        DataType::Real,
        DataType::Boolean,
        DataType::DateTime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DataType::Text => "Text",
            DataType::Integer => "Integer",
            DataType::Real => "Real",
            DataType::Boolean => "Boolean",
            DataType::DateTime => "DateTime",
        }
    }

    /// Case-insensitive token lookup.
    pub fn from_token(token: &str) -> Option<DataType> {
        DataType::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(token))
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, DataType::Integer | DataType::Real)
    }

    /// Types that support `<`, `<=`, `>`, `>=`.
    pub fn is_ordered(self) -> bool {
        matches!(self, DataType::Integer | DataType::Real | DataType::DateTime)
    }

    /// SQLite column type used for this datatype.
    pub fn sql_type(self) -> &'static str {
        match self {
            DataType::Text | DataType::DateTime => "TEXT",
            DataType::Integer | DataType::Boolean => "INTEGER",
            DataType::Real => "REAL",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const DATETIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.f";

/// A single typed value. Missing values are represented as `Option<Value>::None`
/// by the containers that hold them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
    #[serde(with = "datetime_serde")]
    DateTime(NaiveDateTime),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot read {literal:?} as {datatype}")]
pub struct ValueParseError {
    pub datatype: DataType,
    pub literal: String,
}

impl Value {
    pub fn datatype(&self) -> DataType {
        match self {
            Value::Text(_) => DataType::Text,
            Value::Integer(_) => DataType::Integer,
            Value::Real(_) => DataType::Real,
            Value::Boolean(_) => DataType::Boolean,
            Value::DateTime(_) => DataType::DateTime,
        }
    }

    /// Parses a textual literal as a value of the given type.
    pub fn parse(datatype: DataType, literal: &str) -> Result<Value, ValueParseError> {
        let err = || ValueParseError {
            datatype,
            literal: literal.to_string(),
        };
        let trimmed = literal.trim();
        match datatype {
            DataType::Text => Ok(Value::Text(literal.to_string())),
            DataType::Integer => trimmed.parse().map(Value::Integer).map_err(|_| err()),
            DataType::Real => trimmed
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Value::Real)
                .ok_or_else(err),
            DataType::Boolean => match trimmed.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(Value::Boolean(true)),
                "false" | "0" | "no" => Ok(Value::Boolean(false)),
                _ => Err(err()),
            },
            DataType::DateTime => parse_datetime(trimmed).map(Value::DateTime).ok_or_else(err),
        }
    }

    /// Whether this value may be stored in an attribute of type `datatype`.
    /// Integers are accepted for real-valued attributes.
    pub fn conforms_to(&self, datatype: DataType) -> bool {
        self.datatype() == datatype || (datatype == DataType::Real && matches!(self, Value::Integer(_)))
    }

    /// Coerces to the declared type where lossless (integer to real).
    pub fn coerce(self, datatype: DataType) -> Option<Value> {
        match (self, datatype) {
            (Value::Integer(i), DataType::Real) => Some(Value::Real(i as f64)),
            (v, d) if v.datatype() == d => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Total order used for sorting and comparisons between values of the same type.
    pub fn compare(&self, other: &Value) -> Option<std::cmp::Ordering> {
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Boolean(a), Value::Boolean(b)) => Some(a.cmp(b)),
            (Value::DateTime(a), Value::DateTime(b)) => Some(a.cmp(b)),
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x.partial_cmp(&y),
                _ => None,
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::DateTime(d) => write!(f, "{}", d.format(DATETIME_FORMAT)),
        }
    }
}

pub(crate) fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, DATETIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .ok()
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub(crate) fn format_datetime(d: &NaiveDateTime) -> String {
    d.format(DATETIME_FORMAT).to_string()
}

mod datetime_serde {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_datetime(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_datetime(&s).ok_or_else(|| serde::de::Error::custom("invalid datetime"))
    }
}
