//! Structured key-value documents carried in payload bodies, with a
//! canonical byte encoding (sorted keys, no whitespace, UTF-8).

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonicalizationError {
    #[error("non-finite number at {path}")]
    NonFinite { path: String },
}

/// A JSON-like document. Unlike `serde_json::Value` it can hold non-finite
/// floats, so that encoding them fails loudly instead of degrading to `null`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Document {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Array(Vec<Document>),
    Object(BTreeMap<String, Document>),
}

impl Document {
    pub fn object<K: Into<String>>(entries: impl IntoIterator<Item = (K, Document)>) -> Self {
        Document::Object(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn empty_object() -> Self {
        Document::Object(BTreeMap::new())
    }

    pub fn floats(values: &[f64]) -> Self {
        Document::Array(values.iter().map(|&v| Document::Float(v)).collect())
    }

    pub fn strings<S: AsRef<str>>(values: &[S]) -> Self {
        Document::Array(values.iter().map(|v| Document::Str(v.as_ref().to_owned())).collect())
    }

    pub fn get(&self, key: &str) -> Option<&Document> {
        match self {
            Document::Object(map) => map.get(key),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Document::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Document::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Numeric view of either integer or float entries.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Document::Int(i) => Some(*i as f64),
            Document::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Document::Int(i) if *i >= 0 => Some(*i as u64),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Document]> {
        match self {
            Document::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&BTreeMap<String, Document>> {
        match self {
            Document::Object(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Document::Null)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Document::Null => "null",
            Document::Bool(_) => "boolean",
            Document::Int(_) => "integer",
            Document::Float(_) => "number",
            Document::Str(_) => "string",
            Document::Array(_) => "array",
            Document::Object(_) => "object",
        }
    }

    /// Convert to a `serde_json::Value`, rejecting non-finite numbers.
    pub fn to_json(&self) -> Result<Value, CanonicalizationError> {
        self.to_json_at("$")
    }

    fn to_json_at(&self, path: &str) -> Result<Value, CanonicalizationError> {
        Ok(match self {
            Document::Null => Value::Null,
            Document::Bool(b) => Value::Bool(*b),
            Document::Int(i) => Value::from(*i),
            Document::Float(f) => serde_json::Number::from_f64(*f)
                .map(Value::Number)
                .ok_or_else(|| CanonicalizationError::NonFinite { path: path.to_owned() })?,
            Document::Str(s) => Value::String(s.clone()),
            Document::Array(items) => Value::Array(
                items.iter().enumerate().map(|(i, d)| d.to_json_at(&format!("{path}[{i}]"))).collect::<Result<_, _>>()?,
            ),
            Document::Object(map) => {
                let mut out = serde_json::Map::new();
                for (k, v) in map {
                    out.insert(k.clone(), v.to_json_at(&format!("{path}.{k}"))?);
                }
                Value::Object(out)
            }
        })
    }

    pub fn from_json(value: &Value) -> Self {
        match value {
            Value::Null => Document::Null,
            Value::Bool(b) => Document::Bool(*b),
            Value::Number(n) => match n.as_i64() {
                Some(i) if !n.is_f64() => Document::Int(i),
                _ => Document::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            Value::String(s) => Document::Str(s.clone()),
            Value::Array(a) => Document::Array(a.iter().map(Document::from_json).collect()),
            Value::Object(m) => Document::Object(m.iter().map(|(k, v)| (k.clone(), Document::from_json(v))).collect()),
        }
    }

    /// Canonical encoding: lexicographically sorted keys, no insignificant
    /// whitespace, UTF-8.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, CanonicalizationError> {
        let value = self.to_json()?;
        // serde_json's map is a BTreeMap (no `preserve_order`), so keys are
        // emitted in sorted order and the compact writer adds no whitespace.
        Ok(serde_json::to_vec(&value).expect("serializing a Value cannot fail"))
    }
}

impl From<&str> for Document {
    fn from(s: &str) -> Self {
        Document::Str(s.to_owned())
    }
}

impl From<String> for Document {
    fn from(s: String) -> Self {
        Document::Str(s)
    }
}

impl From<bool> for Document {
    fn from(b: bool) -> Self {
        Document::Bool(b)
    }
}

impl From<f64> for Document {
    fn from(f: f64) -> Self {
        Document::Float(f)
    }
}

impl From<i64> for Document {
    fn from(i: i64) -> Self {
        Document::Int(i)
    }
}

impl From<u64> for Document {
    fn from(i: u64) -> Self {
        i64::try_from(i).map_or(Document::Float(i as f64), Document::Int)
    }
}

impl<T: Into<Document>> From<Option<T>> for Document {
    fn from(o: Option<T>) -> Self {
        o.map_or(Document::Null, Into::into)
    }
}

impl From<Vec<Document>> for Document {
    fn from(v: Vec<Document>) -> Self {
        Document::Array(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_order_does_not_affect_bytes() {
        let a = Document::object([("b", Document::from(1i64)), ("a", Document::from("x"))]);
        let b = Document::object([("a", Document::from("x")), ("b", Document::from(1i64))]);
        assert_eq!(a.canonical_bytes().unwrap(), b.canonical_bytes().unwrap());
        assert_eq!(a.canonical_bytes().unwrap(), br#"{"a":"x","b":1}"#);
    }

    #[test]
    fn nan_is_rejected_with_path() {
        let d = Document::object([("tree", Document::object([("score", Document::Float(f64::NAN))]))]);
        assert_eq!(d.canonical_bytes(), Err(CanonicalizationError::NonFinite { path: "$.tree.score".into() }));
    }

    #[test]
    fn ints_and_floats_stay_distinct_through_json() {
        let d = Document::Array(vec![Document::Int(3), Document::Float(3.0), Document::Float(-0.25)]);
        let bytes = d.canonical_bytes().unwrap();
        let back = Document::from_json(&serde_json::from_slice(&bytes).unwrap());
        assert_eq!(back, d);
    }
}
