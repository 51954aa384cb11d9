use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::eval::Score;
use crate::planner::{ChatMessage, ModelSpec};
use crate::provider::ProviderError;

/// Content address of a query: SHA-256 over provider, model, canonical
/// settings, prompt text and prior chat turns. Generation index and N are
/// deliberately excluded; the cache keeps a growable list per key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryKey([u8; 32]);

impl QueryKey {
    pub fn compute(model: &ModelSpec, history: &[ChatMessage], prompt: &str) -> Self {
        let payload = json!([model.provider, model.model, model.settings, prompt, history]);
        let bytes = serde_json::to_vec(&payload).expect("key payload serializes");
        QueryKey(Sha256::digest(&bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(QueryKey(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for QueryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QueryKey({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for QueryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for QueryKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for QueryKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        QueryKey::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid query key"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Text(String),
    Error(ProviderError),
}

/// One generation (or final failure) for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub key: QueryKey,
    pub index: u32,
    #[serde(flatten)]
    pub outcome: Outcome,
    pub model: ModelSpec,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fill_history: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, Score>,
}

impl ResponseRecord {
    pub fn is_success(&self) -> bool {
        matches!(self.outcome, Outcome::Text(_))
    }

    /// Response text; empty for error records.
    pub fn text(&self) -> &str {
        match &self.outcome {
            Outcome::Text(t) => t,
            Outcome::Error(_) => "",
        }
    }

    pub fn error(&self) -> Option<&ProviderError> {
        match &self.outcome {
            Outcome::Error(e) => Some(e),
            Outcome::Text(_) => None,
        }
    }

    pub fn model_alias(&self) -> &str {
        self.model.display_name()
    }

    /// Looks up a variable in the fill history, then the metadata.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        self.fill_history
            .get(name)
            .or_else(|| self.metadata.get(name))
            .map(String::as_str)
    }
}

pub(crate) fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{Map, Value};

    #[test]
    fn key_ignores_settings_order() {
        let mut a = Map::new();
        a.insert("temperature".into(), json!(0.5));
        a.insert("max_tokens".into(), json!(10));
        let mut b = Map::new();
        b.insert("max_tokens".into(), json!(10));
        b.insert("temperature".into(), json!(0.5));
        let ma = ModelSpec { settings: a, ..ModelSpec::new("p", "m") };
        let mb = ModelSpec { settings: b, ..ModelSpec::new("p", "m").with_alias("other") };
        assert_eq!(QueryKey::compute(&ma, &[], "x"), QueryKey::compute(&mb, &[], "x"));
        assert_ne!(QueryKey::compute(&ma, &[], "x"), QueryKey::compute(&ma, &[], "y"));
        let turn = [ChatMessage::user("x")];
        assert_ne!(QueryKey::compute(&ma, &[], "x"), QueryKey::compute(&ma, &turn, "x"));
    }

    #[test]
    fn record_json_shape() {
        let m = ModelSpec::new("mock", "m");
        let r = ResponseRecord {
            key: QueryKey::compute(&m, &[], "p"),
            index: 0,
            outcome: Outcome::Text("hi".into()),
            model: m,
            prompt: "p".into(),
            history: vec![],
            fill_history: BTreeMap::from([("x".into(), "1".into())]),
            metadata: BTreeMap::new(),
            timestamp_ms: 5,
            scores: BTreeMap::new(),
        };
        let v: Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["text"], "hi");
        assert!(v.get("error").is_none());
        let back: ResponseRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert_eq!(QueryKey::from_hex(&r.key.to_hex()), Some(r.key));
    }
}
