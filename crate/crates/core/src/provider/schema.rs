use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use super::ProviderConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Float,
    Integer,
    String,
    Boolean,
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingField {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl SettingField {
    pub fn float(name: &str, min: f64, max: f64, default: Option<f64>) -> Self {
        SettingField {
            name: name.into(),
            ty: FieldType::Float,
            min: Some(min),
            max: Some(max),
            default: default.map(Value::from),
            description: String::new(),
        }
    }

    pub fn integer(name: &str, min: i64, max: i64) -> Self {
        SettingField {
            name: name.into(),
            ty: FieldType::Integer,
            min: Some(min as f64),
            max: Some(max as f64),
            default: None,
            description: String::new(),
        }
    }

    pub fn of(name: &str, ty: FieldType) -> Self {
        SettingField {
            name: name.into(),
            ty,
            min: None,
            max: None,
            default: None,
            description: String::new(),
        }
    }

    pub fn describe(mut self, text: &str) -> Self {
        self.description = text.into();
        self
    }
}

/// Declarative description of a provider's model settings. The UI renders it
/// as a form; the engine uses it to put settings into canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsSchema {
    pub provider: String,
    pub fields: Vec<SettingField>,
}

impl SettingsSchema {
    /// Applies defaults, checks types and ranges, and normalises numbers
    /// (floats are stored as floats, integers as integers). Idempotent.
    pub fn canonicalize(&self, settings: &Map<String, Value>) -> Result<Map<String, Value>, ProviderConfigError> {
        let mut out = Map::new();
        for key in settings.keys() {
            if !self.fields.iter().any(|f| &f.name == key) {
                return Err(ProviderConfigError::UnknownSetting {
                    provider: self.provider.clone(),
                    key: key.clone(),
                });
            }
        }
        for field in &self.fields {
            let value = match settings.get(&field.name) {
                Some(Value::Null) | None => match &field.default {
                    Some(d) => d.clone(),
                    None => continue,
                },
                Some(v) => v.clone(),
            };
            out.insert(field.name.clone(), self.normalize(field, value)?);
        }
        Ok(out)
    }

    fn normalize(&self, field: &SettingField, value: Value) -> Result<Value, ProviderConfigError> {
        let bad = |reason: String| ProviderConfigError::InvalidSetting {
            provider: self.provider.clone(),
            key: field.name.clone(),
            reason,
        };
        let check_range = |x: f64| {
            if field.min.is_some_and(|m| x < m) || field.max.is_some_and(|m| x > m) {
                Err(bad(format!(
                    "{x} outside [{}, {}]",
                    field.min.unwrap_or(f64::NEG_INFINITY),
                    field.max.unwrap_or(f64::INFINITY)
                )))
            } else {
                Ok(())
            }
        };
        match field.ty {
            FieldType::Float => {
                let x = value.as_f64().ok_or_else(|| bad("expected a number".into()))?;
                check_range(x)?;
                Number::from_f64(x)
                    .map(Value::Number)
                    .ok_or_else(|| bad("not a finite number".into()))
            }
            FieldType::Integer => {
                let x = value.as_f64().ok_or_else(|| bad("expected an integer".into()))?;
                if x.fract() != 0.0 {
                    return Err(bad("expected an integer".into()));
                }
                check_range(x)?;
                Ok(Value::from(x as i64))
            }
            FieldType::String => match value {
                Value::String(_) => Ok(value),
                _ => Err(bad("expected a string".into())),
            },
            FieldType::Boolean => match value {
                Value::Bool(_) => Ok(value),
                _ => Err(bad("expected a boolean".into())),
            },
            FieldType::Map => match value {
                Value::Object(_) => Ok(value),
                _ => Err(bad("expected an object".into())),
            },
        }
    }
}
