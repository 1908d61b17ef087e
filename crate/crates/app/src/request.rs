//! Parsing and validation shared by the CLI and the HTTP service.

use std::fmt;
use std::str::FromStr;

use cropwise_core::data::{normalize_label, FeatureSchema, Features, N_FEATURES};
use cropwise_core::models::TrainedModel;
use serde::Serialize;
use serde_json::{Map, Value};

pub const DEFAULT_SEED: u64 = 42;

/// A problem with one named input field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainMethod {
    Permutation,
    Gain,
    Path,
    ShapExact,
    ShapKernel,
    Lime,
    Counterfactual,
}

impl ExplainMethod {
    pub const ALL: [ExplainMethod; 7] = [
        ExplainMethod::Permutation,
        ExplainMethod::Gain,
        ExplainMethod::Path,
        ExplainMethod::ShapExact,
        ExplainMethod::ShapKernel,
        ExplainMethod::Lime,
        ExplainMethod::Counterfactual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExplainMethod::Permutation => "permutation",
            ExplainMethod::Gain => "gain",
            ExplainMethod::Path => "path",
            ExplainMethod::ShapExact => "shap-exact",
            ExplainMethod::ShapKernel => "shap-kernel",
            ExplainMethod::Lime => "lime",
            ExplainMethod::Counterfactual => "counterfactual",
        }
    }

    pub fn needs_target(self) -> bool {
        !matches!(self, ExplainMethod::Permutation | ExplainMethod::Gain)
    }
}

impl fmt::Display for ExplainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExplainMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == wanted)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown method `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Parses `"44,60,55,34.3,90.6,6.8,98.5"`.
pub fn parse_sample(text: &str) -> Result<Features, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != N_FEATURES {
        return Err(format!("expected {N_FEATURES} comma-separated values, got {}", parts.len()));
    }
    let mut x = [0.0; N_FEATURES];
    for (j, p) in parts.iter().enumerate() {
        x[j] = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("value {} (`{p}`) is not a finite number", j + 1))?;
    }
    Ok(x)
}

/// Reads the `features` field: an array of 7 numbers in schema order, or an
/// object keyed by feature name. Physical ranges are checked too.
pub fn features_field(body: &Map<String, Value>, model: &TrainedModel) -> Result<Features, Vec<FieldError>> {
    let schema = &model.schema;
    let Some(value) = body.get("features") else {
        return Err(vec![FieldError::new("features", "is required")]);
    };
    let mut x = [f64::NAN; N_FEATURES];
    let mut errors = Vec::new();
    match value {
        Value::Array(items) => {
            if items.len() != N_FEATURES {
                return Err(vec![FieldError::new(
                    "features",
                    format!("expected {N_FEATURES} numbers, got {}", items.len()),
                )]);
            }
            for (j, item) in items.iter().enumerate() {
                match item.as_f64() {
                    Some(v) => x[j] = v,
                    None => errors.push(FieldError::new(format!("features[{j}]"), "must be a number")),
                }
            }
        }
        Value::Object(fields) => {
            for (name, item) in fields {
                match schema.index_of(name) {
                    None => errors.push(FieldError::new(format!("features.{name}"), "unknown feature")),
                    Some(j) => match item.as_f64() {
                        Some(v) => x[j] = v,
                        None => errors.push(FieldError::new(format!("features.{name}"), "must be a number")),
                    },
                }
            }
            for (j, name) in schema.names.iter().enumerate() {
                if x[j].is_nan() && !fields.keys().any(|k| schema.index_of(k) == Some(j)) {
                    errors.push(FieldError::new(format!("features.{name}"), "is required"));
                }
            }
        }
        _ => {
            return Err(vec![FieldError::new(
                "features",
                "must be an array of 7 numbers or an object keyed by feature name",
            )])
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    model
        .check_input(&x)
        .map_err(|e| vec![FieldError::new("features", e.to_string())])?;
    Ok(x)
}

/// Outcome of resolving a requested class.
#[derive(Debug, PartialEq, Eq)]
pub enum TargetLookup {
    Found(usize),
    Unknown(String),
    Invalid(FieldError),
}

/// Accepts a crop name (matched after normalization) or a class index.
pub fn resolve_target(value: &Value, field: &str, classes: &[String]) -> TargetLookup {
    match value {
        Value::String(name) => {
            let wanted = normalize_label(name);
            match classes.iter().position(|c| normalize_label(c) == wanted) {
                Some(k) => TargetLookup::Found(k),
                None => TargetLookup::Unknown(name.clone()),
            }
        }
        Value::Number(n) => match n.as_u64() {
            Some(k) if (k as usize) < classes.len() => TargetLookup::Found(k as usize),
            Some(k) => TargetLookup::Unknown(k.to_string()),
            None => TargetLookup::Invalid(FieldError::new(field, "must be a class name or index")),
        },
        _ => TargetLookup::Invalid(FieldError::new(field, "must be a class name or index")),
    }
}

pub fn target_by_name(name: &str, classes: &[String]) -> Result<usize, String> {
    match resolve_target(&Value::String(name.to_string()), "target", classes) {
        TargetLookup::Found(k) => Ok(k),
        _ => Err(format!("unknown crop `{name}`")),
    }
}

pub fn feature_by_name(name: &str, schema: &FeatureSchema) -> Result<usize, String> {
    schema
        .index_of(name)
        .ok_or_else(|| format!("unknown feature `{name}` (expected one of {})", schema.names.join(", ")))
}

pub fn optional_u64(
    body: &Map<String, Value>,
    field: &str,
    range: std::ops::RangeInclusive<u64>,
    errors: &mut Vec<FieldError>,
) -> Option<u64> {
    let value = body.get(field)?;
    match value.as_u64() {
        Some(v) if range.contains(&v) => Some(v),
        Some(_) => {
            errors.push(FieldError::new(
                field,
                format!("must be between {} and {}", range.start(), range.end()),
            ));
            None
        }
        None if value.is_null() => None,
        None => {
            errors.push(FieldError::new(field, "must be a non-negative integer"));
            None
        }
    }
}

/// Flags fields outside `allowed`.
pub fn reject_unknown(body: &Map<String, Value>, allowed: &[&str], errors: &mut Vec<FieldError>) {
    for key in body.keys() {
        if !allowed.contains(&key.as_str()) {
            errors.push(FieldError::new(key.clone(), "unknown field"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_text_parsing() {
        let x = parse_sample("44, 60,55,34.28046,90.555618,6.825371,98.540474").unwrap();
        assert_eq!(x[6], 98.540474);
        assert!(parse_sample("1,2,3").unwrap_err().contains("got 3"));
        assert!(parse_sample("1,2,3,4,5,x,7").unwrap_err().contains("value 6"));
        assert!(parse_sample("1,2,3,4,5,NaN,7").is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("shap_exact".parse::<ExplainMethod>().unwrap(), ExplainMethod::ShapExact);
        assert_eq!("LIME".parse::<ExplainMethod>().unwrap(), ExplainMethod::Lime);
        assert!("shap".parse::<ExplainMethod>().unwrap_err().contains("shap-kernel"));
    }

    #[test]
    fn targets_by_name_or_index() {
        let classes: Vec<String> = ["kidneybeans", "rice"].iter().map(|s| s.to_string()).collect();
        assert_eq!(resolve_target(&Value::from("Kidney Beans"), "t", &classes), TargetLookup::Found(0));
        assert_eq!(resolve_target(&Value::from(1), "t", &classes), TargetLookup::Found(1));
        assert_eq!(
            resolve_target(&Value::from("wheat"), "t", &classes),
            TargetLookup::Unknown("wheat".into())
        );
        assert!(matches!(resolve_target(&Value::from(1.5), "t", &classes), TargetLookup::Invalid(_)));
    }
}
