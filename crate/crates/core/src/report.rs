//! Structured record of a named check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Outcome of one check. Maps are ordered so serialization is
/// reproducible; wall time is kept out of the serialized form for the same
/// reason.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub check: String,
    pub params: BTreeMap<String, Value>,
    pub measured: BTreeMap<String, Value>,
    pub tolerance: BTreeMap<String, Value>,
    pub pass: bool,
    #[serde(skip)]
    pub wall_time: Option<f64>,
}

impl ExperimentReport {
    pub fn new(check: impl Into<String>) -> Self {
        ExperimentReport {
            check: check.into(),
            ..Default::default()
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.params.insert(key.to_string(), to_value(value));
        self
    }

    pub fn measure(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.measured.insert(key.to_string(), to_value(value));
        self
    }

    pub fn tolerate(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.tolerance.insert(key.to_string(), to_value(value));
        self
    }

    /// A measured scalar, if present and numeric.
    pub fn scalar(&self, key: &str) -> Option<f64> {
        self.measured.get(key).and_then(Value::as_f64)
    }

    /// Folds another report in under a key prefix; pass flags are combined.
    pub fn merge(&mut self, prefix: &str, other: &ExperimentReport) {
        for (k, v) in &other.params {
            self.params.insert(format!("{prefix}.{k}"), v.clone());
        }
        for (k, v) in &other.measured {
            self.measured.insert(format!("{prefix}.{k}"), v.clone());
        }
        for (k, v) in &other.tolerance {
            self.tolerance.insert(format!("{prefix}.{k}"), v.clone());
        }
        self.measured
            .insert(format!("{prefix}.pass"), Value::Bool(other.pass));
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

// Non-finite floats have no JSON form; they are stored as strings.
fn to_value(value: impl Serialize) -> Value {
    match serde_json::to_value(&value) {
        Ok(v) => v,
        Err(_) => {
            let json = serde_json::to_string(&value).unwrap_or_default();
            Value::String(json)
        }
    }
}

pub(crate) fn finite_or_string(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else {
        Value::String(format!("{x}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_skips_wall_time_and_is_ordered() {
        let mut r = ExperimentReport::new("demo");
        r.measure("b", 2.0).measure("a", 1.0).tolerate("a", 1e-3);
        r.pass = true;
        r.wall_time = Some(3.0);
        let json = r.to_json().unwrap();
        assert!(!json.contains("wall_time"));
        assert!(json.find("\"a\"").unwrap() < json.find("\"b\"").unwrap());
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.scalar("b"), Some(2.0));
        assert_eq!(back.wall_time, None);
    }

    #[test]
    fn non_finite_values_survive() {
        assert_eq!(finite_or_string(f64::INFINITY), Value::String("inf".into()));
    }
}
