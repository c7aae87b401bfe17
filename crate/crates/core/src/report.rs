use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Sampled evidence for one check on one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub system: String,
    pub check: String,
    pub samples: usize,
    pub worst_value: f64,
    pub worst_state: Vec<f64>,
    pub pass: bool,
    pub tolerance: f64,
    #[serde(default)]
    pub extras: Map<String, Value>,
}

impl VerificationReport {
    pub(crate) fn new(system: &str, check: &str) -> Self {
        Self {
            system: system.to_string(),
            check: check.to_string(),
            samples: 0,
            worst_value: 0.0,
            worst_state: Vec::new(),
            pass: true,
            tolerance: 0.0,
            extras: Map::new(),
        }
    }

    pub(crate) fn extra(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extras.insert(key.to_string(), value.into());
        self
    }

    /// A check that could not reach a verdict (e.g. a rollout that did not
    /// converge). Such a report has `pass == false` but is not a failure.
    pub fn is_inconclusive(&self) -> bool {
        self.extras.get("verdict").and_then(Value::as_str) == Some("inconclusive")
    }

    pub fn is_failure(&self) -> bool {
        !self.pass && !self.is_inconclusive()
    }

    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "pass"
        } else if self.is_inconclusive() {
            "inconclusive"
        } else {
            "fail"
        }
    }
}
