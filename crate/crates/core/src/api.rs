//! Request and response bodies for the HTTP service.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::harness::{Comparison, MetricsReport};
use crate::netfabric::ChannelMode;
use crate::registry::ServiceRecord;
use crate::scenario::{Scenario, ScenarioError};

/// Scenario plus the per-request overrides every endpoint accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRequest {
    pub scenario: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ChannelMode>,
}

impl ScenarioRequest {
    pub fn new(scenario: &Scenario) -> Self {
        ScenarioRequest {
            scenario: serde_json::to_value(scenario).expect("scenario serializes"),
            seed: None,
            mode: None,
        }
    }

    /// Parse the scenario, apply overrides, and validate.
    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        let mut s = Scenario::from_json(&self.scenario.to_string())?;
        if let Some(seed) = self.seed {
            s = s.with_seed(seed);
        }
        if let Some(mode) = self.mode {
            s = s.with_mode(mode);
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    #[serde(flatten)]
    pub target: ScenarioRequest,
    #[serde(default)]
    pub include_trace: bool,
    #[serde(default)]
    pub include_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub report: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fire_log_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub comparison: Comparison,
    pub table: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub seed: u64,
    pub now_us: u64,
    pub horizon_us: u64,
}

/// Exactly one of the two fields should be set; `until_us` wins if both are.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvanceRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    pub now_us: u64,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryListing {
    pub now_us: u64,
    pub records: Vec<ServiceRecord>,
}

impl RegistryListing {
    pub fn lines(&self) -> String {
        self.records.iter().map(|r| r.dump_line() + "\n").collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleBody {
    pub app_id: String,
    pub service: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopBody {
    pub app_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopResponse {
    pub stopped: usize,
}

/// Error payload for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_before_validation() {
        let mut req = ScenarioRequest::new(&Scenario::fire_default());
        req.seed = Some(99);
        req.mode = Some(ChannelMode::Proxied);
        let s = req.resolve().unwrap();
        assert_eq!(s.sim.rng_seed, 99);
        assert_eq!(s.app.channel_mode, ChannelMode::Proxied);
    }

    #[test]
    fn run_request_is_flat() {
        let req = RunRequest {
            target: ScenarioRequest::new(&Scenario::fire_default()),
            include_trace: true,
            include_csv: false,
        };
        let v = serde_json::to_value(&req).unwrap();
        assert!(v.get("scenario").is_some());
        assert_eq!(v["include_trace"], true);
        let back: RunRequest = serde_json::from_value(v).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn invalid_scenario_reports_problems() {
        let mut s = Scenario::fire_default();
        s.fire.alert_target = "ghost".into();
        let err = ScenarioRequest::new(&s).resolve().unwrap_err();
        assert!(
            matches!(err, ScenarioError::Validation(p) if p.iter().any(|m| m.contains("ghost")))
        );
    }
}
