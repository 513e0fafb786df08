//! Scenario files: one JSON document describing a whole experiment.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fireapp::{self, FireConfig};
use crate::iot::{PortBinding, SensorKind, SensorSpec, DEFAULT_PORT_CAPACITY};
use crate::netfabric::{ChannelMode, FabricConfig};
use crate::registry::RegistryConfig;
use crate::runtime::{AppDescriptor, InitParams, ProcessSpec, ScalePolicy, ScaleTrigger};
use crate::simcore::SimConfig;
use crate::time::{SimDuration, VirtualTime};

pub const SEED_ENV: &str = "CONCURPAAS_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}, field `{field}`: {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub buffer_capacity: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            buffer_capacity: DEFAULT_PORT_CAPACITY,
        }
    }
}

/// Synthetic traffic from a client endpoint to one service of the app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub msg_count: u64,
    #[serde(default)]
    pub payload_bytes: usize,
    #[serde(rename = "interval_us")]
    pub interval: SimDuration,
    /// Defaults to the first process of the app.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_service: Option<String>,
    /// Time of the first message; defaults to the app's startup delay.
    #[serde(rename = "start_us", default, skip_serializing_if = "Option::is_none")]
    pub start: Option<VirtualTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub fabric: FabricConfig,
    #[serde(default)]
    pub registry: RegistryConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub bindings: Vec<PortBinding>,
    pub app: AppDescriptor,
    #[serde(default)]
    pub fire: FireConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSpec>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| {
            let field = err.path().to_string();
            let inner = err.into_inner();
            ScenarioError::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parse and validate.
    pub fn load_valid(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let s = Self::load(path)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.rng_seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: ChannelMode) -> Self {
        self.app.channel_mode = mode;
        self
    }

    /// Apply `CONCURPAAS_SEED` when it is set to an integer.
    pub fn apply_env_seed(self) -> Self {
        match std::env::var(SEED_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
        {
            Some(seed) => self.with_seed(seed),
            None => self,
        }
    }

    /// Every unresolved reference or out-of-range value, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sim.horizon == VirtualTime::ZERO {
            out.push("sim.horizon_us must be > 0".to_string());
        }
        out.extend(self.fabric.problems());
        if self.registry.lease_duration.is_zero() {
            out.push("registry.lease_duration_us must be > 0".to_string());
        }
        if self.registry.evict_period.is_zero() {
            out.push("registry.evict_period_us must be > 0".to_string());
        }
        if self.gateway.buffer_capacity == 0 {
            out.push("gateway.buffer_capacity must be > 0".to_string());
        }
        out.extend(self.app.problems());
        out.extend(self.fire.problems());

        let services: BTreeSet<&str> = self
            .app
            .processes
            .iter()
            .map(|p| p.service_name.as_str())
            .collect();
        let known_behaviors = [fireapp::DETECTOR, fireapp::MANAGER, fireapp::SINK];
        for p in &self.app.processes {
            if !known_behaviors.contains(&p.behavior_id.as_str()) {
                out.push(format!(
                    "process {}: unknown behavior_id {}",
                    p.service_name, p.behavior_id
                ));
            }
        }

        let mut sensor_ids = BTreeSet::new();
        for s in &self.sensors {
            out.extend(s.problems());
            if !sensor_ids.insert(s.sensor_id.as_str()) {
                out.push(format!("duplicate sensor_id {}", s.sensor_id));
            }
        }

        let mut ports = BTreeSet::new();
        let mut bound = BTreeSet::new();
        for b in &self.bindings {
            if b.port == 0 {
                out.push(format!("binding for {}: port must be >= 1", b.sensor_id));
            }
            if !ports.insert(b.port) {
                out.push(format!("port {} bound twice", b.port));
            }
            if !sensor_ids.contains(b.sensor_id.as_str()) {
                out.push(format!(
                    "binding on port {} references unknown sensor {}",
                    b.port, b.sensor_id
                ));
            }
            if !bound.insert(b.sensor_id.as_str()) {
                out.push(format!(
                    "sensor {} bound to more than one port",
                    b.sensor_id
                ));
            }
            if !services.contains(b.service_name.as_str()) {
                out.push(format!(
                    "binding on port {} references unknown service {}",
                    b.port, b.service_name
                ));
            }
        }

        let uses = |id: &str| self.app.processes.iter().any(|p| p.behavior_id == id);
        if uses(fireapp::DETECTOR) && !services.contains(self.fire.alert_target.as_str()) {
            out.push(format!(
                "fire.alert_target references unknown service {}",
                self.fire.alert_target
            ));
        }
        for p in self
            .app
            .processes
            .iter()
            .filter(|p| p.behavior_id == fireapp::MANAGER)
        {
            let reprogram = p.param_bool("reprogram").ok().flatten().unwrap_or(true);
            let target = p
                .param_str("target_sensor")
                .unwrap_or_else(|| "sensor-B".into());
            if reprogram && !sensor_ids.contains(target.as_str()) {
                out.push(format!(
                    "process {}: target_sensor references unknown sensor {target}",
                    p.service_name
                ));
            }
            if let Some(svc) = p.param_str("scale_service") {
                if !services.contains(svc.as_str()) {
                    out.push(format!(
                        "process {}: scale_service references unknown service {svc}",
                        p.service_name
                    ));
                }
            }
            if let Err(e) = p.param_bool("reprogram").and(p.param_bool("scale")) {
                out.push(format!("process {}: {e}", p.service_name));
            }
        }

        if let Some(w) = &self.workload {
            if w.interval.is_zero() {
                out.push("workload.interval_us must be > 0".to_string());
            }
            if let Some(t) = &w.target_service {
                if !services.contains(t.as_str()) {
                    out.push(format!(
                        "workload.target_service references unknown service {t}"
                    ));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(problems))
        }
    }

    /// The forest-fire case study: sensor A heats past 50 °C at t = 10 s.
    pub fn fire_default() -> Self {
        let process = |service: &str, behavior: &str| ProcessSpec {
            service_name: service.to_string(),
            behavior_id: behavior.to_string(),
            init_params: InitParams::new(),
        };
        Scenario {
            sim: SimConfig {
                rng_seed: 7,
                horizon: VirtualTime::from_secs(30),
                trace_enabled: true,
            },
            fabric: FabricConfig::default(),
            registry: RegistryConfig::default(),
            gateway: GatewayConfig::default(),
            sensors: vec![
                SensorSpec {
                    sensor_id: "sensor-A".into(),
                    kind: SensorKind::Temperature,
                    sample_interval: SimDuration::from_secs(1),
                    enabled: true,
                    trace: vec![
                        (VirtualTime::ZERO, 24.0),
                        (VirtualTime::from_secs(10), 62.5),
                        (VirtualTime::from_secs(14), 41.0),
                    ],
                },
                SensorSpec {
                    sensor_id: "sensor-B".into(),
                    kind: SensorKind::Temperature,
                    sample_interval: SimDuration::from_secs(1),
                    enabled: true,
                    trace: vec![(VirtualTime::ZERO, 23.0)],
                },
                SensorSpec {
                    sensor_id: "light-A".into(),
                    kind: SensorKind::Light,
                    sample_interval: SimDuration::from_secs(5),
                    enabled: true,
                    trace: vec![
                        (VirtualTime::ZERO, 800.0),
                        (VirtualTime::from_secs(10), 2400.0),
                    ],
                },
            ],
            bindings: vec![
                PortBinding {
                    port: 5001,
                    sensor_id: "sensor-A".into(),
                    service_name: "fire-mgr-A".into(),
                },
                PortBinding {
                    port: 5002,
                    sensor_id: "sensor-B".into(),
                    service_name: "fire-mgr-B".into(),
                },
                PortBinding {
                    port: 5003,
                    sensor_id: "light-A".into(),
                    service_name: "fire-mgr-A".into(),
                },
            ],
            app: AppDescriptor {
                app_id: "forest-fire".into(),
                channel_mode: ChannelMode::Direct,
                processes: vec![
                    process("fire-mgr-A", fireapp::DETECTOR),
                    process("fire-mgr-B", fireapp::MANAGER),
                ],
                scaling: ScalePolicy {
                    trigger: ScaleTrigger::OnAlert,
                    instances_per_trigger: 1,
                    max_instances: 3,
                    startup_delay: SimDuration::from_millis(50),
                },
            },
            fire: FireConfig::default(),
            workload: None,
        }
    }
}
