//! Forest-fire detection application.
//!
//! Two cooperating processes:
//!
//! * the detector (`fire-detector`) watches temperature readings from its
//!   sensor and alerts the manager service when the threshold is exceeded;
//! * the manager (`fire-manager`) answers an alert by reprogramming the
//!   sampling interval of its own sensor through the gateway and by asking the
//!   runtime for another instance of itself.
//!
//! The decision logic is kept in plain functions so it can be tested without a
//! running platform; the `Behavior` impls only translate decisions into effects.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::iot::{ReprogramCommand, ReprogramParams, SensorKind, SensorReading};
use crate::netfabric::{MessageKind, NetMessage};
use crate::runtime::{Behavior, BehaviorCatalog, Effect, ProcessCtx, ProcessSpec, Sink};
use crate::simcore::Note;
use crate::time::{SimDuration, VirtualTime};

pub const DETECTOR: &str = "fire-detector";
pub const MANAGER: &str = "fire-manager";
pub const SINK: &str = "sink";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FireError {
    #[error("event log lacks {0:?}")]
    IncompleteScenario(FireEventKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FireConfig {
    #[serde(rename = "threshold_c")]
    pub threshold: f64,
    pub alert_target: String,
    #[serde(rename = "reprogram_interval_us")]
    pub reprogram_interval: SimDuration,
    #[serde(rename = "alert_cooldown_us")]
    pub alert_cooldown: SimDuration,
}

fn default_alert_target() -> String {
    "fire-mgr-B".to_string()
}

impl Default for FireConfig {
    fn default() -> Self {
        FireConfig {
            threshold: 50.0,
            alert_target: default_alert_target(),
            reprogram_interval: SimDuration::from_millis(100),
            alert_cooldown: SimDuration::from_secs(10),
        }
    }
}

impl FireConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.threshold.is_finite() {
            out.push("fire.threshold_c must be finite".to_string());
        }
        if self.reprogram_interval.is_zero() {
            out.push("fire.reprogram_interval_us must be > 0".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FireEventKind {
    Crossed,
    AlertSent,
    AlertReceived,
    ReprogramSent,
    ReprogramApplied,
    ScaleRequested,
}

impl fmt::Display for FireEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireLogEntry {
    pub t: VirtualTime,
    pub kind: FireEventKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FireEventLog {
    pub entries: Vec<FireLogEntry>,
}

impl FireEventLog {
    pub const CSV_HEADER: &'static str = "t_us,kind,detail";

    pub fn push(&mut self, t: VirtualTime, kind: FireEventKind, detail: impl Into<String>) {
        self.entries.push(FireLogEntry {
            t,
            kind,
            detail: detail.into(),
        });
    }

    pub fn first(&self, kind: FireEventKind) -> Option<VirtualTime> {
        self.entries.iter().find(|e| e.kind == kind).map(|e| e.t)
    }

    pub fn count(&self, kind: FireEventKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            // details never contain commas or quotes, but keep the file parseable regardless
            let detail = e.detail.replace(',', ";");
            out.push_str(&format!("{},{},{}\n", e.t.as_micros(), e.kind, detail));
        }
        out
    }
}

/// Time from the first threshold crossing to the first applied reprogram.
pub fn end_to_end_reaction_time(log: &FireEventLog) -> Result<SimDuration, FireError> {
    let crossed = log
        .first(FireEventKind::Crossed)
        .ok_or(FireError::IncompleteScenario(FireEventKind::Crossed))?;
    let applied =
        log.first(FireEventKind::ReprogramApplied)
            .ok_or(FireError::IncompleteScenario(
                FireEventKind::ReprogramApplied,
            ))?;
    Ok(applied.since(crossed))
}

/// Payload of an alert message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub sensor_id: String,
    pub value: f64,
    pub measured_at: VirtualTime,
    pub raised_at: VirtualTime,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorState {
    pub last_alert: Option<VirtualTime>,
    pub last_value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorDecision {
    /// The reading took the value from at-or-below the threshold to above it.
    pub crossed: bool,
    pub alert: Option<Alert>,
}

/// Decide whether a temperature reading raises an alert.
///
/// Alerts need `value > threshold` (equality does not alert) and at least
/// `alert_cooldown` since the previous alert. Non-temperature readings are ignored.
pub fn process_a_on_reading(
    reading: &SensorReading,
    cfg: &FireConfig,
    state: &mut DetectorState,
    now: VirtualTime,
) -> DetectorDecision {
    if reading.kind != SensorKind::Temperature {
        return DetectorDecision::default();
    }
    let hot = reading.value > cfg.threshold;
    let crossed = hot && state.last_value.is_none_or(|v| v <= cfg.threshold);
    state.last_value = Some(reading.value);
    if !hot {
        return DetectorDecision {
            crossed,
            alert: None,
        };
    }
    let cooled_down = state
        .last_alert
        .is_none_or(|last| now >= last + cfg.alert_cooldown);
    if !cooled_down {
        return DetectorDecision {
            crossed,
            alert: None,
        };
    }
    state.last_alert = Some(now);
    DetectorDecision {
        crossed,
        alert: Some(Alert {
            sensor_id: reading.sensor_id.clone(),
            value: reading.value,
            measured_at: reading.measured_at,
            raised_at: now,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleRequest {
    pub app_id: String,
    pub service: String,
}

/// The manager's answer to one alert.
pub fn process_b_on_alert(
    _alert: &Alert,
    cfg: &FireConfig,
    target_sensor: &str,
    app_id: &str,
    scale_service: &str,
) -> (ReprogramCommand, ScaleRequest) {
    (
        ReprogramCommand {
            target_sensor: target_sensor.to_string(),
            params: ReprogramParams {
                sample_interval: Some(cfg.reprogram_interval),
                ..Default::default()
            },
        },
        ScaleRequest {
            app_id: app_id.to_string(),
            service: scale_service.to_string(),
        },
    )
}

#[derive(Debug, Clone)]
pub struct FireDetector {
    cfg: FireConfig,
    state: DetectorState,
}

impl FireDetector {
    pub fn new(cfg: FireConfig) -> Self {
        FireDetector {
            cfg,
            state: DetectorState::default(),
        }
    }
}

impl Behavior for FireDetector {
    fn on_message(&mut self, ctx: &ProcessCtx<'_>, msg: &NetMessage, out: &mut Vec<Effect>) {
        if msg.kind != MessageKind::Reading {
            return;
        }
        let Ok(reading) = serde_json::from_slice::<SensorReading>(&msg.body) else {
            out.push(Effect::Note(Note::new("BadReading", ctx.instance_id)));
            return;
        };
        if reading.kind != SensorKind::Temperature {
            out.push(Effect::Note(Note::new(
                "LightObserved",
                format!("{}={}", reading.sensor_id, reading.value),
            )));
            return;
        }
        let decision = process_a_on_reading(&reading, &self.cfg, &mut self.state, ctx.now);
        if decision.crossed {
            out.push(Effect::Log {
                kind: FireEventKind::Crossed,
                detail: format!("{}={}", reading.sensor_id, reading.value),
            });
        }
        if let Some(alert) = decision.alert {
            out.push(Effect::SendToService {
                service: self.cfg.alert_target.clone(),
                kind: MessageKind::Alert,
                body: serde_json::to_vec(&alert).expect("alert serializes"),
            });
            out.push(Effect::Log {
                kind: FireEventKind::AlertSent,
                detail: format!("{}->{}", ctx.instance_id, self.cfg.alert_target),
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct FireManager {
    cfg: FireConfig,
    target_sensor: String,
    scale_service: Option<String>,
    reprogram: bool,
    scale: bool,
}

impl FireManager {
    /// Reads `target_sensor` (default `sensor-B`), `scale_service` (default: own
    /// service), and the `reprogram` / `scale` switches (default on) from `spec`.
    pub fn from_spec(cfg: FireConfig, spec: &ProcessSpec) -> Result<Self, String> {
        Ok(FireManager {
            cfg,
            target_sensor: spec
                .param_str("target_sensor")
                .unwrap_or_else(|| "sensor-B".into()),
            scale_service: spec.param_str("scale_service"),
            reprogram: spec.param_bool("reprogram")?.unwrap_or(true),
            scale: spec.param_bool("scale")?.unwrap_or(true),
        })
    }
}

impl Behavior for FireManager {
    fn on_message(&mut self, ctx: &ProcessCtx<'_>, msg: &NetMessage, out: &mut Vec<Effect>) {
        if msg.kind != MessageKind::Alert {
            return;
        }
        let Ok(alert) = serde_json::from_slice::<Alert>(&msg.body) else {
            out.push(Effect::Note(Note::new("BadAlert", ctx.instance_id)));
            return;
        };
        out.push(Effect::Log {
            kind: FireEventKind::AlertReceived,
            detail: format!("{} msg={}", ctx.instance_id, msg.msg_id.0),
        });
        let scale_service = self.scale_service.as_deref().unwrap_or(ctx.service_name);
        let (cmd, scale) = process_b_on_alert(
            &alert,
            &self.cfg,
            &self.target_sensor,
            ctx.app_id,
            scale_service,
        );
        if self.reprogram {
            out.push(Effect::SendToGateway {
                kind: MessageKind::Reprogram,
                body: serde_json::to_vec(&cmd).expect("command serializes"),
            });
            out.push(Effect::Log {
                kind: FireEventKind::ReprogramSent,
                detail: cmd.target_sensor.clone(),
            });
        }
        if self.scale {
            out.push(Effect::RequestScale {
                service: scale.service.clone(),
            });
            out.push(Effect::Log {
                kind: FireEventKind::ScaleRequested,
                detail: scale.service,
            });
        }
    }
}

/// Catalog with the fire detector, the fire manager and a sink.
pub fn standard_catalog(cfg: &FireConfig) -> BehaviorCatalog {
    let mut catalog = BehaviorCatalog::new();
    let detector_cfg = cfg.clone();
    catalog.register(DETECTOR, move |_| {
        Ok(Box::new(FireDetector::new(detector_cfg.clone())))
    });
    let manager_cfg = cfg.clone();
    catalog.register(MANAGER, move |spec| {
        Ok(Box::new(FireManager::from_spec(manager_cfg.clone(), spec)?))
    });
    catalog.register(SINK, |_| Ok(Box::new(Sink::default())));
    catalog
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfabric::{MsgId, NetAddress};
    use crate::runtime::InitParams;

    fn reading(value: f64, at_us: u64) -> SensorReading {
        SensorReading {
            sensor_id: "sensor-A".into(),
            kind: SensorKind::Temperature,
            value,
            measured_at: VirtualTime(at_us),
        }
    }

    #[test]
    fn below_threshold_no_alert() {
        let mut st = DetectorState::default();
        let d = process_a_on_reading(
            &reading(49.9, 0),
            &FireConfig::default(),
            &mut st,
            VirtualTime(0),
        );
        assert_eq!(d, DetectorDecision::default());
    }

    #[test]
    fn equality_does_not_alert() {
        let mut st = DetectorState::default();
        let d = process_a_on_reading(
            &reading(50.0, 0),
            &FireConfig::default(),
            &mut st,
            VirtualTime(0),
        );
        assert!(d.alert.is_none());
        assert!(!d.crossed);
    }

    #[test]
    fn above_threshold_alerts() {
        let mut st = DetectorState::default();
        let d = process_a_on_reading(
            &reading(50.1, 7),
            &FireConfig::default(),
            &mut st,
            VirtualTime(9),
        );
        assert!(d.crossed);
        let alert = d.alert.unwrap();
        assert_eq!(alert.value, 50.1);
        assert_eq!(alert.raised_at, VirtualTime(9));
        assert_eq!(st.last_alert, Some(VirtualTime(9)));
    }

    #[test]
    fn cooldown_suppresses_second_crossing() {
        let cfg = FireConfig::default();
        let mut st = DetectorState::default();
        let mut alerts = 0;
        for (i, v) in [60.0, 20.0, 61.0].iter().enumerate() {
            let t = VirtualTime(i as u64 * 500);
            if process_a_on_reading(&reading(*v, t.0), &cfg, &mut st, t)
                .alert
                .is_some()
            {
                alerts += 1;
            }
        }
        // crossings at 0 and 1000us, cooldown 10s
        assert_eq!(alerts, 1);
    }

    #[test]
    fn cooldown_elapses() {
        let cfg = FireConfig::default();
        let mut st = DetectorState::default();
        assert!(
            process_a_on_reading(&reading(60.0, 0), &cfg, &mut st, VirtualTime(0))
                .alert
                .is_some()
        );
        let at = VirtualTime(cfg.alert_cooldown.as_micros());
        let d = process_a_on_reading(&reading(60.0, at.0), &cfg, &mut st, at);
        assert!(d.alert.is_some());
        assert!(!d.crossed, "still hot, not a new crossing");
    }

    #[test]
    fn light_readings_are_ignored() {
        let mut st = DetectorState::default();
        let mut r = reading(900.0, 0);
        r.kind = SensorKind::Light;
        assert_eq!(
            process_a_on_reading(&r, &FireConfig::default(), &mut st, VirtualTime(0)),
            DetectorDecision::default()
        );
        assert_eq!(st, DetectorState::default());
    }

    #[test]
    fn manager_answer() {
        let cfg = FireConfig::default();
        let alert = Alert {
            sensor_id: "sensor-A".into(),
            value: 70.0,
            measured_at: VirtualTime(1),
            raised_at: VirtualTime(2),
        };
        let (cmd, scale) = process_b_on_alert(&alert, &cfg, "sensor-B", "fire", "fire-mgr-B");
        assert_eq!(cmd.target_sensor, "sensor-B");
        assert_eq!(cmd.params.sample_interval, Some(cfg.reprogram_interval));
        assert_eq!(cmd.params.enabled, None);
        assert_eq!(
            scale,
            ScaleRequest {
                app_id: "fire".into(),
                service: "fire-mgr-B".into()
            }
        );
    }

    fn ctx() -> ProcessCtx<'static> {
        ProcessCtx {
            now: VirtualTime(5),
            app_id: "fire",
            service_name: "fire-mgr-B",
            instance_id: "fire-mgr-B-1",
            address: NetAddress(3),
        }
    }

    fn alert_msg() -> NetMessage {
        let alert = Alert {
            sensor_id: "sensor-A".into(),
            value: 70.0,
            measured_at: VirtualTime(1),
            raised_at: VirtualTime(2),
        };
        NetMessage {
            msg_id: MsgId(4),
            src: NetAddress(2),
            dst: NetAddress(3),
            kind: MessageKind::Alert,
            body: serde_json::to_vec(&alert).unwrap(),
            sent_at: VirtualTime(2),
            attempt: 1,
        }
    }

    #[test]
    fn manager_emits_one_reprogram_and_one_scale() {
        let spec = ProcessSpec {
            service_name: "fire-mgr-B".into(),
            behavior_id: MANAGER.into(),
            init_params: InitParams::new(),
        };
        let mut m = FireManager::from_spec(FireConfig::default(), &spec).unwrap();
        let mut out = Vec::new();
        m.on_message(&ctx(), &alert_msg(), &mut out);
        let reprograms = out
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    Effect::SendToGateway {
                        kind: MessageKind::Reprogram,
                        ..
                    }
                )
            })
            .count();
        let scales = out
            .iter()
            .filter(|e| matches!(e, Effect::RequestScale { service } if service == "fire-mgr-B"))
            .count();
        assert_eq!((reprograms, scales), (1, 1));
    }

    #[test]
    fn manager_switches() {
        let mut params = InitParams::new();
        params.insert("scale".into(), serde_json::Value::Bool(false));
        params.insert("target_sensor".into(), "sensor-Z".into());
        let spec = ProcessSpec {
            service_name: "fire-mgr-B".into(),
            behavior_id: MANAGER.into(),
            init_params: params,
        };
        let mut m = FireManager::from_spec(FireConfig::default(), &spec).unwrap();
        let mut out = Vec::new();
        m.on_message(&ctx(), &alert_msg(), &mut out);
        assert!(!out.iter().any(|e| matches!(e, Effect::RequestScale { .. })));
        let Some(Effect::SendToGateway { body, .. }) = out
            .iter()
            .find(|e| matches!(e, Effect::SendToGateway { .. }))
        else {
            panic!("no reprogram");
        };
        let cmd: ReprogramCommand = serde_json::from_slice(body).unwrap();
        assert_eq!(cmd.target_sensor, "sensor-Z");

        let mut bad = spec.clone();
        bad.init_params
            .insert("reprogram".into(), serde_json::json!(3));
        assert!(FireManager::from_spec(FireConfig::default(), &bad).is_err());
    }

    #[test]
    fn reaction_time_from_log() {
        let mut log = FireEventLog::default();
        log.push(VirtualTime(10_005_000), FireEventKind::Crossed, "");
        assert_eq!(
            end_to_end_reaction_time(&log),
            Err(FireError::IncompleteScenario(
                FireEventKind::ReprogramApplied
            ))
        );
        log.push(VirtualTime(10_020_000), FireEventKind::ReprogramApplied, "");
        assert_eq!(end_to_end_reaction_time(&log), Ok(SimDuration(15_000)));
        assert_eq!(
            end_to_end_reaction_time(&FireEventLog::default()),
            Err(FireError::IncompleteScenario(FireEventKind::Crossed))
        );
    }

    #[test]
    fn csv_export() {
        let mut log = FireEventLog::default();
        log.push(VirtualTime(3), FireEventKind::AlertSent, "a,b");
        assert_eq!(log.to_csv(), "t_us,kind,detail\n3,AlertSent,a;b\n");
    }
}
