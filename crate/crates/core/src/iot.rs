//! IaaS layer: virtual sensors, the gateway, and sensor reprogramming.
//!
//! Sensors replay a step-interpolated value trace on a fixed sampling
//! interval. Each reading lands at the gateway, which keeps it in the ring
//! buffer of the sensor's port and forwards it to whichever live instance of
//! the bound service the registry hands out for that reading.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::netfabric::{
    ChannelMode, Fabric, FabricError, FabricEvent, MessageKind, MsgId, NetAddress,
};
use crate::registry::Registry;
use crate::simcore::{Engine, EventId, EventPayload, Note};
use crate::time::{SimDuration, VirtualTime};

pub const GATEWAY_OWNER: &str = "gateway";
pub const DEFAULT_PORT_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IotError {
    #[error("sensor {0} already exists")]
    DuplicateSensor(String),
    #[error("unknown sensor {0}")]
    UnknownSensor(String),
    #[error("port {0} is already bound")]
    PortInUse(u32),
    #[error("sensor {0} is already bound to a port")]
    SensorAlreadyBound(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorKind {
    #[serde(alias = "temperature")]
    Temperature,
    #[serde(alias = "light")]
    Light,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorKind::Temperature => f.write_str("Temperature"),
            SensorKind::Light => f.write_str("Light"),
        }
    }
}

/// `(time, value)` breakpoints; the value holds until the next breakpoint.
pub type ValueTrace = Vec<(VirtualTime, f64)>;

fn trace_problem(trace: &[(VirtualTime, f64)]) -> Option<String> {
    if trace.is_empty() {
        return Some("trace must have at least one breakpoint".into());
    }
    if trace.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Some("trace times must be strictly increasing".into());
    }
    if trace.iter().any(|(_, v)| !v.is_finite()) {
        return Some("trace values must be finite".into());
    }
    None
}

/// Step interpolation. Before the first breakpoint the first value applies.
pub fn value_at(trace: &[(VirtualTime, f64)], t: VirtualTime) -> f64 {
    let idx = trace.partition_point(|(bt, _)| *bt <= t);
    match idx {
        0 => trace.first().map_or(0.0, |p| p.1),
        i => trace[i - 1].1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: String,
    pub kind: SensorKind,
    #[serde(rename = "sample_interval_us")]
    pub sample_interval: SimDuration,
    #[serde(default = "yes")]
    pub enabled: bool,
    pub trace: ValueTrace,
}

fn yes() -> bool {
    true
}

impl SensorSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sensor_id.is_empty() {
            out.push("sensor_id must be non-empty".into());
        }
        if self.sample_interval.is_zero() {
            out.push(format!(
                "sensor {}: sample_interval_us must be > 0",
                self.sensor_id
            ));
        }
        if let Some(p) = trace_problem(&self.trace) {
            out.push(format!("sensor {}: {p}", self.sensor_id));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: String,
    pub kind: SensorKind,
    pub value: f64,
    pub measured_at: VirtualTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortBinding {
    pub port: u32,
    pub sensor_id: String,
    pub service_name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReprogramParams {
    #[serde(
        rename = "sample_interval_us",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub sample_interval: Option<SimDuration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_override: Option<ValueTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprogramCommand {
    pub target_sensor: String,
    pub params: ReprogramParams,
}

impl ReprogramCommand {
    pub fn validate(&self) -> Result<(), IotError> {
        let p = &self.params;
        if p.sample_interval.is_none() && p.enabled.is_none() && p.trace_override.is_none() {
            return Err(IotError::InvalidParam("no parameters given".into()));
        }
        if p.sample_interval.is_some_and(|d| d.is_zero()) {
            return Err(IotError::InvalidParam("sample_interval must be > 0".into()));
        }
        if let Some(problem) = p.trace_override.as_deref().and_then(trace_problem) {
            return Err(IotError::InvalidParam(format!("trace_override: {problem}")));
        }
        Ok(())
    }

    /// Build a command from `key=value` pairs.
    ///
    /// Keys: `sample_interval_us`, `sample_interval` (with `us`/`ms`/`s` suffix),
    /// `enabled`, and `trace_override` as `t_us:value,t_us:value,...`.
    pub fn from_pairs<S: AsRef<str>>(target: &str, pairs: &[S]) -> Result<Self, IotError> {
        let mut params = ReprogramParams::default();
        for pair in pairs {
            let pair = pair.as_ref();
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                IotError::InvalidParam(format!("expected key=value, got {pair:?}"))
            })?;
            let bad = |what: &str| IotError::InvalidParam(format!("{key}: {what} {value:?}"));
            match key {
                "sample_interval_us" => {
                    params.sample_interval = Some(SimDuration(
                        value.parse().map_err(|_| bad("not an integer"))?,
                    ));
                }
                "sample_interval" => {
                    params.sample_interval =
                        Some(parse_duration(value).ok_or_else(|| bad("bad duration"))?);
                }
                "enabled" => {
                    params.enabled = Some(value.parse().map_err(|_| bad("not a boolean"))?);
                }
                "trace_override" => {
                    let mut trace = Vec::new();
                    for point in value.split(',') {
                        let (t, v) = point
                            .split_once(':')
                            .ok_or_else(|| bad("bad breakpoint in"))?;
                        let t: u64 = t.trim().parse().map_err(|_| bad("bad time in"))?;
                        let v: f64 = v.trim().parse().map_err(|_| bad("bad value in"))?;
                        trace.push((VirtualTime(t), v));
                    }
                    params.trace_override = Some(trace);
                }
                _ => return Err(IotError::InvalidParam(format!("unknown key {key:?}"))),
            }
        }
        let cmd = ReprogramCommand {
            target_sensor: target.to_string(),
            params,
        };
        cmd.validate()?;
        Ok(cmd)
    }
}

fn parse_duration(s: &str) -> Option<SimDuration> {
    let s = s.trim();
    let (num, scale) = if let Some(n) = s.strip_suffix("us") {
        (n, 1)
    } else if let Some(n) = s.strip_suffix("ms") {
        (n, 1_000)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1_000_000)
    } else {
        (s, 1)
    };
    num.trim()
        .parse::<u64>()
        .ok()
        .map(|n| SimDuration(n * scale))
}

/// Current parameter set of a sensor, as returned by a reprogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    #[serde(rename = "sample_interval_us")]
    pub sample_interval: SimDuration,
    pub enabled: bool,
    pub trace: ValueTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IotEvent {
    SensorTick { sensor_id: String },
}

impl EventPayload for IotEvent {
    fn kind(&self) -> &str {
        match self {
            IotEvent::SensorTick { .. } => "SensorTick",
        }
    }
}

pub fn sensor_owner(sensor_id: &str) -> String {
    format!("sensor:{sensor_id}")
}

#[derive(Debug, Clone)]
struct Sensor {
    spec: SensorSpec,
    address: NetAddress,
    next_tick: Option<EventId>,
    emitted: Vec<VirtualTime>,
}

#[derive(Debug, Clone)]
struct Port {
    binding: PortBinding,
    buffer: VecDeque<SensorReading>,
}

/// Result of pushing one reading through the gateway.
#[derive(Debug, Clone, PartialEq)]
pub enum Ingest {
    Forwarded {
        msg_id: MsgId,
        to: NetAddress,
    },
    /// Stored on the port, but the bound service had no live instance.
    BufferedOnly,
    /// The sensor has no port binding.
    Unbound,
}

#[derive(Debug, Clone)]
pub struct Iot {
    sensors: BTreeMap<String, Sensor>,
    ports: BTreeMap<u32, Port>,
    port_of: BTreeMap<String, u32>,
    capacity: usize,
    gateway: NetAddress,
}

impl Iot {
    /// Set up the gateway and give it a network interface.
    pub fn new(fabric: &mut Fabric, capacity: usize) -> Result<Self, IotError> {
        let gateway = fabric.allocate_interface(GATEWAY_OWNER)?;
        Ok(Iot {
            sensors: BTreeMap::new(),
            ports: BTreeMap::new(),
            port_of: BTreeMap::new(),
            capacity: capacity.max(1),
            gateway,
        })
    }

    pub fn gateway_address(&self) -> NetAddress {
        self.gateway
    }

    pub fn create_sensor<P>(
        &mut self,
        spec: SensorSpec,
        engine: &mut Engine<P>,
        fabric: &mut Fabric,
    ) -> Result<String, IotError>
    where
        P: EventPayload + From<IotEvent>,
    {
        if self.sensors.contains_key(&spec.sensor_id) {
            return Err(IotError::DuplicateSensor(spec.sensor_id));
        }
        if let Some(p) = spec.problems().into_iter().next() {
            return Err(IotError::InvalidParam(p));
        }
        let id = spec.sensor_id.clone();
        let address = fabric.allocate_interface(&sensor_owner(&id))?;
        let mut sensor = Sensor {
            spec,
            address,
            next_tick: None,
            emitted: Vec::new(),
        };
        if sensor.spec.enabled {
            sensor.next_tick = schedule_tick(engine, &id, sensor.spec.sample_interval);
        }
        self.sensors.insert(id.clone(), sensor);
        Ok(id)
    }

    pub fn bind_port(
        &mut self,
        port: u32,
        sensor_id: &str,
        service_name: &str,
    ) -> Result<(), IotError> {
        if !self.sensors.contains_key(sensor_id) {
            return Err(IotError::UnknownSensor(sensor_id.to_string()));
        }
        if self.ports.contains_key(&port) {
            return Err(IotError::PortInUse(port));
        }
        if self.port_of.contains_key(sensor_id) {
            return Err(IotError::SensorAlreadyBound(sensor_id.to_string()));
        }
        self.ports.insert(
            port,
            Port {
                binding: PortBinding {
                    port,
                    sensor_id: sensor_id.to_string(),
                    service_name: service_name.to_string(),
                },
                buffer: VecDeque::new(),
            },
        );
        self.port_of.insert(sensor_id.to_string(), port);
        Ok(())
    }

    /// Emit the sensor's reading for this tick and schedule the next one.
    pub fn on_tick<P>(&mut self, sensor_id: &str, engine: &mut Engine<P>) -> Option<SensorReading>
    where
        P: EventPayload + From<IotEvent>,
    {
        let now = engine.now();
        let sensor = self.sensors.get_mut(sensor_id)?;
        sensor.next_tick = None;
        if !sensor.spec.enabled {
            return None;
        }
        sensor.emitted.push(now);
        sensor.next_tick = schedule_tick(engine, sensor_id, sensor.spec.sample_interval);
        Some(SensorReading {
            sensor_id: sensor_id.to_string(),
            kind: sensor.spec.kind,
            value: value_at(&sensor.spec.trace, now),
            measured_at: now,
        })
    }

    /// Store the reading on its port and forward it to a live instance of the bound service.
    pub fn ingest<P>(
        &mut self,
        reading: SensorReading,
        engine: &mut Engine<P>,
        fabric: &mut Fabric,
        registry: &mut Registry,
        mode: ChannelMode,
    ) -> Ingest
    where
        P: EventPayload + From<FabricEvent> + From<Note>,
    {
        let Some(port) = self
            .port_of
            .get(&reading.sensor_id)
            .and_then(|p| self.ports.get_mut(p))
        else {
            engine.note(
                GATEWAY_OWNER,
                Note::new("ReadingDropped", reading.sensor_id.clone()),
            );
            return Ingest::Unbound;
        };
        if port.buffer.len() == self.capacity {
            port.buffer.pop_front();
        }
        port.buffer.push_back(reading.clone());
        let service = port.binding.service_name.clone();
        let now = engine.now();
        let dst = match registry.lookup(&service, now) {
            Ok(dst) => dst,
            Err(_) => {
                engine.note(GATEWAY_OWNER, Note::new("ForwardSkipped", service));
                return Ingest::BufferedOnly;
            }
        };
        let body = serde_json::to_vec(&reading).expect("reading serializes");
        match fabric.send_to(engine, self.gateway, dst, mode, MessageKind::Reading, body) {
            Ok(msg_id) => Ingest::Forwarded { msg_id, to: dst },
            Err(_) => {
                engine.note(GATEWAY_OWNER, Note::new("ForwardSkipped", service));
                Ingest::BufferedOnly
            }
        }
    }

    /// Relay a reprogram command from the gateway to the sensor over one direct hop.
    pub fn forward_reprogram<P>(
        &mut self,
        cmd: &ReprogramCommand,
        engine: &mut Engine<P>,
        fabric: &mut Fabric,
    ) -> Result<MsgId, IotError>
    where
        P: EventPayload + From<FabricEvent>,
    {
        cmd.validate()?;
        let sensor = self
            .sensors
            .get(&cmd.target_sensor)
            .ok_or_else(|| IotError::UnknownSensor(cmd.target_sensor.clone()))?;
        let body = serde_json::to_vec(cmd).expect("command serializes");
        Ok(fabric.send_to(
            engine,
            self.gateway,
            sensor.address,
            ChannelMode::Direct,
            MessageKind::Reprogram,
            body,
        )?)
    }

    /// Replace the listed parameters and reschedule emission under the new settings.
    pub fn apply_reprogram<P>(
        &mut self,
        cmd: &ReprogramCommand,
        engine: &mut Engine<P>,
    ) -> Result<SensorParams, IotError>
    where
        P: EventPayload + From<IotEvent>,
    {
        cmd.validate()?;
        let sensor = self
            .sensors
            .get_mut(&cmd.target_sensor)
            .ok_or_else(|| IotError::UnknownSensor(cmd.target_sensor.clone()))?;
        let p = &cmd.params;
        if let Some(interval) = p.sample_interval {
            sensor.spec.sample_interval = interval;
        }
        if let Some(enabled) = p.enabled {
            sensor.spec.enabled = enabled;
        }
        if let Some(trace) = &p.trace_override {
            sensor.spec.trace = trace.clone();
        }
        if p.sample_interval.is_some() || p.enabled.is_some() {
            if let Some(pending) = sensor.next_tick.take() {
                engine.cancel(pending);
            }
            if sensor.spec.enabled {
                sensor.next_tick =
                    schedule_tick(engine, &cmd.target_sensor, sensor.spec.sample_interval);
            }
        }
        Ok(params_of(&sensor.spec))
    }

    pub fn sensor_params(&self, sensor_id: &str) -> Option<SensorParams> {
        self.sensors.get(sensor_id).map(|s| params_of(&s.spec))
    }

    pub fn sensor_address(&self, sensor_id: &str) -> Option<NetAddress> {
        self.sensors.get(sensor_id).map(|s| s.address)
    }

    pub fn sensor_by_address(&self, addr: NetAddress) -> Option<&str> {
        self.sensors
            .iter()
            .find(|(_, s)| s.address == addr)
            .map(|(id, _)| id.as_str())
    }

    /// Emission times of a sensor so far.
    pub fn emissions(&self, sensor_id: &str) -> &[VirtualTime] {
        self.sensors
            .get(sensor_id)
            .map_or(&[][..], |s| s.emitted.as_slice())
    }

    pub fn port_buffer(&self, port: u32) -> Option<&VecDeque<SensorReading>> {
        self.ports.get(&port).map(|p| &p.buffer)
    }

    pub fn bindings(&self) -> impl Iterator<Item = &PortBinding> {
        self.ports.values().map(|p| &p.binding)
    }

    pub fn sensor_ids(&self) -> impl Iterator<Item = &str> {
        self.sensors.keys().map(String::as_str)
    }
}

fn params_of(spec: &SensorSpec) -> SensorParams {
    SensorParams {
        sample_interval: spec.sample_interval,
        enabled: spec.enabled,
        trace: spec.trace.clone(),
    }
}

fn schedule_tick<P>(
    engine: &mut Engine<P>,
    sensor_id: &str,
    interval: SimDuration,
) -> Option<EventId>
where
    P: EventPayload + From<IotEvent>,
{
    engine
        .schedule(
            interval,
            sensor_owner(sensor_id),
            IotEvent::SensorTick {
                sensor_id: sensor_id.to_string(),
            }
            .into(),
        )
        .ok()
}
