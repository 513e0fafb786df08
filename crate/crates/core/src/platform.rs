//! One simulated platform: engine, registry, fabric, runtime, gateway and
//! sensors, with the event dispatch that connects them.

use std::collections::BTreeMap;

use crate::fireapp::{self, FireEventKind, FireEventLog};
use crate::iot::{self, Iot, IotError, IotEvent, ReprogramCommand, SensorParams, GATEWAY_OWNER};
use crate::netfabric::{
    ChannelId, ChannelMode, Fabric, FabricError, FabricEvent, FabricOutcome, LatencySample,
    MessageKind, MsgId, NetAddress, NetMessage,
};
use crate::registry::{Registry, RegistryError, ServiceRecord};
use crate::runtime::{
    AppDescriptor, ContainerHandle, Effect, Runtime, RuntimeError, RuntimeEvent, ScaleTrigger,
};
use crate::scenario::{Scenario, ScenarioError, WorkloadSpec};
use crate::simcore::{Engine, EventPayload, Note, SimError, SimEvent, TraceLog};
use crate::time::{SimDuration, VirtualTime};

pub const WORKLOAD_OWNER: &str = "workload";
const REGISTRY_TARGET: &str = "registry";

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Iot(#[from] IotError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Net(FabricEvent),
    Sensor(IotEvent),
    Runtime(RuntimeEvent),
    Evict,
    Workload,
    Note(Note),
}

impl EventPayload for Event {
    fn kind(&self) -> &str {
        match self {
            Event::Net(e) => e.kind(),
            Event::Sensor(e) => e.kind(),
            Event::Runtime(e) => e.kind(),
            Event::Evict => "Evict",
            Event::Workload => "WorkloadSend",
            Event::Note(n) => n.kind,
        }
    }
}

impl From<FabricEvent> for Event {
    fn from(e: FabricEvent) -> Self {
        Event::Net(e)
    }
}

impl From<IotEvent> for Event {
    fn from(e: IotEvent) -> Self {
        Event::Sensor(e)
    }
}

impl From<RuntimeEvent> for Event {
    fn from(e: RuntimeEvent) -> Self {
        Event::Runtime(e)
    }
}

impl From<Note> for Event {
    fn from(n: Note) -> Self {
        Event::Note(n)
    }
}

/// One application-level delivery (after fabric dedup).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub msg_id: MsgId,
    pub kind: MessageKind,
    pub dst: NetAddress,
    pub at: VirtualTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WorkloadStats {
    pub sent: u64,
    pub skipped: u64,
    pub delivered: u64,
}

#[derive(Debug)]
struct Workload {
    spec: WorkloadSpec,
    address: NetAddress,
    service: String,
    mode: ChannelMode,
    channel: Option<ChannelId>,
    issued: u64,
    sent: Vec<MsgId>,
    skipped: u64,
}

#[derive(Debug)]
struct World {
    fabric: Fabric,
    registry: Registry,
    runtime: Runtime,
    iot: Iot,
    fire_log: FireEventLog,
    deliveries: Vec<Delivery>,
    failures: Vec<NetMessage>,
    workload: Option<Workload>,
}

pub struct Platform {
    engine: Engine<Event>,
    world: World,
}

impl Platform {
    /// Build and deploy everything the scenario describes. Nothing runs until `run_until`.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, PlatformError> {
        scenario.validate()?;
        let mut engine = Engine::new(scenario.sim);
        let mut fabric = Fabric::new(scenario.fabric);
        let registry = Registry::new(scenario.registry);
        // renew three times per lease
        let heartbeat = SimDuration((scenario.registry.lease_duration.as_micros() / 3).max(1));
        let runtime = Runtime::new(fireapp::standard_catalog(&scenario.fire), heartbeat);
        let mut iot = Iot::new(&mut fabric, scenario.gateway.buffer_capacity)?;
        for spec in &scenario.sensors {
            iot.create_sensor(spec.clone(), &mut engine, &mut fabric)?;
        }
        for b in &scenario.bindings {
            iot.bind_port(b.port, &b.sensor_id, &b.service_name)?;
        }
        let _ = engine.schedule(
            scenario.registry.evict_period,
            REGISTRY_TARGET,
            Event::Evict,
        );

        let mut world = World {
            fabric,
            registry,
            runtime,
            iot,
            fire_log: FireEventLog::default(),
            deliveries: Vec::new(),
            failures: Vec::new(),
            workload: None,
        };
        world
            .runtime
            .deploy(scenario.app.clone(), &mut engine, &mut world.fabric)?;

        if let Some(spec) = &scenario.workload {
            let address = world.fabric.allocate_interface(WORKLOAD_OWNER)?;
            let service = spec
                .target_service
                .clone()
                .unwrap_or_else(|| scenario.app.processes[0].service_name.clone());
            let start = spec
                .start
                .unwrap_or(VirtualTime::ZERO + scenario.app.scaling.startup_delay);
            if spec.msg_count > 0 {
                let _ = engine.schedule_at(start, WORKLOAD_OWNER, Event::Workload);
            }
            world.workload = Some(Workload {
                spec: spec.clone(),
                address,
                service,
                mode: scenario.app.channel_mode,
                channel: None,
                issued: 0,
                sent: Vec::new(),
                skipped: 0,
            });
        }
        Ok(Platform { engine, world })
    }

    pub fn now(&self) -> VirtualTime {
        self.engine.now()
    }

    pub fn horizon(&self) -> VirtualTime {
        self.engine.horizon()
    }

    pub fn seed(&self) -> u64 {
        self.engine.config().rng_seed
    }

    /// Execute every event up to and including `t`.
    pub fn run_until(&mut self, t: VirtualTime) -> usize {
        let world = &mut self.world;
        self.engine.run_until(t, |eng, ev| world.handle(eng, ev))
    }

    pub fn run_to_horizon(&mut self) -> usize {
        let h = self.horizon();
        self.run_until(h)
    }

    /// Like `run_until`, checking after every event that running containers
    /// match live registry records and that no service exceeds its cap.
    pub fn run_until_checked(&mut self, t: VirtualTime) -> Result<usize, String> {
        let world = &mut self.world;
        let mut violation = None;
        let n = self.engine.run_until(t, |eng, ev| {
            world.handle(eng, ev);
            if violation.is_none() {
                violation = world.check_invariants(eng.now()).err();
            }
        });
        match violation {
            Some(v) => Err(v),
            None => Ok(n),
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.world.check_invariants(self.now())
    }

    pub fn deploy(
        &mut self,
        descriptor: AppDescriptor,
    ) -> Result<Vec<ContainerHandle>, RuntimeError> {
        self.world
            .runtime
            .deploy(descriptor, &mut self.engine, &mut self.world.fabric)
    }

    /// Operator-requested scale out; hitting the cap is an error here.
    pub fn scale_out(
        &mut self,
        app_id: &str,
        service: &str,
    ) -> Result<Vec<ContainerHandle>, RuntimeError> {
        self.world
            .runtime
            .scale_out(app_id, service, &mut self.engine, &mut self.world.fabric)
    }

    pub fn stop_app(&mut self, app_id: &str) -> Result<usize, RuntimeError> {
        self.world
            .runtime
            .stop_app(app_id, &mut self.engine, &mut self.world.registry)
    }

    /// Apply a reprogram command to a sensor right now (operator access to interface C).
    pub fn reprogram(&mut self, cmd: &ReprogramCommand) -> Result<SensorParams, IotError> {
        self.world.iot.apply_reprogram(cmd, &mut self.engine)
    }

    pub fn registry(&self) -> &Registry {
        &self.world.registry
    }

    pub fn registry_dump(&self) -> Vec<ServiceRecord> {
        self.world.registry.snapshot()
    }

    pub fn runtime(&self) -> &Runtime {
        &self.world.runtime
    }

    pub fn fabric(&self) -> &Fabric {
        &self.world.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.world.fabric
    }

    pub fn iot(&self) -> &Iot {
        &self.world.iot
    }

    pub fn fire_log(&self) -> &FireEventLog {
        &self.world.fire_log
    }

    pub fn trace(&self) -> &TraceLog {
        self.engine.trace()
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.world.deliveries
    }

    pub fn failures(&self) -> &[NetMessage] {
        &self.world.failures
    }

    pub fn drain_samples(&mut self) -> Vec<LatencySample> {
        self.world.fabric.drain_samples()
    }

    /// Msg ids the workload client managed to send.
    pub fn workload_sent(&self) -> &[MsgId] {
        self.world
            .workload
            .as_ref()
            .map_or(&[][..], |w| w.sent.as_slice())
    }

    pub fn workload_stats(&self) -> Option<WorkloadStats> {
        let w = self.world.workload.as_ref()?;
        let delivered = self
            .world
            .deliveries
            .iter()
            .filter(|d| {
                d.dst != w.address
                    && self.world.fabric.owner_of(d.dst).is_some()
                    && d.kind == MessageKind::Custom
            })
            .count() as u64;
        Some(WorkloadStats {
            sent: w.sent.len() as u64,
            skipped: w.skipped,
            delivered,
        })
    }

    /// Instance counts per `(app, service)` for running or deploying containers.
    pub fn instance_counts(&self) -> BTreeMap<(String, String), u32> {
        let mut out = BTreeMap::new();
        for c in self.world.runtime.containers() {
            let key = (c.app_id.clone(), c.process.service_name.clone());
            let n = self.world.runtime.instance_count(&key.0, &key.1);
            out.insert(key, n);
        }
        out
    }
}

impl World {
    fn handle(&mut self, eng: &mut Engine<Event>, ev: SimEvent<Event>) {
        match ev.payload {
            Event::Net(fe) => match self.fabric.handle(eng, fe) {
                Some(FabricOutcome::Delivered(msg)) => self.on_delivered(eng, msg),
                Some(FabricOutcome::Failed(msg)) => self.failures.push(msg),
                None => {}
            },
            Event::Sensor(IotEvent::SensorTick { sensor_id }) => {
                if let Some(reading) = self.iot.on_tick(&sensor_id, eng) {
                    let mode = self.mode_for_service_bound_to(&sensor_id);
                    self.iot
                        .ingest(reading, eng, &mut self.fabric, &mut self.registry, mode);
                }
            }
            Event::Runtime(RuntimeEvent::Register { container_id }) => {
                if let Err(e) =
                    self.runtime
                        .on_register(&container_id, eng, &mut self.registry, &self.fabric)
                {
                    eng.note(ev.target, Note::new("RegisterFailed", e.to_string()));
                }
            }
            Event::Runtime(RuntimeEvent::Heartbeat { container_id }) => {
                if let Err(e) =
                    self.runtime
                        .on_heartbeat(&container_id, eng, &mut self.registry, &self.fabric)
                {
                    eng.note(ev.target, Note::new("HeartbeatFailed", e.to_string()));
                }
            }
            Event::Runtime(RuntimeEvent::Scale { app_id, service }) => {
                self.on_scale_request(eng, &app_id, &service);
            }
            Event::Evict => {
                let now = eng.now();
                for (svc, inst) in self.registry.evict_expired(now) {
                    eng.note(
                        REGISTRY_TARGET,
                        Note::new("Evicted", format!("{svc}/{inst}")),
                    );
                }
                let _ = eng.schedule(
                    self.registry.config().evict_period,
                    REGISTRY_TARGET,
                    Event::Evict,
                );
            }
            Event::Workload => self.on_workload_tick(eng),
            Event::Note(_) => {}
        }
    }

    /// Channel mode of the app that owns the service the sensor is bound to.
    fn mode_for_service_bound_to(&self, sensor_id: &str) -> ChannelMode {
        let service = self
            .iot
            .bindings()
            .find(|b| b.sensor_id == sensor_id)
            .map(|b| b.service_name.as_str());
        self.runtime
            .containers()
            .find(|c| Some(c.process.service_name.as_str()) == service)
            .and_then(|c| self.runtime.descriptor(&c.app_id))
            .map_or(ChannelMode::Direct, |d| d.channel_mode)
    }

    fn on_delivered(&mut self, eng: &mut Engine<Event>, msg: NetMessage) {
        let now = eng.now();
        self.deliveries.push(Delivery {
            msg_id: msg.msg_id,
            kind: msg.kind,
            dst: msg.dst,
            at: now,
        });
        if msg.dst == self.iot.gateway_address() {
            self.on_gateway_message(eng, &msg);
            return;
        }
        if let Some(sensor) = self.iot.sensor_by_address(msg.dst).map(str::to_string) {
            self.on_sensor_message(eng, &sensor, &msg);
            return;
        }
        let Some(container_id) = self.runtime.container_at(msg.dst).map(str::to_string) else {
            if self.fabric.owner_of(msg.dst) != Some(WORKLOAD_OWNER) {
                eng.note(GATEWAY_OWNER, Note::new("Unroutable", msg.dst.to_string()));
            }
            return;
        };
        match self.runtime.deliver_to_process(&container_id, &msg, now) {
            Ok(effects) => self.apply_effects(eng, &container_id, effects),
            Err(dead) => eng.note(
                format!("container:{container_id}"),
                Note::new(
                    "DeadLetter",
                    format!("{} msg={}", dead.container_id, msg.msg_id.0),
                ),
            ),
        }
    }

    fn on_gateway_message(&mut self, eng: &mut Engine<Event>, msg: &NetMessage) {
        if msg.kind != MessageKind::Reprogram {
            eng.note(
                GATEWAY_OWNER,
                Note::new("GatewayIgnored", format!("{:?}", msg.kind)),
            );
            return;
        }
        let result = serde_json::from_slice::<ReprogramCommand>(&msg.body)
            .map_err(|e| IotError::InvalidParam(e.to_string()))
            .and_then(|cmd| self.iot.forward_reprogram(&cmd, eng, &mut self.fabric));
        if let Err(e) = result {
            eng.note(GATEWAY_OWNER, Note::new("ReprogramRejected", e.to_string()));
        }
    }

    fn on_sensor_message(&mut self, eng: &mut Engine<Event>, sensor: &str, msg: &NetMessage) {
        let target = iot::sensor_owner(sensor);
        if msg.kind != MessageKind::Reprogram {
            eng.note(
                target,
                Note::new("SensorIgnored", format!("{:?}", msg.kind)),
            );
            return;
        }
        let result = serde_json::from_slice::<ReprogramCommand>(&msg.body)
            .map_err(|e| IotError::InvalidParam(e.to_string()))
            .and_then(|cmd| self.iot.apply_reprogram(&cmd, eng));
        match result {
            Ok(params) => self.fire_log.push(
                eng.now(),
                FireEventKind::ReprogramApplied,
                format!("{sensor} interval={}us", params.sample_interval.as_micros()),
            ),
            Err(e) => eng.note(target, Note::new("ReprogramRejected", e.to_string())),
        }
    }

    fn apply_effects(&mut self, eng: &mut Engine<Event>, container_id: &str, effects: Vec<Effect>) {
        let Some(handle) = self.runtime.container(container_id).cloned() else {
            return;
        };
        let target = format!("container:{container_id}");
        let mode = self
            .runtime
            .descriptor(&handle.app_id)
            .map_or(ChannelMode::Direct, |d| d.channel_mode);
        for effect in effects {
            match effect {
                Effect::SendToService {
                    service,
                    kind,
                    body,
                } => {
                    let channel = match self.runtime.cached_channel(container_id, &service) {
                        Some(ch) => Ok(ch),
                        None => self
                            .fabric
                            .open_channel(
                                handle.address,
                                &service,
                                mode,
                                &mut self.registry,
                                eng.now(),
                            )
                            .inspect(|ch| self.runtime.cache_channel(container_id, &service, *ch)),
                    };
                    let sent = channel.and_then(|ch| self.fabric.send(eng, ch, kind, body));
                    if let Err(e) = sent {
                        eng.note(target.clone(), Note::new("NoRoute", e.to_string()));
                    }
                }
                Effect::SendToGateway { kind, body } => {
                    let gw = self.iot.gateway_address();
                    if let Err(e) = self.fabric.send_to(
                        eng,
                        handle.address,
                        gw,
                        ChannelMode::Direct,
                        kind,
                        body,
                    ) {
                        eng.note(target.clone(), Note::new("NoRoute", e.to_string()));
                    }
                }
                Effect::RequestScale { service } => {
                    let _ = eng.schedule(
                        SimDuration::ZERO,
                        "runtime",
                        Event::Runtime(RuntimeEvent::Scale {
                            app_id: handle.app_id.clone(),
                            service,
                        }),
                    );
                }
                Effect::Rebind { service } => self.runtime.forget_channel(container_id, &service),
                Effect::Log { kind, detail } => self.fire_log.push(eng.now(), kind, detail),
                Effect::Note(note) => eng.note(target.clone(), note),
            }
        }
    }

    fn on_scale_request(&mut self, eng: &mut Engine<Event>, app_id: &str, service: &str) {
        let trigger = self.runtime.descriptor(app_id).map(|d| d.scaling.trigger);
        if trigger != Some(ScaleTrigger::OnAlert) {
            eng.note(
                "runtime",
                Note::new("ScaleIgnored", format!("{app_id}/{service}")),
            );
            return;
        }
        match self
            .runtime
            .scale_out(app_id, service, eng, &mut self.fabric)
        {
            Ok(handles) => {
                for h in handles {
                    eng.note("runtime", Note::new("ScaledOut", h.container_id));
                }
            }
            Err(RuntimeError::AtCapacity { service, max }) => {
                eng.note(
                    "runtime",
                    Note::new("CapacityReached", format!("{service} max={max}")),
                );
            }
            Err(e) => eng.note("runtime", Note::new("ScaleFailed", e.to_string())),
        }
    }

    fn on_workload_tick(&mut self, eng: &mut Engine<Event>) {
        let Some(w) = self.workload.as_mut() else {
            return;
        };
        w.issued += 1;
        if w.channel.is_none() {
            w.channel = self
                .fabric
                .open_channel(w.address, &w.service, w.mode, &mut self.registry, eng.now())
                .ok();
        }
        let sent = w.channel.map(|ch| {
            self.fabric.send(
                eng,
                ch,
                MessageKind::Custom,
                vec![0u8; w.spec.payload_bytes],
            )
        });
        match sent {
            Some(Ok(id)) => w.sent.push(id),
            _ => {
                w.skipped += 1;
                eng.note(
                    WORKLOAD_OWNER,
                    Note::new("WorkloadNoRoute", w.service.clone()),
                );
            }
        }
        if w.issued < w.spec.msg_count {
            let _ = eng.schedule(w.spec.interval, WORKLOAD_OWNER, Event::Workload);
        }
    }

    fn check_invariants(&self, now: VirtualTime) -> Result<(), String> {
        self.runtime
            .check_registry_consistency(&self.registry, now)?;
        for c in self.runtime.containers() {
            let Some(d) = self.runtime.descriptor(&c.app_id) else {
                continue;
            };
            let n = self
                .runtime
                .instance_count(&c.app_id, &c.process.service_name);
            if n > d.scaling.max_instances {
                return Err(format!(
                    "at {now}: {} has {n} instances, cap {}",
                    c.process.service_name, d.scaling.max_instances
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fireapp::end_to_end_reaction_time;

    #[test]
    fn fire_scenario_reacts_in_three_hops() {
        let mut p = Platform::from_scenario(&Scenario::fire_default()).unwrap();
        p.run_until_checked(p.horizon()).unwrap();
        let log = p.fire_log();
        assert_eq!(
            log.first(FireEventKind::Crossed),
            Some(VirtualTime(10_005_000))
        );
        assert_eq!(end_to_end_reaction_time(log), Ok(SimDuration(15_000)));
        assert_eq!(log.count(FireEventKind::AlertSent), 1);
        assert_eq!(log.count(FireEventKind::ScaleRequested), 1);
        assert_eq!(p.runtime().instance_count("forest-fire", "fire-mgr-B"), 2);
    }

    #[test]
    fn stop_app_leaves_dead_letters() {
        let mut p = Platform::from_scenario(&Scenario::fire_default()).unwrap();
        p.run_until(VirtualTime::from_millis(1_002));
        assert_eq!(p.stop_app("forest-fire").unwrap(), 2);
        p.run_until(VirtualTime::from_secs(2));
        assert!(p.registry().records().next().is_none());
        assert!(p.trace().lines().iter().any(|l| l.ends_with("DeadLetter")));
        p.check_invariants().unwrap();
    }

    #[test]
    fn manual_policy_ignores_alerts() {
        let mut s = Scenario::fire_default();
        s.app.scaling.trigger = ScaleTrigger::Manual;
        let mut p = Platform::from_scenario(&s).unwrap();
        p.run_to_horizon();
        assert_eq!(p.runtime().instance_count("forest-fire", "fire-mgr-B"), 1);
        assert!(p
            .trace()
            .lines()
            .iter()
            .any(|l| l.ends_with("ScaleIgnored")));
        p.scale_out("forest-fire", "fire-mgr-B").unwrap();
        p.scale_out("forest-fire", "fire-mgr-B").unwrap();
        assert!(matches!(
            p.scale_out("forest-fire", "fire-mgr-B"),
            Err(RuntimeError::AtCapacity { .. })
        ));
    }
}
