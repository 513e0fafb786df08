//! Elastic runtime.
//!
//! Deploys application descriptors into containers. Every container gets one
//! fabric address at creation and is registered under its service name once
//! the startup delay has elapsed; from then on it heartbeats its lease. The
//! runtime also owns the per-instance behavior state machines and dispatches
//! delivered messages to them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fireapp::FireEventKind;
use crate::netfabric::{
    ChannelId, ChannelMode, Fabric, FabricError, MessageKind, NetAddress, NetMessage,
};
use crate::registry::{Registry, RegistryError};
use crate::simcore::{Engine, EventId, EventPayload, Note};
use crate::time::{SimDuration, VirtualTime};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("application {0} is already deployed")]
    DuplicateApp(String),
    #[error("unknown behavior {0}")]
    UnknownBehavior(String),
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("application {app} has no process for service {service}")]
    UnknownService { app: String, service: String },
    #[error("service {service} is at its limit of {max} instances")]
    AtCapacity { service: String, max: u32 },
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("behavior {behavior} rejected its parameters: {reason}")]
    BadParams { behavior: String, reason: String },
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

pub type InitParams = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub service_name: String,
    pub behavior_id: String,
    #[serde(default)]
    pub init_params: InitParams,
}

impl ProcessSpec {
    pub fn param_str(&self, key: &str) -> Option<String> {
        self.init_params.get(key).map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    pub fn param_bool(&self, key: &str) -> Result<Option<bool>, String> {
        match self.init_params.get(key) {
            None => Ok(None),
            Some(serde_json::Value::Bool(b)) => Ok(Some(*b)),
            Some(serde_json::Value::String(s)) => s
                .parse()
                .map(Some)
                .map_err(|_| format!("{key} must be a boolean")),
            Some(_) => Err(format!("{key} must be a boolean")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleTrigger {
    OnAlert,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalePolicy {
    pub trigger: ScaleTrigger,
    pub instances_per_trigger: u32,
    pub max_instances: u32,
    #[serde(rename = "startup_delay_us")]
    pub startup_delay: SimDuration,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy {
            trigger: ScaleTrigger::OnAlert,
            instances_per_trigger: 1,
            max_instances: 3,
            startup_delay: SimDuration::from_millis(50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppDescriptor {
    pub app_id: String,
    pub channel_mode: ChannelMode,
    pub processes: Vec<ProcessSpec>,
    #[serde(default)]
    pub scaling: ScalePolicy,
}

impl AppDescriptor {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.app_id.is_empty() {
            out.push("app.app_id must be non-empty".to_string());
        }
        if self.processes.is_empty() {
            out.push("app.processes must not be empty".to_string());
        }
        let mut seen = BTreeSet::new();
        for p in &self.processes {
            if p.service_name.is_empty() {
                out.push("app.processes: service_name must be non-empty".to_string());
            } else if !seen.insert(p.service_name.as_str()) {
                out.push(format!(
                    "app.processes: duplicate service {}",
                    p.service_name
                ));
            }
        }
        let s = &self.scaling;
        if s.instances_per_trigger == 0 || s.max_instances == 0 {
            out.push(
                "app.scaling: instances_per_trigger and max_instances must be >= 1".to_string(),
            );
        }
        if s.instances_per_trigger > s.max_instances {
            out.push("app.scaling: instances_per_trigger exceeds max_instances".to_string());
        }
        out
    }

    pub fn process(&self, service: &str) -> Option<&ProcessSpec> {
        self.processes.iter().find(|p| p.service_name == service)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContainerState {
    Deploying,
    Running,
    Stopped,
}

impl fmt::Display for ContainerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHandle {
    pub container_id: String,
    pub app_id: String,
    pub process: ProcessSpec,
    pub instance_id: String,
    pub address: NetAddress,
    pub state: ContainerState,
}

/// What a process sees about itself while handling a message.
#[derive(Debug, Clone)]
pub struct ProcessCtx<'a> {
    pub now: VirtualTime,
    pub app_id: &'a str,
    pub service_name: &'a str,
    pub instance_id: &'a str,
    pub address: NetAddress,
}

/// Side effects requested by a behavior; the platform carries them out after the callback.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// Send over this container's cached channel to the service, opening it on first use.
    SendToService {
        service: String,
        kind: MessageKind,
        body: Vec<u8>,
    },
    /// Send to the IoT gateway (interface C) over one direct hop.
    SendToGateway {
        kind: MessageKind,
        body: Vec<u8>,
    },
    /// Ask the runtime for more instances of a service of this app.
    RequestScale {
        service: String,
    },
    /// Drop the cached channel so the next send resolves the registry again.
    Rebind {
        service: String,
    },
    /// Append to the application event log.
    Log {
        kind: FireEventKind,
        detail: String,
    },
    Note(Note),
}

pub trait Behavior: Send {
    fn on_message(&mut self, ctx: &ProcessCtx<'_>, msg: &NetMessage, out: &mut Vec<Effect>);
}

type Factory = Box<dyn Fn(&ProcessSpec) -> Result<Box<dyn Behavior>, String> + Send + Sync>;

/// Static table of behavior implementations keyed by behavior id.
#[derive(Default)]
pub struct BehaviorCatalog {
    factories: BTreeMap<String, Factory>,
}

impl BehaviorCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, id: &str, factory: F)
    where
        F: Fn(&ProcessSpec) -> Result<Box<dyn Behavior>, String> + Send + Sync + 'static,
    {
        self.factories.insert(id.to_string(), Box::new(factory));
    }

    pub fn contains(&self, id: &str) -> bool {
        self.factories.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &ProcessSpec) -> Result<Box<dyn Behavior>, RuntimeError> {
        let factory = self
            .factories
            .get(&spec.behavior_id)
            .ok_or_else(|| RuntimeError::UnknownBehavior(spec.behavior_id.clone()))?;
        factory(spec).map_err(|reason| RuntimeError::BadParams {
            behavior: spec.behavior_id.clone(),
            reason,
        })
    }
}

impl fmt::Debug for BehaviorCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

/// Consumes every message without reacting. Target for synthetic workloads.
#[derive(Debug, Default)]
pub struct Sink {
    pub received: u64,
}

impl Behavior for Sink {
    fn on_message(&mut self, _ctx: &ProcessCtx<'_>, _msg: &NetMessage, _out: &mut Vec<Effect>) {
        self.received += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuntimeEvent {
    Register { container_id: String },
    Heartbeat { container_id: String },
    Scale { app_id: String, service: String },
}

impl EventPayload for RuntimeEvent {
    fn kind(&self) -> &str {
        match self {
            RuntimeEvent::Register { .. } => "Register",
            RuntimeEvent::Heartbeat { .. } => "Heartbeat",
            RuntimeEvent::Scale { .. } => "ScaleRequest",
        }
    }
}

/// Delivery to a container that is not running.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadLetter {
    pub container_id: String,
    pub state: Option<ContainerState>,
}

struct Container {
    handle: ContainerHandle,
    behavior: Box<dyn Behavior>,
    channels: HashMap<String, ChannelId>,
    timer: Option<EventId>,
}

#[derive(Debug, Clone)]
struct App {
    descriptor: AppDescriptor,
    next_index: BTreeMap<String, u32>,
    containers: Vec<String>,
}

pub struct Runtime {
    catalog: BehaviorCatalog,
    heartbeat: SimDuration,
    apps: BTreeMap<String, App>,
    containers: BTreeMap<String, Container>,
    by_address: HashMap<NetAddress, String>,
}

impl fmt::Debug for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Runtime")
            .field("apps", &self.apps.keys().collect::<Vec<_>>())
            .field("containers", &self.containers.len())
            .finish()
    }
}

fn container_target(container_id: &str) -> String {
    format!("container:{container_id}")
}

impl Runtime {
    /// `heartbeat` is the lease renewal period used for every running container.
    pub fn new(catalog: BehaviorCatalog, heartbeat: SimDuration) -> Self {
        Runtime {
            catalog,
            heartbeat: if heartbeat.is_zero() {
                SimDuration(1)
            } else {
                heartbeat
            },
            apps: BTreeMap::new(),
            containers: BTreeMap::new(),
            by_address: HashMap::new(),
        }
    }

    pub fn catalog(&self) -> &BehaviorCatalog {
        &self.catalog
    }

    pub fn descriptor(&self, app_id: &str) -> Option<&AppDescriptor> {
        self.apps.get(app_id).map(|a| &a.descriptor)
    }

    pub fn deploy<P>(
        &mut self,
        descriptor: AppDescriptor,
        engine: &mut Engine<P>,
        fabric: &mut Fabric,
    ) -> Result<Vec<ContainerHandle>, RuntimeError>
    where
        P: EventPayload + From<RuntimeEvent>,
    {
        if self.apps.contains_key(&descriptor.app_id) {
            return Err(RuntimeError::DuplicateApp(descriptor.app_id));
        }
        if let Some(p) = descriptor.problems().into_iter().next() {
            return Err(RuntimeError::InvalidDescriptor(p));
        }
        for p in &descriptor.processes {
            if !self.catalog.contains(&p.behavior_id) {
                return Err(RuntimeError::UnknownBehavior(p.behavior_id.clone()));
            }
        }
        let behaviors = descriptor
            .processes
            .iter()
            .map(|p| self.catalog.build(p))
            .collect::<Result<Vec<_>, _>>()?;

        let app_id = descriptor.app_id.clone();
        self.apps.insert(
            app_id.clone(),
            App {
                descriptor: descriptor.clone(),
                next_index: BTreeMap::new(),
                containers: Vec::new(),
            },
        );
        let mut handles = Vec::new();
        for (spec, behavior) in descriptor.processes.iter().zip(behaviors) {
            handles.push(self.launch(&app_id, spec.clone(), behavior, engine, fabric)?);
        }
        Ok(handles)
    }

    fn launch<P>(
        &mut self,
        app_id: &str,
        spec: ProcessSpec,
        behavior: Box<dyn Behavior>,
        engine: &mut Engine<P>,
        fabric: &mut Fabric,
    ) -> Result<ContainerHandle, RuntimeError>
    where
        P: EventPayload + From<RuntimeEvent>,
    {
        let app = self
            .apps
            .get_mut(app_id)
            .ok_or_else(|| RuntimeError::UnknownApp(app_id.to_string()))?;
        let k = app.next_index.entry(spec.service_name.clone()).or_insert(0);
        *k += 1;
        let instance_id = format!("{}-{}", spec.service_name, k);
        let container_id = format!("{app_id}/{instance_id}");
        let address = fabric.allocate_interface(&container_id)?;
        let delay = app.descriptor.scaling.startup_delay;
        app.containers.push(container_id.clone());

        let timer = engine
            .schedule(
                delay,
                container_target(&container_id),
                RuntimeEvent::Register {
                    container_id: container_id.clone(),
                }
                .into(),
            )
            .ok();
        let handle = ContainerHandle {
            container_id: container_id.clone(),
            app_id: app_id.to_string(),
            process: spec,
            instance_id,
            address,
            state: ContainerState::Deploying,
        };
        self.by_address.insert(address, container_id.clone());
        self.containers.insert(
            container_id,
            Container {
                handle: handle.clone(),
                behavior,
                channels: HashMap::new(),
                timer,
            },
        );
        Ok(handle)
    }

    /// Registration after the startup delay: the container becomes `Running`.
    pub fn on_register<P>(
        &mut self,
        container_id: &str,
        engine: &mut Engine<P>,
        registry: &mut Registry,
        fabric: &Fabric,
    ) -> Result<(), RegistryError>
    where
        P: EventPayload + From<RuntimeEvent>,
    {
        let Some(c) = self.containers.get_mut(container_id) else {
            return Ok(());
        };
        c.timer = None;
        if c.handle.state != ContainerState::Deploying {
            return Ok(());
        }
        let h = &c.handle;
        registry.register(
            &h.process.service_name,
            &h.instance_id,
            h.address,
            engine.now(),
            fabric,
        )?;
        c.handle.state = ContainerState::Running;
        c.timer = schedule_heartbeat(engine, container_id, self.heartbeat);
        Ok(())
    }

    pub fn on_heartbeat<P>(
        &mut self,
        container_id: &str,
        engine: &mut Engine<P>,
        registry: &mut Registry,
        fabric: &Fabric,
    ) -> Result<(), RegistryError>
    where
        P: EventPayload + From<RuntimeEvent>,
    {
        let Some(c) = self.containers.get_mut(container_id) else {
            return Ok(());
        };
        c.timer = None;
        if c.handle.state != ContainerState::Running {
            return Ok(());
        }
        let h = &c.handle;
        let now = engine.now();
        if registry
            .renew(&h.process.service_name, &h.instance_id, now)
            .is_err()
        {
            registry.register(
                &h.process.service_name,
                &h.instance_id,
                h.address,
                now,
                fabric,
            )?;
        }
        c.timer = schedule_heartbeat(engine, container_id, self.heartbeat);
        Ok(())
    }

    /// Start `instances_per_trigger` more instances of `service`, capped at `max_instances`.
    pub fn scale_out<P>(
        &mut self,
        app_id: &str,
        service: &str,
        engine: &mut Engine<P>,
        fabric: &mut Fabric,
    ) -> Result<Vec<ContainerHandle>, RuntimeError>
    where
        P: EventPayload + From<RuntimeEvent>,
    {
        let app = self
            .apps
            .get(app_id)
            .ok_or_else(|| RuntimeError::UnknownApp(app_id.to_string()))?;
        let spec = app.descriptor.process(service).cloned().ok_or_else(|| {
            RuntimeError::UnknownService {
                app: app_id.to_string(),
                service: service.to_string(),
            }
        })?;
        let policy = app.descriptor.scaling;
        let current = self.instance_count(app_id, service);
        let room = policy.max_instances.saturating_sub(current);
        let count = policy.instances_per_trigger.min(room);
        if count == 0 {
            return Err(RuntimeError::AtCapacity {
                service: service.to_string(),
                max: policy.max_instances,
            });
        }
        let mut handles = Vec::new();
        for _ in 0..count {
            let behavior = self.catalog.build(&spec)?;
            handles.push(self.launch(app_id, spec.clone(), behavior, engine, fabric)?);
        }
        Ok(handles)
    }

    /// Stop and deregister every container of the app. Returns how many were stopped.
    pub fn stop_app<P>(
        &mut self,
        app_id: &str,
        engine: &mut Engine<P>,
        registry: &mut Registry,
    ) -> Result<usize, RuntimeError>
    where
        P: EventPayload,
    {
        let app = self
            .apps
            .get(app_id)
            .ok_or_else(|| RuntimeError::UnknownApp(app_id.to_string()))?;
        let mut stopped = 0;
        for id in &app.containers {
            let Some(c) = self.containers.get_mut(id) else {
                continue;
            };
            if c.handle.state == ContainerState::Stopped {
                continue;
            }
            if let Some(t) = c.timer.take() {
                engine.cancel(t);
            }
            registry.deregister(&c.handle.process.service_name, &c.handle.instance_id);
            c.handle.state = ContainerState::Stopped;
            c.channels.clear();
            stopped += 1;
        }
        Ok(stopped)
    }

    /// Run the container's behavior on `msg`, returning the effects it asked for.
    pub fn deliver_to_process(
        &mut self,
        container_id: &str,
        msg: &NetMessage,
        now: VirtualTime,
    ) -> Result<Vec<Effect>, DeadLetter> {
        let Some(c) = self.containers.get_mut(container_id) else {
            return Err(DeadLetter {
                container_id: container_id.to_string(),
                state: None,
            });
        };
        if c.handle.state != ContainerState::Running {
            return Err(DeadLetter {
                container_id: container_id.to_string(),
                state: Some(c.handle.state),
            });
        }
        let h = &c.handle;
        let ctx = ProcessCtx {
            now,
            app_id: &h.app_id,
            service_name: &h.process.service_name,
            instance_id: &h.instance_id,
            address: h.address,
        };
        let mut out = Vec::new();
        c.behavior.on_message(&ctx, msg, &mut out);
        Ok(out)
    }

    pub fn cached_channel(&self, container_id: &str, service: &str) -> Option<ChannelId> {
        self.containers
            .get(container_id)
            .and_then(|c| c.channels.get(service).copied())
    }

    pub fn cache_channel(&mut self, container_id: &str, service: &str, channel: ChannelId) {
        if let Some(c) = self.containers.get_mut(container_id) {
            c.channels.insert(service.to_string(), channel);
        }
    }

    pub fn forget_channel(&mut self, container_id: &str, service: &str) {
        if let Some(c) = self.containers.get_mut(container_id) {
            c.channels.remove(service);
        }
    }

    pub fn container_at(&self, addr: NetAddress) -> Option<&str> {
        self.by_address.get(&addr).map(String::as_str)
    }

    pub fn container(&self, container_id: &str) -> Option<&ContainerHandle> {
        self.containers.get(container_id).map(|c| &c.handle)
    }

    pub fn containers(&self) -> impl Iterator<Item = &ContainerHandle> {
        self.containers.values().map(|c| &c.handle)
    }

    /// Containers of the service that are deploying or running.
    pub fn instance_count(&self, app_id: &str, service: &str) -> u32 {
        self.apps.get(app_id).map_or(0, |app| {
            app.containers
                .iter()
                .filter_map(|id| self.containers.get(id))
                .filter(|c| {
                    c.handle.process.service_name == service
                        && c.handle.state != ContainerState::Stopped
                })
                .count() as u32
        })
    }

    /// Running containers must match the live registry records exactly.
    pub fn check_registry_consistency(
        &self,
        registry: &Registry,
        now: VirtualTime,
    ) -> Result<(), String> {
        let running: BTreeSet<(String, String)> = self
            .containers
            .values()
            .filter(|c| c.handle.state == ContainerState::Running)
            .map(|c| {
                (
                    c.handle.process.service_name.clone(),
                    c.handle.instance_id.clone(),
                )
            })
            .collect();
        let live: BTreeSet<(String, String)> = registry
            .records()
            .filter(|r| r.is_live(now))
            .map(|r| (r.service_name.clone(), r.instance_id.clone()))
            .collect();
        if running == live {
            Ok(())
        } else {
            Err(format!(
                "at {now}: running-only {:?}, registry-only {:?}",
                running.difference(&live).collect::<Vec<_>>(),
                live.difference(&running).collect::<Vec<_>>()
            ))
        }
    }
}

fn schedule_heartbeat<P>(
    engine: &mut Engine<P>,
    container_id: &str,
    every: SimDuration,
) -> Option<EventId>
where
    P: EventPayload + From<RuntimeEvent>,
{
    engine
        .schedule(
            every,
            container_target(container_id),
            RuntimeEvent::Heartbeat {
                container_id: container_id.to_string(),
            }
            .into(),
        )
        .ok()
}
