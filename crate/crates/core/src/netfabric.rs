//! Container network fabric.
//!
//! Every container (and every piece of platform infrastructure that talks on
//! the network) gets exactly one address. Messages move over channels in one of
//! two modes:
//!
//! * `Direct`: one hop between the two interfaces, `d_hop`.
//! * `Proxied`: the classical per-container HTTP endpoint path,
//!   sender → proxy → receiver, `2 * d_hop + d_proxy`.
//!
//! Delivery is at-least-once on the wire (retransmission timer per attempt,
//! acknowledgements back along the same path) and exactly-once towards the
//! application, because receivers drop msg ids they have already seen.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::registry::{AddressBook, Registry, RegistryError};
use crate::simcore::{ComponentId, Engine, EventId, EventPayload};
use crate::time::{SimDuration, VirtualTime};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FabricError {
    #[error("{0} already has a network interface")]
    AlreadyAllocated(String),
    #[error("address {0} is not allocated")]
    UnknownAddress(NetAddress),
    #[error("unknown channel {0:?}")]
    UnknownChannel(ChannelId),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetAddress(pub u64);

impl fmt::Display for NetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MsgId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    #[serde(alias = "direct")]
    Direct,
    #[serde(alias = "proxied")]
    Proxied,
}

impl ChannelMode {
    pub const ALL: [ChannelMode; 2] = [ChannelMode::Direct, ChannelMode::Proxied];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::Direct => "Direct",
            ChannelMode::Proxied => "Proxied",
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(ChannelMode::Direct),
            "proxied" => Ok(ChannelMode::Proxied),
            other => Err(format!("unknown channel mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Reading,
    Alert,
    Reprogram,
    Ack,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetMessage {
    pub msg_id: MsgId,
    pub src: NetAddress,
    pub dst: NetAddress,
    pub kind: MessageKind,
    pub body: Vec<u8>,
    /// Send time of the first attempt; retransmissions keep it.
    pub sent_at: VirtualTime,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricConfig {
    #[serde(rename = "d_hop_us")]
    pub d_hop: SimDuration,
    #[serde(rename = "d_proxy_us")]
    pub d_proxy: SimDuration,
    pub drop_prob: f64,
    #[serde(rename = "rto_us")]
    pub rto: SimDuration,
    pub max_attempts: u32,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig {
            d_hop: SimDuration::from_millis(5),
            d_proxy: SimDuration::from_millis(2),
            drop_prob: 0.0,
            rto: SimDuration::from_millis(20),
            max_attempts: 10,
        }
    }
}

impl FabricConfig {
    /// Problems with this configuration, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.d_hop.is_zero() {
            out.push("fabric.d_hop_us must be > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            out.push(format!(
                "fabric.drop_prob {} outside [0, 1)",
                self.drop_prob
            ));
        }
        if self.max_attempts == 0 {
            out.push("fabric.max_attempts must be >= 1".to_string());
        }
        if self.rto.is_zero() {
            out.push("fabric.rto_us must be > 0".to_string());
        }
        out
    }

    pub fn one_way_latency(&self, mode: ChannelMode) -> SimDuration {
        match mode {
            ChannelMode::Direct => self.d_hop,
            ChannelMode::Proxied => self.d_hop * 2 + self.d_proxy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub msg_id: MsgId,
    pub mode: ChannelMode,
    pub sent_at: VirtualTime,
    pub delivered_at: VirtualTime,
    pub one_way: SimDuration,
}

impl LatencySample {
    pub const CSV_HEADER: &'static str = "msg_id,mode,sent_at_us,delivered_at_us,one_way_us";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.msg_id.0,
            self.mode,
            self.sent_at.as_micros(),
            self.delivered_at.as_micros(),
            self.one_way.as_micros()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub id: ChannelId,
    pub src: NetAddress,
    pub dst: NetAddress,
    pub mode: ChannelMode,
    /// Service the channel was resolved from, if it went through the registry.
    pub service: Option<String>,
}

/// Events the fabric schedules on the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum FabricEvent {
    Deliver { msg: NetMessage, mode: ChannelMode },
    Ack { ack: NetMessage },
    RetransmitTimeout { msg_id: MsgId },
    DeliveryFailed { msg: NetMessage },
}

impl EventPayload for FabricEvent {
    fn kind(&self) -> &str {
        match self {
            FabricEvent::Deliver { .. } => "Deliver",
            FabricEvent::Ack { .. } => "Ack",
            FabricEvent::RetransmitTimeout { .. } => "RetransmitTimeout",
            FabricEvent::DeliveryFailed { .. } => "DeliveryFailed",
        }
    }
}

/// What a fabric event means for the layer above.
#[derive(Debug, Clone, PartialEq)]
pub enum FabricOutcome {
    /// First arrival of this msg id at its destination.
    Delivered(NetMessage),
    /// The sender gave up after `max_attempts`.
    Failed(NetMessage),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricStats {
    pub sent: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub drops: u64,
    pub delivered: u64,
    pub duplicates: u64,
    pub acks: u64,
    pub failures: u64,
}

#[derive(Debug, Clone)]
struct Outstanding {
    msg: NetMessage,
    mode: ChannelMode,
    timer: Option<EventId>,
}

fn net_target(addr: NetAddress) -> ComponentId {
    ComponentId::new(format!("net:{addr}"))
}

#[derive(Debug, Clone, Default)]
pub struct Fabric {
    config: FabricConfig,
    next_addr: u64,
    by_owner: BTreeMap<String, NetAddress>,
    owners: HashMap<NetAddress, String>,
    channels: Vec<Channel>,
    next_msg: u64,
    outstanding: HashMap<MsgId, Outstanding>,
    seen: HashSet<(NetAddress, MsgId)>,
    samples: Vec<LatencySample>,
    forced_drops: u32,
    stats: FabricStats,
}

impl AddressBook for Fabric {
    fn is_allocated(&self, addr: NetAddress) -> bool {
        self.owners.contains_key(&addr)
    }
}

impl Fabric {
    pub fn new(config: FabricConfig) -> Self {
        Fabric {
            config,
            next_addr: 1,
            next_msg: 1,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &FabricConfig {
        &self.config
    }

    pub fn stats(&self) -> FabricStats {
        self.stats
    }

    /// Hand `owner` a fresh address. Addresses are dense and never reused.
    pub fn allocate_interface(&mut self, owner: &str) -> Result<NetAddress, FabricError> {
        if self.by_owner.contains_key(owner) {
            return Err(FabricError::AlreadyAllocated(owner.to_string()));
        }
        let addr = NetAddress(self.next_addr);
        self.next_addr += 1;
        self.by_owner.insert(owner.to_string(), addr);
        self.owners.insert(addr, owner.to_string());
        Ok(addr)
    }

    pub fn address_of(&self, owner: &str) -> Option<NetAddress> {
        self.by_owner.get(owner).copied()
    }

    pub fn owner_of(&self, addr: NetAddress) -> Option<&str> {
        self.owners.get(&addr).map(String::as_str)
    }

    pub fn allocations(&self) -> impl Iterator<Item = (&str, NetAddress)> {
        self.by_owner.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn one_way_latency(&self, mode: ChannelMode) -> SimDuration {
        self.config.one_way_latency(mode)
    }

    /// Resolve `dst_service` through the registry once and bind a channel to the result.
    pub fn open_channel(
        &mut self,
        src: NetAddress,
        dst_service: &str,
        mode: ChannelMode,
        registry: &mut Registry,
        now: VirtualTime,
    ) -> Result<ChannelId, FabricError> {
        if !self.is_allocated(src) {
            return Err(FabricError::UnknownAddress(src));
        }
        let dst = registry.lookup(dst_service, now)?;
        self.push_channel(src, dst, mode, Some(dst_service.to_string()))
    }

    /// Bind a channel to a known address without a registry lookup.
    pub fn bind_channel(
        &mut self,
        src: NetAddress,
        dst: NetAddress,
        mode: ChannelMode,
    ) -> Result<ChannelId, FabricError> {
        self.push_channel(src, dst, mode, None)
    }

    fn push_channel(
        &mut self,
        src: NetAddress,
        dst: NetAddress,
        mode: ChannelMode,
        service: Option<String>,
    ) -> Result<ChannelId, FabricError> {
        for a in [src, dst] {
            if !self.is_allocated(a) {
                return Err(FabricError::UnknownAddress(a));
            }
        }
        let id = ChannelId(self.channels.len() as u64);
        self.channels.push(Channel {
            id,
            src,
            dst,
            mode,
            service,
        });
        Ok(id)
    }

    pub fn channel(&self, id: ChannelId) -> Option<&Channel> {
        self.channels.get(id.0 as usize)
    }

    /// Force the next `n` data transmissions to be lost, independent of `drop_prob`.
    pub fn force_drops(&mut self, n: u32) {
        self.forced_drops += n;
    }

    pub fn send<P>(
        &mut self,
        engine: &mut Engine<P>,
        channel: ChannelId,
        kind: MessageKind,
        body: Vec<u8>,
    ) -> Result<MsgId, FabricError>
    where
        P: EventPayload + From<FabricEvent>,
    {
        let ch = self
            .channel(channel)
            .ok_or(FabricError::UnknownChannel(channel))?;
        let (src, dst, mode) = (ch.src, ch.dst, ch.mode);
        self.send_to(engine, src, dst, mode, kind, body)
    }

    /// Send without a persistent channel, as used for per-message resolution.
    pub fn send_to<P>(
        &mut self,
        engine: &mut Engine<P>,
        src: NetAddress,
        dst: NetAddress,
        mode: ChannelMode,
        kind: MessageKind,
        body: Vec<u8>,
    ) -> Result<MsgId, FabricError>
    where
        P: EventPayload + From<FabricEvent>,
    {
        for a in [src, dst] {
            if !self.is_allocated(a) {
                return Err(FabricError::UnknownAddress(a));
            }
        }
        let msg_id = MsgId(self.next_msg);
        self.next_msg += 1;
        let msg = NetMessage {
            msg_id,
            src,
            dst,
            kind,
            body,
            sent_at: engine.now(),
            attempt: 1,
        };
        self.stats.sent += 1;
        self.outstanding.insert(
            msg_id,
            Outstanding {
                msg,
                mode,
                timer: None,
            },
        );
        self.transmit(engine, msg_id);
        Ok(msg_id)
    }

    fn transmit<P>(&mut self, engine: &mut Engine<P>, msg_id: MsgId)
    where
        P: EventPayload + From<FabricEvent>,
    {
        let latency_of = |mode| self.config.one_way_latency(mode);
        let Some(out) = self.outstanding.get(&msg_id) else {
            return;
        };
        let (msg, mode) = (out.msg.clone(), out.mode);
        let latency = latency_of(mode);
        self.stats.transmissions += 1;

        let dropped = if self.forced_drops > 0 {
            self.forced_drops -= 1;
            true
        } else {
            self.config.drop_prob > 0.0 && engine.rng().gen_bool(self.config.drop_prob)
        };
        let src = msg.src;
        if dropped {
            self.stats.drops += 1;
        } else {
            // beyond the horizon the message is simply still in flight
            let _ = engine.schedule(
                latency,
                net_target(msg.dst),
                FabricEvent::Deliver { msg, mode }.into(),
            );
        }
        let timer = engine
            .schedule(
                self.config.rto,
                net_target(src),
                FabricEvent::RetransmitTimeout { msg_id }.into(),
            )
            .ok();
        if let Some(out) = self.outstanding.get_mut(&msg_id) {
            out.timer = timer;
        }
    }

    /// React to a fabric event popped from the engine.
    pub fn handle<P>(&mut self, engine: &mut Engine<P>, event: FabricEvent) -> Option<FabricOutcome>
    where
        P: EventPayload + From<FabricEvent>,
    {
        match event {
            FabricEvent::Deliver { msg, mode } => {
                let ack = NetMessage {
                    msg_id: msg.msg_id,
                    src: msg.dst,
                    dst: msg.src,
                    kind: MessageKind::Ack,
                    body: Vec::new(),
                    sent_at: engine.now(),
                    attempt: msg.attempt,
                };
                let _ = engine.schedule(
                    self.config.one_way_latency(mode),
                    net_target(ack.dst),
                    FabricEvent::Ack { ack }.into(),
                );
                if !self.seen.insert((msg.dst, msg.msg_id)) {
                    self.stats.duplicates += 1;
                    return None;
                }
                let now = engine.now();
                self.samples.push(LatencySample {
                    msg_id: msg.msg_id,
                    mode,
                    sent_at: msg.sent_at,
                    delivered_at: now,
                    one_way: now.since(msg.sent_at),
                });
                self.stats.delivered += 1;
                Some(FabricOutcome::Delivered(msg))
            }
            FabricEvent::Ack { ack } => {
                self.stats.acks += 1;
                if let Some(out) = self.outstanding.remove(&ack.msg_id) {
                    if let Some(timer) = out.timer {
                        engine.cancel(timer);
                    }
                }
                None
            }
            FabricEvent::RetransmitTimeout { msg_id } => {
                let out = self.outstanding.get_mut(&msg_id)?;
                out.timer = None;
                if out.msg.attempt >= self.config.max_attempts {
                    let out = self.outstanding.remove(&msg_id)?;
                    let src = out.msg.src;
                    let _ = engine.schedule(
                        SimDuration::ZERO,
                        net_target(src),
                        FabricEvent::DeliveryFailed { msg: out.msg }.into(),
                    );
                    return None;
                }
                out.msg.attempt += 1;
                self.stats.retransmissions += 1;
                self.transmit(engine, msg_id);
                None
            }
            FabricEvent::DeliveryFailed { msg } => {
                self.stats.failures += 1;
                Some(FabricOutcome::Failed(msg))
            }
        }
    }

    /// Take every latency sample recorded since the previous drain.
    pub fn drain_samples(&mut self) -> Vec<LatencySample> {
        std::mem::take(&mut self.samples)
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::RegistryConfig;
    use crate::simcore::SimConfig;

    fn engine(seed: u64) -> Engine<FabricEvent> {
        Engine::new(SimConfig {
            rng_seed: seed,
            horizon: VirtualTime::from_secs(3600),
            trace_enabled: true,
        })
    }

    fn run(
        fabric: &mut Fabric,
        e: &mut Engine<FabricEvent>,
        until: VirtualTime,
    ) -> Vec<(VirtualTime, FabricOutcome)> {
        let mut out = Vec::new();
        e.run_until(until, |eng, ev| {
            if let Some(o) = fabric.handle(eng, ev.payload) {
                out.push((eng.now(), o));
            }
        });
        out
    }

    #[test]
    fn allocation_is_dense_and_unique() {
        let mut f = Fabric::new(FabricConfig::default());
        assert_eq!(f.allocate_interface("c1"), Ok(NetAddress(1)));
        assert_eq!(
            f.allocate_interface("c1"),
            Err(FabricError::AlreadyAllocated("c1".into()))
        );
        let addrs: HashSet<_> = (0..50)
            .map(|i| f.allocate_interface(&format!("x{i}")).unwrap())
            .collect();
        assert_eq!(addrs.len(), 50);
        assert!(!addrs.contains(&NetAddress(1)));
    }

    #[test]
    fn latency_laws() {
        let cfg = FabricConfig::default();
        assert_eq!(cfg.one_way_latency(ChannelMode::Direct), SimDuration(5000));
        assert_eq!(
            cfg.one_way_latency(ChannelMode::Proxied),
            SimDuration(2 * 5000 + 2000)
        );
        let sym = FabricConfig {
            d_proxy: SimDuration::ZERO,
            ..cfg
        };
        assert_eq!(
            sym.one_way_latency(ChannelMode::Proxied).0,
            2 * sym.one_way_latency(ChannelMode::Direct).0
        );
    }

    #[test]
    fn open_channel_uses_registry_round_robin() {
        let mut f = Fabric::new(FabricConfig::default());
        let mut reg = Registry::new(RegistryConfig::default());
        let src = f.allocate_interface("client").unwrap();
        let a = f.allocate_interface("a").unwrap();
        let b = f.allocate_interface("b").unwrap();
        reg.register("svc", "a", a, VirtualTime::ZERO, &f).unwrap();
        reg.register("svc", "b", b, VirtualTime::ZERO, &f).unwrap();
        let c1 = f
            .open_channel(src, "svc", ChannelMode::Direct, &mut reg, VirtualTime::ZERO)
            .unwrap();
        let c2 = f
            .open_channel(src, "svc", ChannelMode::Direct, &mut reg, VirtualTime::ZERO)
            .unwrap();
        assert_eq!(f.channel(c1).unwrap().dst, a);
        assert_eq!(f.channel(c2).unwrap().dst, b);
        assert_eq!(
            f.open_channel(
                src,
                "ghost",
                ChannelMode::Direct,
                &mut reg,
                VirtualTime::ZERO
            ),
            Err(FabricError::Registry(RegistryError::NotFound(
                "ghost".into()
            )))
        );
    }

    #[test]
    fn lossless_send_delivers_once_at_latency() {
        let mut f = Fabric::new(FabricConfig::default());
        let mut e = engine(1);
        let a = f.allocate_interface("a").unwrap();
        let b = f.allocate_interface("b").unwrap();
        let ch = f.bind_channel(a, b, ChannelMode::Direct).unwrap();
        let id = f
            .send(&mut e, ch, MessageKind::Custom, b"x".to_vec())
            .unwrap();
        let out = run(&mut f, &mut e, VirtualTime::from_secs(1));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, VirtualTime(5000));
        let samples = f.drain_samples();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].msg_id, id);
        assert_eq!(samples[0].one_way, SimDuration(5000));
        assert!(f.drain_samples().is_empty());
        assert_eq!(f.in_flight(), 0);
        assert_eq!(f.stats().retransmissions, 0);
    }

    #[test]
    fn one_forced_drop_costs_one_rto() {
        let mut f = Fabric::new(FabricConfig::default());
        let mut e = engine(1);
        let a = f.allocate_interface("a").unwrap();
        let b = f.allocate_interface("b").unwrap();
        let ch = f.bind_channel(a, b, ChannelMode::Direct).unwrap();
        f.force_drops(1);
        f.send(&mut e, ch, MessageKind::Custom, Vec::new()).unwrap();
        let out = run(&mut f, &mut e, VirtualTime::from_secs(1));
        // hand trace: attempt 1 lost at 0, timer at 20000, attempt 2 arrives 20000 + 5000
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, VirtualTime(25_000));
        match &out[0].1 {
            FabricOutcome::Delivered(m) => assert_eq!(m.attempt, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(f.drain_samples()[0].one_way, SimDuration(25_000));
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let cfg = FabricConfig {
            max_attempts: 3,
            ..FabricConfig::default()
        };
        let mut f = Fabric::new(cfg);
        let mut e = engine(1);
        let a = f.allocate_interface("a").unwrap();
        let b = f.allocate_interface("b").unwrap();
        f.force_drops(3);
        f.send_to(
            &mut e,
            a,
            b,
            ChannelMode::Direct,
            MessageKind::Custom,
            Vec::new(),
        )
        .unwrap();
        let out = run(&mut f, &mut e, VirtualTime::from_secs(1));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, VirtualTime(60_000));
        assert!(matches!(out[0].1, FabricOutcome::Failed(_)));
        assert_eq!(f.stats().failures, 1);
        assert_eq!(f.stats().transmissions, 3);
    }

    #[test]
    fn spurious_retransmission_is_deduplicated() {
        // proxied round trip (24ms) exceeds rto (20ms)
        let mut f = Fabric::new(FabricConfig::default());
        let mut e = engine(1);
        let a = f.allocate_interface("a").unwrap();
        let b = f.allocate_interface("b").unwrap();
        f.send_to(
            &mut e,
            a,
            b,
            ChannelMode::Proxied,
            MessageKind::Alert,
            Vec::new(),
        )
        .unwrap();
        let out = run(&mut f, &mut e, VirtualTime::from_secs(1));
        assert_eq!(out.len(), 1);
        assert_eq!(f.stats().duplicates, 1);
        assert_eq!(f.drain_samples()[0].one_way, SimDuration(12_000));
    }

    #[test]
    fn thousand_lossy_sends_exactly_once() {
        let cfg = FabricConfig {
            drop_prob: 0.3,
            ..FabricConfig::default()
        };
        let mut f = Fabric::new(cfg);
        let mut e = engine(11);
        let a = f.allocate_interface("a").unwrap();
        let b = f.allocate_interface("b").unwrap();
        let ch = f.bind_channel(a, b, ChannelMode::Direct).unwrap();
        let mut sent = HashSet::new();
        for _ in 0..1000 {
            sent.insert(f.send(&mut e, ch, MessageKind::Custom, Vec::new()).unwrap());
        }
        let out = run(&mut f, &mut e, VirtualTime::from_secs(3600));
        let delivered: Vec<MsgId> = out
            .iter()
            .filter_map(|(_, o)| match o {
                FabricOutcome::Delivered(m) => Some(m.msg_id),
                _ => None,
            })
            .collect();
        let unique: HashSet<_> = delivered.iter().copied().collect();
        assert_eq!(delivered.len(), 1000);
        assert_eq!(unique, sent);
        assert!(f.stats().drops > 0);
    }

    #[test]
    fn mixed_modes_partition_samples() {
        let mut f = Fabric::new(FabricConfig::default());
        let mut e = engine(1);
        let a = f.allocate_interface("a").unwrap();
        let b = f.allocate_interface("b").unwrap();
        for i in 0..10 {
            let mode = if i % 3 == 0 {
                ChannelMode::Proxied
            } else {
                ChannelMode::Direct
            };
            f.send_to(&mut e, a, b, mode, MessageKind::Custom, Vec::new())
                .unwrap();
        }
        run(&mut f, &mut e, VirtualTime::from_secs(1));
        let samples = f.drain_samples();
        assert_eq!(samples.len(), 10);
        for s in samples {
            assert_eq!(s.one_way, f.one_way_latency(s.mode));
        }
    }

    #[test]
    fn unknown_endpoints_rejected() {
        let mut f = Fabric::new(FabricConfig::default());
        let mut e = engine(1);
        let a = f.allocate_interface("a").unwrap();
        assert_eq!(
            f.bind_channel(a, NetAddress(77), ChannelMode::Direct),
            Err(FabricError::UnknownAddress(NetAddress(77)))
        );
        assert_eq!(
            f.send(&mut e, ChannelId(9), MessageKind::Custom, Vec::new()),
            Err(FabricError::UnknownChannel(ChannelId(9)))
        );
    }
}
