//! Deterministic discrete-event engine.
//!
//! Events are executed in the total order `(fire_at, seq)`, where `seq` is
//! handed out at scheduling time. The engine owns the only random number
//! generator in a run, so identical configuration and inputs replay to an
//! identical trace.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::time::{SimDuration, VirtualTime};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("event at {at} would fire past the horizon {horizon}")]
    HorizonExceeded {
        at: VirtualTime,
        horizon: VirtualTime,
    },
    #[error("cannot schedule at {at}, engine is already at {now}")]
    InPast { at: VirtualTime, now: VirtualTime },
}

/// Identifies a scheduled event. Equal to the event's sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(pub u64);

/// Name of the component an event is addressed to, e.g. `registry` or `net:3`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId(String);

impl ComponentId {
    pub fn new(name: impl Into<String>) -> Self {
        ComponentId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_string())
    }
}

impl From<String> for ComponentId {
    fn from(s: String) -> Self {
        ComponentId(s)
    }
}

/// Payloads carried by the engine must name their kind for the trace log.
pub trait EventPayload {
    fn kind(&self) -> &str;
}

/// An observation that only needs to show up in the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub kind: &'static str,
    pub detail: String,
}

impl Note {
    pub fn new(kind: &'static str, detail: impl Into<String>) -> Self {
        Note {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub rng_seed: u64,
    #[serde(rename = "horizon_us")]
    pub horizon: VirtualTime,
    pub trace_enabled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rng_seed: 1,
            horizon: VirtualTime::from_secs(30),
            trace_enabled: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub fire_at: VirtualTime,
    pub seq: u64,
    pub target: ComponentId,
    pub payload: P,
}

impl<P: EventPayload> SimEvent<P> {
    pub fn id(&self) -> EventId {
        EventId(self.seq)
    }

    pub fn kind(&self) -> &str {
        self.payload.kind()
    }
}

/// Tab-separated log of executed events: `fire_at<TAB>seq<TAB>target<TAB>kind`.
///
/// The SHA-256 digest is maintained even when line retention is disabled.
#[derive(Clone)]
pub struct TraceLog {
    keep_lines: bool,
    lines: Vec<String>,
    hasher: Sha256,
    count: u64,
}

impl TraceLog {
    pub fn new(keep_lines: bool) -> Self {
        TraceLog {
            keep_lines,
            lines: Vec::new(),
            hasher: Sha256::new(),
            count: 0,
        }
    }

    fn record(&mut self, fire_at: VirtualTime, seq: u64, target: &ComponentId, kind: &str) {
        let line = format!("{}\t{}\t{}\t{}", fire_at.as_micros(), seq, target, kind);
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if self.keep_lines {
            self.lines.push(line);
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Retained lines, newline-terminated.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.lines.len() * 32);
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 over every executed-event line.
    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

impl fmt::Debug for TraceLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TraceLog")
            .field("count", &self.count)
            .field("retained", &self.lines.len())
            .finish()
    }
}

pub struct Engine<P> {
    config: SimConfig,
    now: VirtualTime,
    next_seq: u64,
    queue: BTreeMap<(VirtualTime, u64), SimEvent<P>>,
    index: HashMap<u64, VirtualTime>,
    rng: ChaCha8Rng,
    trace: TraceLog,
}

impl<P: EventPayload> Engine<P> {
    pub fn new(config: SimConfig) -> Self {
        Engine {
            config,
            now: VirtualTime::ZERO,
            next_seq: 1,
            queue: BTreeMap::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            trace: TraceLog::new(config.trace_enabled),
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn horizon(&self) -> VirtualTime {
        self.config.horizon
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn is_pending(&self, id: EventId) -> bool {
        self.index.contains_key(&id.0)
    }

    /// Enqueue `payload` for `target` at `now + delay`.
    pub fn schedule(
        &mut self,
        delay: SimDuration,
        target: impl Into<ComponentId>,
        payload: P,
    ) -> Result<EventId, SimError> {
        let at = self.now.checked_add(delay).unwrap_or(VirtualTime(u64::MAX));
        self.schedule_at(at, target, payload)
    }

    pub fn schedule_at(
        &mut self,
        at: VirtualTime,
        target: impl Into<ComponentId>,
        payload: P,
    ) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::InPast { at, now: self.now });
        }
        if at > self.config.horizon {
            return Err(SimError::HorizonExceeded {
                at,
                horizon: self.config.horizon,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert(
            (at, seq),
            SimEvent {
                fire_at: at,
                seq,
                target: target.into(),
                payload,
            },
        );
        self.index.insert(seq, at);
        Ok(EventId(seq))
    }

    /// Remove a pending event. Returns false for unknown or already executed ids.
    pub fn cancel(&mut self, id: EventId) -> bool {
        match self.index.remove(&id.0) {
            Some(at) => self.queue.remove(&(at, id.0)).is_some(),
            None => false,
        }
    }

    /// Pop the next event due at or before `limit`, advancing `now` to its time.
    pub fn next_due(&mut self, limit: VirtualTime) -> Option<SimEvent<P>> {
        let (&(at, _), _) = self.queue.first_key_value()?;
        if at > limit {
            return None;
        }
        let (_, ev) = self.queue.pop_first()?;
        self.index.remove(&ev.seq);
        self.now = ev.fire_at;
        self.trace
            .record(ev.fire_at, ev.seq, &ev.target, ev.payload.kind());
        Some(ev)
    }

    /// Execute every event with `fire_at <= t` and leave the clock at `t`.
    pub fn run_until<F>(&mut self, t: VirtualTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Engine<P>, SimEvent<P>),
    {
        if t < self.now {
            return 0;
        }
        let mut executed = 0;
        while let Some(ev) = self.next_due(t) {
            executed += 1;
            handler(self, ev);
        }
        self.now = t;
        executed
    }
}

impl<P: EventPayload + From<Note>> Engine<P> {
    /// Record `note` in the trace as a zero-delay event. Silently dropped at the horizon.
    pub fn note(&mut self, target: impl Into<ComponentId>, note: Note) {
        let _ = self.schedule(SimDuration::ZERO, target, P::from(note));
    }
}
