use std::collections::{BTreeMap, BTreeSet};

use concurpaas_core::netfabric::{
    ChannelMode, Fabric, FabricConfig, FabricEvent, FabricOutcome, MessageKind,
};
use concurpaas_core::simcore::{Engine, EventPayload, SimConfig};
use concurpaas_core::{SimDuration, VirtualTime};
use proptest::prelude::*;

#[derive(Debug, Clone, PartialEq)]
struct Tag(usize);

impl EventPayload for Tag {
    fn kind(&self) -> &str {
        "Tag"
    }
}

fn config(seed: u64) -> SimConfig {
    SimConfig {
        rng_seed: seed,
        horizon: VirtualTime::from_secs(3600),
        trace_enabled: true,
    }
}

proptest! {
    #[test]
    fn events_fire_in_time_then_insertion_order(
        delays in prop::collection::vec(0u64..50, 1..200),
        cancel in prop::collection::vec(any::<bool>(), 200),
    ) {
        let mut engine = Engine::new(config(1));
        let mut ids = Vec::new();
        for (i, d) in delays.iter().enumerate() {
            ids.push(engine.schedule(SimDuration(*d), "t", Tag(i)).unwrap());
        }
        let mut cancelled = BTreeSet::new();
        for (i, id) in ids.iter().enumerate() {
            if cancel[i] {
                prop_assert!(engine.cancel(*id));
                cancelled.insert(i);
            }
        }
        let mut fired = Vec::new();
        engine.run_until(VirtualTime(100), |_, ev| fired.push(ev.payload.0));

        let mut expected: Vec<usize> = (0..delays.len()).filter(|i| !cancelled.contains(i)).collect();
        expected.sort_by_key(|&i| (delays[i], i));
        prop_assert_eq!(fired, expected);
        prop_assert_eq!(engine.now(), VirtualTime(100));
    }

    #[test]
    fn every_message_delivered_exactly_once(
        seed in any::<u64>(),
        drop_prob in 0.0f64..0.5,
        proxied in any::<bool>(),
        count in 1usize..150,
    ) {
        let mut engine: Engine<FabricEvent> = Engine::new(config(seed));
        let mut fabric = Fabric::new(FabricConfig { drop_prob, max_attempts: 40, ..FabricConfig::default() });
        let a = fabric.allocate_interface("a").unwrap();
        let b = fabric.allocate_interface("b").unwrap();
        let mode = if proxied { ChannelMode::Proxied } else { ChannelMode::Direct };
        let mut sent = BTreeSet::new();
        for i in 0..count {
            sent.insert(fabric.send_to(&mut engine, a, b, mode, MessageKind::Custom, vec![i as u8]).unwrap());
        }
        let mut delivered: BTreeMap<_, u32> = BTreeMap::new();
        let mut failed = 0;
        while let Some(ev) = engine.next_due(VirtualTime::from_secs(3600)) {
            match fabric.handle(&mut engine, ev.payload) {
                Some(FabricOutcome::Delivered(m)) => *delivered.entry(m.msg_id).or_default() += 1,
                Some(FabricOutcome::Failed(_)) => failed += 1,
                None => {}
            }
        }
        prop_assert_eq!(failed, 0);
        prop_assert!(delivered.values().all(|&n| n == 1));
        prop_assert_eq!(delivered.keys().copied().collect::<BTreeSet<_>>(), sent);
        prop_assert_eq!(fabric.in_flight(), 0);
        let want = if proxied { 12_000 } else { 5_000 };
        // one_way runs from the first attempt, so each retransmission adds one rto
        let rto = FabricConfig::default().rto.as_micros();
        for s in fabric.drain_samples() {
            let extra = s.one_way.as_micros() - want;
            prop_assert_eq!(extra % rto, 0, "one_way {}", s.one_way);
        }
    }

    #[test]
    fn interface_addresses_are_unique(owners in prop::collection::vec("[a-z]{1,4}", 1..60)) {
        let mut fabric = Fabric::new(FabricConfig::default());
        let mut seen = BTreeMap::new();
        for owner in &owners {
            match fabric.allocate_interface(owner) {
                Ok(addr) => {
                    prop_assert!(!seen.contains_key(owner));
                    prop_assert!(!seen.values().any(|a| *a == addr));
                    seen.insert(owner.clone(), addr);
                }
                Err(_) => prop_assert!(seen.contains_key(owner)),
            }
        }
        prop_assert_eq!(fabric.allocations().count(), seen.len());
    }
}
