//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use concurpaas_core::fireapp::{end_to_end_reaction_time, FireEventKind};
use concurpaas_core::netfabric::{ChannelMode, MessageKind, NetAddress};
use concurpaas_core::registry::{AddressBook, Registry, RegistryConfig};
use concurpaas_core::runtime::{AppDescriptor, InitParams, ProcessSpec, ScalePolicy, ScaleTrigger};
use concurpaas_core::scenario::{Scenario, WorkloadSpec};
use concurpaas_core::{compare_modes, run_scenario, Platform, SimDuration, VirtualTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const D_HOP: u64 = 5_000;
const D_PROXY: u64 = 2_000;

// Hand-derived latency oracle, kept independent of FabricConfig::one_way_latency.
fn oracle_one_way(mode: ChannelMode) -> u64 {
    match mode {
        ChannelMode::Direct => D_HOP,
        ChannelMode::Proxied => D_HOP + D_PROXY + D_HOP,
    }
}

fn sink_scenario(
    seed: u64,
    mode: ChannelMode,
    msgs: u64,
    interval: SimDuration,
    horizon: VirtualTime,
) -> Scenario {
    let mut s = Scenario::fire_default();
    s.sim.rng_seed = seed;
    s.sim.horizon = horizon;
    s.sensors.clear();
    s.bindings.clear();
    s.app = AppDescriptor {
        app_id: "bench".into(),
        channel_mode: mode,
        processes: vec![ProcessSpec {
            service_name: "sink".into(),
            behavior_id: "sink".into(),
            init_params: InitParams::new(),
        }],
        scaling: ScalePolicy::default(),
    };
    s.fabric.d_hop = SimDuration(D_HOP);
    s.fabric.d_proxy = SimDuration(D_PROXY);
    s.workload = Some(WorkloadSpec {
        msg_count: msgs,
        payload_bytes: 32,
        interval,
        target_service: None,
        start: None,
    });
    s
}

fn latency_law() -> Outcome {
    let started = Instant::now();
    let mut checked = 0;
    for mode in ChannelMode::ALL {
        let s = sink_scenario(
            1,
            mode,
            500,
            SimDuration::from_millis(1),
            VirtualTime::from_secs(2),
        );
        let out = run_scenario(&s).map_err(|e| e.to_string())?;
        ensure!(
            out.samples.len() == 500,
            "{mode}: {} samples",
            out.samples.len()
        );
        let want = oracle_one_way(mode);
        for sample in &out.samples {
            ensure!(sample.mode == mode, "sample tagged {}", sample.mode);
            ensure!(
                sample.one_way.as_micros() == want,
                "{mode} msg {}: one_way {} != {want}",
                sample.msg_id.0,
                sample.one_way.as_micros()
            );
            ensure!(
                sample.delivered_at.since(sample.sent_at) == sample.one_way,
                "msg {} timestamps disagree",
                sample.msg_id.0
            );
        }
        checked += out.samples.len();
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "{checked} samples exact (Direct 5000us, Proxied 12000us) in {elapsed:?}"
    ))
}

fn fire_reaction() -> Outcome {
    let mut report = Vec::new();
    for mode in ChannelMode::ALL {
        let s = Scenario::fire_default().with_mode(mode);
        let mut p = Platform::from_scenario(&s).map_err(|e| e.to_string())?;
        p.run_to_horizon();
        let log = p.fire_log();

        // alert A->B in the app's mode, then B->gateway and gateway->sensor as single hops
        let want = oracle_one_way(mode) + 2 * D_HOP;
        let got = end_to_end_reaction_time(log).map_err(|e| e.to_string())?;
        ensure!(
            got.as_micros() == want,
            "{mode}: reaction {got} != {want}us"
        );

        let order = [
            FireEventKind::Crossed,
            FireEventKind::AlertSent,
            FireEventKind::AlertReceived,
            FireEventKind::ReprogramSent,
            FireEventKind::ReprogramApplied,
        ];
        let positions: Vec<usize> = order
            .iter()
            .map(|k| log.entries.iter().position(|e| e.kind == *k))
            .collect::<Option<_>>()
            .ok_or_else(|| format!("{mode}: missing causal event"))?;
        ensure!(
            positions.windows(2).all(|w| w[0] < w[1]),
            "{mode}: order {positions:?}"
        );
        let times: Vec<u64> = positions
            .iter()
            .map(|&i| log.entries[i].t.as_micros())
            .collect();
        ensure!(
            times.windows(2).all(|w| w[0] <= w[1]),
            "{mode}: times {times:?}"
        );
        // crossing happens at the first 1 s tick at or after 10 s, seen one reading hop later
        ensure!(
            times[0] == 10_000_000 + oracle_one_way(mode),
            "{mode}: crossed at {}",
            times[0]
        );

        let applied = log.first(FireEventKind::ReprogramApplied).unwrap();
        let after: Vec<VirtualTime> = p
            .iot()
            .emissions("sensor-B")
            .iter()
            .copied()
            .filter(|t| *t > applied)
            .collect();
        ensure!(
            after.len() > 100,
            "{mode}: only {} sensor-B emissions after reprogram",
            after.len()
        );
        ensure!(
            after[0].since(applied) == s.fire.reprogram_interval,
            "{mode}: first post-reprogram tick after {}",
            after[0].since(applied)
        );
        for w in after.windows(2) {
            ensure!(
                w[1].since(w[0]) == s.fire.reprogram_interval,
                "{mode}: cadence {}",
                w[1].since(w[0])
            );
        }
        report.push(format!("{mode} {}us", got.as_micros()));
    }
    Ok(format!(
        "reaction {}; causal order and 100ms cadence hold",
        report.join(", ")
    ))
}

fn reliability() -> Outcome {
    let started = Instant::now();
    let mut retransmissions = 0;
    for seed in 1..=20u64 {
        let mut s = sink_scenario(
            seed,
            ChannelMode::Direct,
            1000,
            SimDuration::from_millis(1),
            VirtualTime::from_secs(10),
        );
        s.fabric.drop_prob = 0.3;
        s.fabric.rto = SimDuration::from_millis(20);
        s.fabric.max_attempts = 10;
        let mut p = Platform::from_scenario(&s).map_err(|e| e.to_string())?;
        p.run_to_horizon();
        let sent: BTreeSet<_> = p.workload_sent().iter().copied().collect();
        ensure!(sent.len() == 1000, "seed {seed}: only {} sent", sent.len());
        let sink = p
            .fabric()
            .address_of("bench/sink-1")
            .ok_or("sink has no address")?;
        let mut per_msg = BTreeMap::new();
        for d in p
            .deliveries()
            .iter()
            .filter(|d| d.kind == MessageKind::Custom)
        {
            ensure!(d.dst == sink, "seed {seed}: delivery to {}", d.dst);
            *per_msg.entry(d.msg_id).or_insert(0u32) += 1;
        }
        ensure!(
            per_msg.len() == 1000,
            "seed {seed}: {} distinct deliveries",
            per_msg.len()
        );
        ensure!(
            per_msg.values().all(|&n| n == 1),
            "seed {seed}: duplicate application delivery"
        );
        ensure!(
            per_msg.keys().copied().collect::<BTreeSet<_>>() == sent,
            "seed {seed}: delivered ids differ"
        );
        ensure!(
            p.failures().is_empty(),
            "seed {seed}: {} DeliveryFailed",
            p.failures().len()
        );
        let stats = p.fabric().stats();
        ensure!(stats.failures == 0, "seed {seed}: fabric counted failures");
        ensure!(stats.drops > 0, "seed {seed}: no drops at 0.3 loss");
        retransmissions += stats.retransmissions;
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "20 seeds x 1000 msgs delivered exactly once, {retransmissions} retransmissions, 0 failures, {elapsed:?}"
    ))
}

fn scale_out() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1e);
    let mut events = 0usize;
    for round in 0..100u64 {
        let interval = SimDuration::from_millis(rng.gen_range(100..=1500));
        let hot_from = VirtualTime(interval.as_micros() * rng.gen_range(2..=8));
        let hot_until = hot_from + interval * 5;
        let mut s = Scenario::fire_default().with_seed(round);
        s.app.channel_mode = if rng.gen_bool(0.5) {
            ChannelMode::Direct
        } else {
            ChannelMode::Proxied
        };
        s.app.scaling.startup_delay = SimDuration::from_millis(rng.gen_range(1..=300));
        s.fabric.drop_prob = rng.gen_range(0.0..0.3);
        s.registry = RegistryConfig {
            lease_duration: SimDuration::from_millis(rng.gen_range(300..=5000)),
            evict_period: SimDuration::from_millis(rng.gen_range(50..=2000)),
        };
        s.fire.alert_cooldown = SimDuration::ZERO;
        s.sensors[0].sample_interval = interval;
        s.sensors[0].trace = vec![
            (VirtualTime::ZERO, 20.0),
            (hot_from, 80.0),
            (hot_until, 20.0),
        ];
        s.sensors[1].sample_interval = SimDuration::from_millis(rng.gen_range(50..=2000));
        s.sim.horizon = hot_until + SimDuration::from_secs(3);
        s.validate().map_err(|e| e.to_string())?;

        let policy = s.app.scaling;
        ensure!(
            (
                policy.instances_per_trigger,
                policy.max_instances,
                policy.trigger
            ) == (1, 3, ScaleTrigger::OnAlert),
            "policy changed"
        );
        let mut p = Platform::from_scenario(&s).map_err(|e| e.to_string())?;
        events += p
            .run_until_checked(s.sim.horizon)
            .map_err(|e| format!("round {round}: {e}"))?;
        let alerts = p.fire_log().count(FireEventKind::AlertReceived);
        ensure!(alerts == 5, "round {round}: {alerts} alerts");
        // start=1, one per alert, capped at 3
        let want = (1 + alerts as u32).min(3);
        let got = p.runtime().instance_count("forest-fire", "fire-mgr-B");
        ensure!(got == want && got == 3, "round {round}: {got} instances");
        let live = p
            .registry()
            .instances("fire-mgr-B")
            .filter(|r| r.is_live(p.now()))
            .count();
        ensure!(live == 3, "round {round}: {live} live records");
    }
    Ok(format!(
        "100 interleavings, 5 alerts each -> 3 instances; invariant held over {events} events"
    ))
}

struct AnyAddress;

impl AddressBook for AnyAddress {
    fn is_allocated(&self, _: NetAddress) -> bool {
        true
    }
}

fn registry_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe61);
    let mut lookups = 0u64;
    for _ in 0..1000 {
        let lease = SimDuration::from_millis(rng.gen_range(10..=500));
        let mut reg = Registry::new(RegistryConfig {
            lease_duration: lease,
            evict_period: SimDuration::from_millis(rng.gen_range(5..=200)),
        });
        // model: instance -> (endpoint, expiry); None once deregistered
        let mut model: BTreeMap<String, (NetAddress, VirtualTime)> = BTreeMap::new();
        let mut now = VirtualTime::ZERO;
        for _ in 0..rng.gen_range(10..80) {
            let inst = format!("svc-{}", rng.gen_range(1..=4));
            let endpoint = NetAddress(inst[4..].parse().unwrap());
            match rng.gen_range(0..6) {
                0 => {
                    reg.register("svc", &inst, endpoint, now, &AnyAddress)
                        .map_err(|e| e.to_string())?;
                    model.insert(inst, (endpoint, now + lease));
                }
                1 => {
                    let live_in_model = model.get(&inst).is_some_and(|(_, exp)| *exp > now);
                    let renewed = reg.renew("svc", &inst, now).is_ok();
                    if live_in_model {
                        ensure!(renewed, "renew of live {inst} refused");
                    }
                    if renewed {
                        model.get_mut(&inst).unwrap().1 = now + lease;
                    }
                }
                2 => now += SimDuration::from_millis(rng.gen_range(1..=400)),
                3 => {
                    reg.evict_expired(now);
                }
                4 => {
                    reg.deregister("svc", &inst);
                    model.remove(&inst);
                }
                _ => {
                    lookups += 1;
                    let live: BTreeSet<NetAddress> = model
                        .values()
                        .filter(|(_, exp)| *exp > now)
                        .map(|(a, _)| *a)
                        .collect();
                    match reg.lookup("svc", now) {
                        Ok(addr) => ensure!(
                            live.contains(&addr),
                            "lookup returned expired {addr} at {now}"
                        ),
                        Err(_) => {
                            ensure!(live.is_empty(), "lookup failed with {} live", live.len())
                        }
                    }
                }
            }
        }
    }

    let mut reg = Registry::new(RegistryConfig::default());
    for k in 1..=3 {
        reg.register(
            "svc",
            &format!("svc-{k}"),
            NetAddress(k),
            VirtualTime::ZERO,
            &AnyAddress,
        )
        .map_err(|e| e.to_string())?;
    }
    let mut counts: BTreeMap<NetAddress, u32> = BTreeMap::new();
    for _ in 0..300 {
        *counts
            .entry(reg.lookup("svc", VirtualTime::from_secs(1)).unwrap())
            .or_default() += 1;
    }
    let split: Vec<u32> = counts.values().copied().collect();
    ensure!(split == vec![100, 100, 100], "round-robin split {split:?}");
    Ok(format!(
        "1000 sequences, {lookups} lookups never expired; round-robin 100/100/100"
    ))
}

fn determinism() -> Outcome {
    let mut lossy = sink_scenario(
        11,
        ChannelMode::Direct,
        300,
        SimDuration::from_millis(2),
        VirtualTime::from_secs(2),
    );
    lossy.fabric.drop_prob = 0.2;
    for s in [Scenario::fire_default(), lossy.clone()] {
        let a = run_scenario(&s).map_err(|e| e.to_string())?;
        let b = run_scenario(&s).map_err(|e| e.to_string())?;
        ensure!(a.trace == b.trace, "traces differ");
        let (ja, jb) = (
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap(),
        );
        ensure!(ja == jb, "reports differ");
        ensure!(a.samples_csv() == b.samples_csv(), "sample CSVs differ");
    }
    let base = run_scenario(&lossy)
        .map_err(|e| e.to_string())?
        .report
        .trace_digest;
    let other = run_scenario(&lossy.with_seed(12))
        .map_err(|e| e.to_string())?
        .report
        .trace_digest;
    ensure!(base != other, "seed change kept digest {base}");
    Ok(format!(
        "identical reruns; seed 11 -> {}.., seed 12 -> {}..",
        &base[..12],
        &other[..12]
    ))
}

fn throughput() -> Outcome {
    let s = sink_scenario(
        3,
        ChannelMode::Direct,
        10_000,
        SimDuration::from_millis(1),
        VirtualTime::from_secs(10),
    );
    let c = compare_modes(&s).map_err(|e| e.to_string())?;
    let count = |r: &concurpaas_core::MetricsReport| r.workload.as_ref().map_or(0, |w| w.delivered);
    let (d, p) = (count(&c.direct), count(&c.proxied));
    ensure!(d >= p, "direct delivered {d} < proxied {p}");
    ensure!(c.exit_code() == 0, "compare exit code {}", c.exit_code());
    Ok(format!(
        "delivered direct {d} >= proxied {p}; compare exit 0"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("latency law", latency_law),
        ("fire reaction time", fire_reaction),
        ("reliability", reliability),
        ("scale-out", scale_out),
        ("registry properties", registry_properties),
        ("determinism", determinism),
        ("throughput ordering", throughput),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
