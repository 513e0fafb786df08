//! Scenario runs, latency statistics and the Direct vs Proxied comparison.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fireapp::{end_to_end_reaction_time, FireEventLog};
use crate::netfabric::{ChannelMode, FabricStats, LatencySample};
use crate::platform::{Platform, PlatformError, WorkloadStats};
use crate::scenario::Scenario;
use crate::time::SimDuration;

/// Summary of one-way latencies, percentiles by nearest rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub count: u64,
    pub mean_us: f64,
    pub median_us: u64,
    pub p95_us: u64,
    pub max_us: u64,
}

impl ModeStats {
    pub fn from_latencies(values: &[u64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(ModeStats {
            count: n as u64,
            mean_us: sorted.iter().map(|&v| v as f64).sum::<f64>() / n as f64,
            median_us: rank(0.5),
            p95_us: rank(0.95),
            max_us: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub mode: ChannelMode,
    pub horizon_us: u64,
    pub per_mode: BTreeMap<ChannelMode, ModeStats>,
    pub delivered: u64,
    /// Delivered messages per simulated second.
    pub throughput_per_s: f64,
    pub reaction_time_us: Option<u64>,
    pub trace_digest: String,
    pub events: u64,
    pub fabric: FabricStats,
    pub delivery_failures: u64,
    pub workload: Option<WorkloadStats>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub samples: Vec<LatencySample>,
    pub fire_log: FireEventLog,
    /// Rendered trace with a header comment line.
    pub trace: String,
}

impl RunOutput {
    pub fn samples_csv(&self) -> String {
        let mut out = String::from(LatencySample::CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn fire_log_csv(&self) -> String {
        self.fire_log.to_csv()
    }
}

pub fn trace_header(seed: u64, mode: ChannelMode, horizon_us: u64) -> String {
    format!("# concurpaas trace seed={seed} mode={mode} horizon_us={horizon_us}\n")
}

/// Run a scenario to its horizon.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, PlatformError> {
    let mut platform = Platform::from_scenario(scenario)?;
    platform.run_to_horizon();
    Ok(collect(&mut platform, scenario.app.channel_mode))
}

pub fn run_scenario_path(path: impl AsRef<Path>) -> Result<RunOutput, PlatformError> {
    let scenario = Scenario::load_valid(path)?;
    run_scenario(&scenario)
}

/// Gather metrics from a platform that has already been run.
pub fn collect(platform: &mut Platform, mode: ChannelMode) -> RunOutput {
    let samples = platform.drain_samples();
    let mut by_mode: BTreeMap<ChannelMode, Vec<u64>> = BTreeMap::new();
    for s in &samples {
        by_mode
            .entry(s.mode)
            .or_default()
            .push(s.one_way.as_micros());
    }
    let per_mode = by_mode
        .iter()
        .filter_map(|(m, v)| ModeStats::from_latencies(v).map(|s| (*m, s)))
        .collect();
    let horizon_us = platform.horizon().as_micros();
    let delivered = platform.deliveries().len() as u64;
    let secs = SimDuration(horizon_us).as_secs_f64();
    let fire_log = platform.fire_log().clone();
    let report = MetricsReport {
        seed: platform.seed(),
        mode,
        horizon_us,
        per_mode,
        delivered,
        throughput_per_s: if secs > 0.0 {
            delivered as f64 / secs
        } else {
            0.0
        },
        reaction_time_us: end_to_end_reaction_time(&fire_log)
            .ok()
            .map(SimDuration::as_micros),
        trace_digest: platform.trace().digest(),
        events: platform.trace().len(),
        fabric: platform.fabric().stats(),
        delivery_failures: platform.failures().len() as u64,
        workload: platform.workload_stats(),
    };
    let mut trace = trace_header(report.seed, mode, horizon_us);
    trace.push_str(&platform.trace().render());
    RunOutput {
        report,
        samples,
        fire_log,
        trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub direct: MetricsReport,
    pub proxied: MetricsReport,
    /// Proxied mean minus Direct mean, in microseconds.
    pub mean_delta_us: f64,
    pub reaction_delta_us: Option<i64>,
    /// Direct failed to beat Proxied on mean latency.
    pub regression: bool,
}

impl Comparison {
    pub fn exit_code(&self) -> i32 {
        if self.regression {
            3
        } else {
            0
        }
    }

    fn mean(report: &MetricsReport) -> Option<f64> {
        report.per_mode.get(&report.mode).map(|s| s.mean_us)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>8} {:>12} {:>10} {:>10} {:>10} {:>14}\n",
            "mode", "samples", "mean_us", "median_us", "p95_us", "max_us", "reaction_us"
        );
        for r in [&self.direct, &self.proxied] {
            let reaction = r
                .reaction_time_us
                .map_or("-".to_string(), |v| v.to_string());
            match r.per_mode.get(&r.mode) {
                Some(s) => out.push_str(&format!(
                    "{:<8} {:>8} {:>12.1} {:>10} {:>10} {:>10} {:>14}\n",
                    r.mode.as_str(),
                    s.count,
                    s.mean_us,
                    s.median_us,
                    s.p95_us,
                    s.max_us,
                    reaction
                )),
                None => out.push_str(&format!(
                    "{:<8} {:>8} {:>12} {:>10} {:>10} {:>10} {:>14}\n",
                    r.mode.as_str(),
                    0,
                    "-",
                    "-",
                    "-",
                    "-",
                    reaction
                )),
            }
        }
        out.push_str(&format!(
            "mean delta (proxied - direct): {:.1}us\n",
            self.mean_delta_us
        ));
        if self.regression {
            out.push_str("REGRESSION: direct is not faster than proxied\n");
        }
        out
    }
}

/// Run the scenario once per channel mode with the same seed.
pub fn compare_modes(scenario: &Scenario) -> Result<Comparison, PlatformError> {
    let direct = run_scenario(&scenario.clone().with_mode(ChannelMode::Direct))?.report;
    let proxied = run_scenario(&scenario.clone().with_mode(ChannelMode::Proxied))?.report;
    let (dm, pm) = (Comparison::mean(&direct), Comparison::mean(&proxied));
    let mean_delta_us = match (dm, pm) {
        (Some(d), Some(p)) => p - d,
        _ => 0.0,
    };
    let regression = match (dm, pm) {
        (Some(d), Some(p)) => d >= p,
        _ => true,
    };
    let reaction_delta_us = match (direct.reaction_time_us, proxied.reaction_time_us) {
        (Some(d), Some(p)) => Some(p as i64 - d as i64),
        _ => None,
    };
    Ok(Comparison {
        seed: scenario.sim.rng_seed,
        direct,
        proxied,
        mean_delta_us,
        reaction_delta_us,
        regression,
    })
}
