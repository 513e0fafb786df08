//! Discrete-event simulation of a container PaaS with an IoT gateway,
//! a service registry and a latency-modelled network fabric.

pub mod api;
pub mod fireapp;
pub mod harness;
pub mod iot;
pub mod netfabric;
pub mod platform;
pub mod registry;
pub mod runtime;
pub mod scenario;
pub mod simcore;
pub mod time;

pub use harness::{compare_modes, run_scenario, Comparison, MetricsReport, ModeStats, RunOutput};
pub use netfabric::ChannelMode;
pub use platform::Platform;
pub use scenario::Scenario;
pub use time::{SimDuration, VirtualTime};
