//! System-level discrete-event simulator for 5G mmWave networks with
//! integrated access and backhaul (IAB).
//!
//! The crate models a square-area random deployment of gNBs and UEs, forms a
//! wireless backhaul forest over the donor gNBs according to a parent
//! selection policy, schedules access and backhaul bearers under the in-band
//! half-duplex constraint with a backhaul-aware weighted round robin, and
//! drives per-UE application traffic (saturating CBR, DASH video, HTTP page
//! downloads) end-to-end through the resulting multi-hop data plane.
//!
//! The [`experiment`] module runs Monte Carlo batches over the three
//! deployment variants (all-wired, IAB, only-donors) and writes fixed-schema
//! CSVs; a thin CLI wraps it.

pub mod channel;
pub mod deployment;
pub mod engine;
pub mod experiment;
pub mod forwarding;
pub mod metrics;
pub mod rng;
pub mod scheduler;
pub mod topology;
pub mod traffic;
pub mod world;

pub use channel::{LinkCache, LinkState, RadioConfig};
pub use deployment::{DeploymentKind, GnbSite, Scenario, UeSite};
pub use engine::{Engine, EventSink, SimTime};
pub use experiment::{CsvBundle, ExperimentConfig, ExperimentError, TrafficKind};
pub use forwarding::Packet;
pub use metrics::RunMetrics;
pub use scheduler::{Bearer, BearerKind, Endpoint, FrameAllocation, FrameConfig};
pub use topology::{IabTree, PolicyConfig, PolicyKind, UeAssociation};
pub use traffic::{CbrConfig, DashConfig, HttpConfig, TransportConfig};
pub use world::{RunOutcome, RunOutput, RunSpec, TrafficModel};
