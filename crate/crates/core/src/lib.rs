//! Packet-level discrete-event simulation of TCP sources driven by
//! exponential on/off traffic through a shared bottleneck router.
//!
//! The pieces, bottom up:
//!
//! * [`scheduler`]: the event queue and simulation clock,
//! * [`netgraph`]: nodes, simplex links, DropTail and RED queues, static routing,
//! * [`transport`]: TCP Tahoe sender and cumulative-ACK sink,
//! * [`traffic`]: exponential on/off generators and seeded random streams,
//! * [`telemetry`]: trace lines, throughput samples, Xgraph data, reports,
//! * [`scenario`]: the scenario file format,
//! * [`sim`]: wiring a scenario into a run and writing its output files.

pub mod error;
pub mod netgraph;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod telemetry;
pub mod traffic;
pub mod transport;

pub use error::{ParseError, Result, SimError};
pub use netgraph::{NodeId, Packet, PacketKind};
pub use scenario::{parse_scenario, Scenario};
pub use scheduler::{EventId, Scheduler, Seconds};
pub use sim::{run_in_memory, run_scenario, RunOutcome, SimOptions, Simulation};
pub use telemetry::{summarize_trace, summarize_trace_file, FlowCounters, FlowSeries, RunReport, TraceSummary};

/// The drop-regime scenario: three 1 Mb/s on/off sources into a 1 Mb/s bottleneck.
pub const DROP_SCENARIO: &str = include_str!("../../../scenarios/drop.scn");
/// The same topology with 100 kb/s sources.
pub const NODROP_SCENARIO: &str = include_str!("../../../scenarios/nodrop.scn");
