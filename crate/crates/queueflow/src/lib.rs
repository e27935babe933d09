//! Dual-engine dynamic network flows: a discrete packet-routing model with
//! deterministic queuing and the continuous flow-over-time model, coupled via
//! exact piecewise-linear cumulative flows, with a convergence harness and a
//! competitive-routing layer on top.
//!
//! All model state is exact rational arithmetic; floating point appears only
//! in the quarantined convergence-rate fits.
//!
//! Module map:
//! - [`rational`]: exact scalar type, parsing, grid rounding
//! - [`pwl`]: step functions and piecewise-linear cumulative functions
//! - [`model`]: networks, commodities, discretization, scenario documents
//! - [`discrete`]: packet queues, zipper merge, network loading, event logs
//! - [`continuous`]: deterministic-queue flows over time for fixed paths
//! - [`coupling`]: packets from supplies, refined times, discrete queue stats
//! - [`convergence`]: (α, β) sweeps, error records, waiting-time bound,
//!   hypothetical flows, rate fit
//! - [`game`]: strategy profiles, best responses, ε-equilibria, PNE search

pub mod continuous;
pub mod convergence;
pub mod coupling;
pub mod discrete;
pub mod game;
pub mod model;
pub mod pwl;
pub mod rational;

pub use continuous::{arc_outflow, arrival_time, commodity_split, load_network, FlowOverTime};
pub use convergence::{run_sweep, ConvergenceReport, SweepConfig};
pub use coupling::{build_packets, couple, extract_rates, refined_arrival, CoupledRun};
pub use discrete::{network_loading, EventLog, LoadingConfig, PacketId, SimPacket};
pub use game::{builtin_no_pne, epsilon_check, exhaustive_pne_search, PathProfile};
pub use model::{
    discretize, parse_scenario, rate_bound, validate_scenario, Arc, ArcId, Commodity, CommodityId,
    Discretization, DiscretizedArc, Network, NodeId, Player, Scenario, SupplyRate,
};
pub use pwl::{PwlFn, StepFn};
pub use rational::{format_rational, parse_rational, Rational};
