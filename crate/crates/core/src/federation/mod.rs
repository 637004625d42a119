//! Federated rounds with a certification gate.

mod aggregate;
mod gate;
mod population;
mod sim;

pub use aggregate::{median_aggregate, ClientUpdate};
pub use gate::{defender_gate, GateCriterion, GateThresholds, Metrics, Verdict};
pub use population::{hypergeometric_tail, sample_quorum, ClientPopulation};
pub use sim::{evaluate, run_simulation, AttackPlan, RoundRecord, SimConfig, SimOutcome, TriggerConfig};
