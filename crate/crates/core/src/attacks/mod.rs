//! Malicious-client strategies.

pub mod adaptive;
pub mod backdoor;
pub mod distill;

pub use adaptive::{
    adaptive_attack, AdaptiveLogRow, AdaptiveOutcome, AdaptiveSpec, Maintenance, MatchMode, StopReason,
};
pub use backdoor::{apply_trigger, apply_trigger_slice, backdoor_attack, trigger_success_rate, BackdoorSpec};
pub use distill::{distill, soft_predictions, DistillSpec, Distilled};
