//! Checker-guided agentic reinforcement learning on a simulated forensic
//! tool environment.
//!
//! The crate wires together a deterministic seven-tool world, a canonical
//! tagged response grammar, a tabular autoregressive policy with exact
//! gradients, group-relative policy optimization with SAPO token weighting,
//! tree-structured trajectory synthesis, and a three-level process checker
//! that gates rewards in the final training stage. Everything is seeded and
//! reproducible: two runs with the same config produce byte-identical
//! reports.

pub mod agentloop;
pub mod arspo;
pub mod checker;
pub mod decode;
pub mod grammar;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod rewards;
pub mod toolenv;
pub mod trajgen;
pub mod types;

pub use types::{
    GroundTruth, Label, Prediction, Step, TaskKind, TaskSpec, TokenSequence, ToolCall, ToolName,
    Trajectory,
};
