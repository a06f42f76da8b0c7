//! Desk-scale laboratory for trajectory-level preference optimization.
//!
//! The crate covers the full loop for studying preference methods on
//! persona-branching GUI tasks without a device or an LLM in sight:
//!
//! * [`traj`] - action vocabulary, trajectory schema, JSONL persistence
//! * [`synthgen`] - seeded synthetic task/trajectory generator
//! * [`align`] - pads variable-length preference pairs into columns
//! * [`intensity`] - rule-based persona scores, weights and gates
//! * [`policy`] - featurized log-linear action policy with analytic grads
//! * [`objectives`] - sft, dpo, step-dpo, tipo and its ablations
//! * [`trainer`] - plain SGD over the two training stages
//! * [`metrics`] - greedy rollouts, SR / PAS / Compliance / PD, reports
//! * [`pipeline`] - multi-seed reproduction runs and trend checks
//!
//! Everything is deterministic given a seed: same seed, same bytes.

pub mod align;
pub mod dataset;
pub mod error;
pub mod intensity;
pub mod metrics;
pub mod objectives;
pub mod oracles;
pub mod pipeline;
pub mod policy;
pub mod synthgen;
pub mod trainer;
pub mod traj;
pub mod util;

pub use error::{Error, Result};
