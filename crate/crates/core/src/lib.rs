//! Label augmentation via time-based knowledge distillation.
//!
//! Models trained on earlier time frames score the current frame, and their
//! outputs enter the current model's loss as KL terms next to the usual
//! cross-entropy on hard labels. Only the current frame's rows are used for
//! training; history reaches the new model through its teachers.
//!
//! The crate contains the learners ([`mlp`], [`gbt`], [`ensemble`]), the
//! distillation chain ([`distill`]), preprocessing ([`data`]), metrics
//! ([`eval`]), a drift generator ([`driftgen`]), content-addressed storage
//! ([`registry`]) and the experiment harness behind the `latkd` CLI
//! ([`harness`]).

pub mod data;
pub mod distill;
pub mod driftgen;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod gbt;
pub mod harness;
pub mod hash;
pub mod mlp;
pub mod model;
pub mod registry;

pub use error::{LatkdError, Result};
