//! Compliance automation engine.
//!
//! Scores transaction events and compliance documents for risk, auto-decides
//! what a prioritized rule set can decide, routes the rest through a learned
//! escalation policy, and keeps every state change in a checksummed
//! write-ahead log that replays deterministically.
//!
//! The runnable programs under `examples/` walk through each subsystem.

pub mod doc;
pub mod domain;
pub mod dqn;
pub mod engine;
pub mod features;
pub mod linalg;
pub mod nn;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod rng;
pub mod rules;
pub mod sim;
pub mod sequence;
pub mod stream;
pub mod svm;

pub use domain::{
    Alert, AnomalyFlag, CaseStatus, Channel, ComplianceCase, Decision, DecisionSource, Event, GroundTruth, Label,
    LabelOrigin, Severity, Verdict,
};
