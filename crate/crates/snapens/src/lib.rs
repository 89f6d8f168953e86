//! Snapshot-ensemble collaborative filtering.
//!
//! The pipeline has three stages. `cf` trains base recommenders (matrix
//! factorization, factorization machines, neighborhood models) and captures
//! intermediate snapshots along the training trajectory. `snapshot` freezes
//! each snapshot's predictions for the user-item pairs an experiment needs
//! and persists them in a small text format. `neuse` learns to combine the
//! frozen snapshot predictions per user-item pair with a multi-memory
//! attention network; `ensemble` holds the non-learned and shallow-learned
//! combiners it is compared against.
//!
//! Everything is deterministic given a root seed. Parallel and sequential
//! builds produce bit-identical results.

pub mod cf;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod mat;
pub mod metrics;
pub mod neuse;
pub mod parallel;
pub mod rng;
pub mod snapshot;
pub mod synth;

pub use error::SnapError;
