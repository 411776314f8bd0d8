//! Hybrid recommender engine.
//!
//! Three phases run over an e-commerce behavior log:
//!
//! 1. **Behavior prediction.** Per-category behavior sequences are cut from
//!    purchase-anchored windows ([`seqdb`]), mined for frequent patterns
//!    ([`spm`]), and open sequences are scored for payment probability.
//! 2. **Collaborative filtering.** Behavior codes become implicit ratings and
//!    a latent factor model is fit by alternating least squares ([`cf`]).
//! 3. **Recommend.** Users whose payment probability clears a gate receive
//!    the top-ranked items of the predicted category ([`hybrid`]).
//!
//! [`segment`] and [`eval`] provide the stratified single-day evaluation.

pub mod cf;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod hybrid;
pub mod ingest;
pub mod segment;
pub mod seqdb;
pub mod spm;

pub use error::{Error, Result};
pub use ingest::{BehaviorType, Hour, Transaction};
