//! Back-translation preference-data curation for machine translation.
//!
//! The crate is organised around the stages of the curation loop:
//!
//! - [`data`]: domain types, corpus segmentation and the JSONL dataset format
//! - [`metrics`]: native BLEU, chrF++, TER and METEOR
//! - [`filter`]: the BLEU faithfulness gate, knee-point quality gate and
//!   preference-triplet construction
//! - [`dpo`]: the DPO objective over sequence log-probabilities
//! - [`clients`]: wire clients (and deterministic mocks) for the translator,
//!   student, scorer and trainer services
//! - [`pipeline`]: the iterative, checkpointed curation loop

pub mod clients;
pub mod data;
pub mod dpo;
mod error;
pub mod filter;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
