//! Desk-scale laboratory for binary LLM routing control planes.
//!
//! The crate has three sides that talk to each other through small,
//! file-backed interfaces:
//!
//! * **Routers** — four scorer families ([`scorers`]) plus the control
//!   plane proper ([`gateway`]): threshold calibration, the routing rule,
//!   transcripts, and cost accounting.
//! * **Attacks** — confounder-gadget generation by discrete hill climbing
//!   ([`confound`]), in query-independent, query-specific, transfer,
//!   score-minimizing, and perplexity-constrained variants, plus
//!   optimization-free baselines.
//! * **Defenses** — perplexity filtering with ROC/AUC evaluation and
//!   per-user workload monitoring ([`shield`]).
//!
//! [`textcore`] supplies the shared tokenizer, hashed embeddings, and the
//! n-gram language model used for perplexity. [`bench`] generates synthetic
//! workloads and runs attack/defense experiments into reports. Everything
//! is seeded and deterministic; see the `examples/` directory for one
//! runnable walkthrough per capability.

pub mod bench;
pub mod cli;
pub mod confound;
pub mod error;
pub mod gateway;
pub mod scorers;
pub mod shield;
pub mod textcore;

pub use error::{Error, Result};
