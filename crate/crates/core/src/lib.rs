//! Desk-scale laboratory for polynomial overfitting and model selection.
//!
//! Synthetic sources ([`sources`]) feed a stable least-squares fitter
//! ([`polyfit`]); selection criteria ([`criteria`]) are judged against the
//! critical points of the test-error curve ([`analysis`]). [`experiment`]
//! ties it together for seeded replication runs.

pub mod analysis;
pub mod criteria;
pub mod error;
pub mod experiment;
pub mod infotheory;
pub mod polyfit;
pub mod rng;
pub mod sources;

pub use error::{Error, Result};
