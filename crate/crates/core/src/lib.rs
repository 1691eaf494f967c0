//! Estimation of the weighted adjacency matrix of a multivariate Bernoulli
//! autoregressive process from event data in which each event is observed
//! only with some probability `p`.

pub mod error;
pub mod filter;
pub mod harness;
pub mod ingest;
pub mod io;
pub mod loss;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod taylor;

pub use error::{Error, Result};
pub use model::{EventMatrix, MissingnessSpec, NetworkModel};
