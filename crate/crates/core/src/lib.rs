//! Low-loss simplexes and simplicial complexes in the parameter space of small
//! neural networks.
//!
//! Connector vertices are trained so that models sampled anywhere inside the
//! simplexes they span have low training loss, while a log-volume bonus keeps
//! the simplexes from shrinking. Sampling from the resulting simplexes gives
//! cheap ensembles.

pub mod checkpoint;
pub mod datasets;
pub mod ensemble;
pub mod geometry;
mod linalg;
pub mod metrics;
pub mod netcore;
pub mod opt;
pub mod spro;
pub mod surface;
