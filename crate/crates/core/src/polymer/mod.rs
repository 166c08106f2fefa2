//! Polymer representation of the low-temperature expansion: activities,
//! convergence criteria, cluster weights and the constants derived from them.

pub mod bz;
pub mod cluster;
pub mod decay;
pub mod series;
