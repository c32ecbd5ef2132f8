//! Time-dependent shortest-path distance oracles.
//!
//! The crate is layered bottom-up:
//!
//! * [`pwl`] – periodic piecewise-linear travel-time functions,
//! * [`instance`] / [`generate`] – the network model, synthetic instances, TDI files,
//! * [`tdd`] – exact time-dependent Dijkstra and static balls,
//! * [`trap`] / [`bisect`] – summary construction for faraway / nearby destinations,
//! * [`flat`] / [`horn`] – oracle preprocessing into an [`store::OracleStore`],
//! * [`query`] – FCA, RQA, RQA⁺ and HQA,
//! * [`tuning`] – parameter derivation and metric profiling,
//! * [`bench`] / [`verify`] – rank-stratified benchmarking and invariant checking.

pub mod bench;
pub mod bisect;
pub mod error;
pub mod flat;
pub mod generate;
pub mod horn;
pub mod instance;
pub mod pwl;
pub mod query;
pub mod store;
pub mod tdd;
pub mod trap;
pub mod tuning;
pub mod verify;

pub use error::{Error, Result};
pub use instance::{ArcId, NodeId, TdInstance};
pub use pwl::{Breakpoint, PwlFunction};
