//! Temporal community search with a query-driven temporal graph network.
//!
//! The crate covers the whole offline/online pipeline: ingesting snapshot
//! graphs ([`graph`]), a small reverse-mode tensor library ([`tensor`]), the
//! network itself ([`model`]), per-query training over time ([`trainer`]),
//! threshold-BFS community extraction ([`search`]), interactive sessions with
//! a meta-model ([`interactive`]) and evaluation drivers ([`eval`]).

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod interactive;
pub mod model;
pub mod optim;
pub mod search;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
