//! Relational data completion: autoregressive models trained on the available
//! part of an incomplete database synthesize missing tuples at query time so
//! that aggregates over the completed join approximate the full database.

pub mod armodel;
pub mod completion;
pub mod encoding;
pub mod error;
pub mod evalharness;
pub mod ingest;
pub mod nn;
pub mod planner;
pub mod query;
pub mod schema;
pub mod ssarmodel;

pub use error::{Error, Result};
