//! Relational decision-tree learning with lazily constructed aggregate
//! features over foreign-key join paths, plus an eager propositionalizer
//! that materializes the same feature space up front.

pub mod catalog;
pub mod eager;
pub mod error;
pub mod eval;
pub mod features;
pub mod joinpath;
pub mod ldt;
pub mod storage;
pub mod tree;

pub use error::{Error, Result};
