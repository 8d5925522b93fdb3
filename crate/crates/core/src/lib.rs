//! Certified defenses against training-set poisoning by partition aggregation.
//!
//! A training set is split into `k` disjoint partitions by a rule that does
//! not depend on labels; one base classifier is trained per partition and the
//! ensemble predicts by plurality vote. Because one poisoned item can reach at
//! most one partition, the vote gap certifies a poisoning budget.

pub mod binary_cluster;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod learners;
pub mod partitioning;
pub mod verification;

pub use error::{Error, Result};
