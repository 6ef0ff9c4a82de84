//! Sparse kernel classifiers for crash-risk analysis.
//!
//! The crate provides kernel logistic regression and its greedy sparse variant
//! (the import vector machine), an SMO-trained SVM baseline, a random forest
//! with permutation importance, ROC/AUC evaluation, and a loop-detector data
//! pipeline that builds matched case-control datasets.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod kernel;
pub mod klr;
pub mod rng;

pub use data::{Dataset, FeatureMatrix, Standardizer};
pub use error::{Error, Result};
pub use kernel::{GramMatrix, KernelFamily, KernelSpec};
pub mod forest;
pub mod ivm;
pub mod svm;
pub mod eval;
pub mod io;
pub mod traffic;
pub mod model_io;
pub mod experiment;
