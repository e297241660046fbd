//! Federated principal component analysis by ADMM consensus.
//!
//! Two local solvers share one orchestration loop:
//!
//! * **FedPE** runs plain gradient descent in Euclidean space and keeps the
//!   local bases close to orthonormal through a hinge-squared surrogate
//!   penalty with its own dual variable.
//! * **FedPG** runs projected gradient descent on the Grassmann manifold and
//!   retracts every step back onto it with a thin QR factorization, so the
//!   iterates are orthonormal by construction.
//!
//! Every client is simulated in-process. Sampling, initialization and
//! aggregation are keyed by the run seed so that a run is reproducible bit for
//! bit regardless of how the local solves are scheduled.
//!
//! The crate is `no_std` (with `alloc`). File formats, the command-line
//! front end and the thread-pool executor live in the `grasspca` crate.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is how NaN is rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod detection;
mod error;
pub mod federation;
pub mod linalg;
pub mod objectives;
pub mod pca;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{Basis, DenseMatrix};
