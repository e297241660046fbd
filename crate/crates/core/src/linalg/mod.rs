//! Dense linear-algebra kernel: row-major matrices, thin Householder QR, a
//! top-k symmetric eigensolver and subspace distances.

mod basis;
mod eigen;
mod matrix;
mod qr;

pub use basis::{chordal_distance, Basis, ORTHONORMAL_TOL};
pub use eigen::{polar_factor, symmetric_eigen, top_k_eig, ACCEPT_RESIDUAL, SYMMETRY_TOL, TARGET_RESIDUAL};
pub use matrix::DenseMatrix;
pub use qr::{qr_thin, qr_thin_recovering, random_basis, RANK_TOL};
