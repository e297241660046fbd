//! Centralized PCA and reconstruction error.
//!
//! Samples are the columns of a `d × n` matrix. The basis is computed from the
//! `d × d` scatter matrix `XXᵀ`, which is small for tabular traffic features.
//! No centering happens here; callers z-score their data first.

use alloc::vec::Vec;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::linalg::{top_k_eig, Basis, DenseMatrix};

/// How a client's scatter matrix is scaled before it enters an objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GramScaling {
    /// `XXᵀ`: the objective is the summed squared reconstruction error.
    Raw,
    /// `XXᵀ / n`: the objective is the mean squared reconstruction error per
    /// sample, which keeps step sizes meaningful across client sizes.
    #[default]
    PerSample,
}

/// `XXᵀ` (optionally divided by the sample count).
pub fn scatter(x: &DenseMatrix, scaling: GramScaling) -> DenseMatrix {
    let s = x.gram_rows();
    match scaling {
        GramScaling::Raw => s,
        GramScaling::PerSample => s.scale(1.0 / x.cols().max(1) as f64),
    }
}

/// A fitted rank-`k` principal subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub basis: Basis,
}

impl PcaModel {
    pub fn new(basis: Basis) -> Self {
        Self { basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// See [`reconstruction_error`].
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        reconstruction_error(self, x)
    }
}

/// Rank-`k` PCA of the columns of `x`: the leading eigenvectors of `XXᵀ`,
/// which minimise `‖(I − UUᵀ)X‖_F²` over orthonormal `U`.
pub fn fit_centralized(x: &DenseMatrix, k: usize) -> Result<PcaModel> {
    if x.cols() == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    if k == 0 || k > x.rows() {
        return Err(Error::InvalidArgument("rank must be in 1..=d"));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("pca input"));
    }
    let (basis, _) = top_k_eig(&x.gram_rows(), k)?;
    Ok(PcaModel { basis })
}

/// `‖(I − UUᵀ)x‖₂²`
pub fn reconstruction_error(model: &PcaModel, x: &[f64]) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstruction input"));
    }
    model.basis.residual_energy(x)
}

/// One independent fit per client with no communication. Output order
/// follows the input order.
pub fn self_learning_pca(clients: &[ClientDataset], k: usize) -> Result<Vec<PcaModel>> {
    clients
        .iter()
        .map(|c| fit_centralized(&c.features, k).map_err(|e| e.for_client(c.id)))
        .collect()
}
