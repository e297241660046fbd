//! Per-client objectives and local solvers.
//!
//! Both variants minimise, for one client `i` and one round,
//!
//! ```text
//! f(U) + ⟨Y, U − Z⟩ + (ρ/2)‖U − Z‖²              (FedPG, U on the manifold)
//! f(U) + ⟨Y, U − Z⟩ + ⟨T, h(U)⟩
//!      + (ρ/2)‖U − Z‖² + (ρ/2)‖h(U)‖²            (FedPE, U in Euclidean space)
//! ```
//!
//! with `f(U) = ‖(I − UUᵀ)X‖_F²` expressed through the scatter matrix
//! `S = XXᵀ` and the surrogate `h(U) = max(0, UᵀU − I)²` (componentwise).

use crate::error::{Error, Result};
use crate::linalg::{polar_factor, qr_thin, Basis, DenseMatrix};

/// Orthonormality tolerance for the Grassmann objective and gradient.
pub const MANIFOLD_TOL: f64 = 1e-6;
/// Entries of `UᵀU − I` at or below this value are treated as satisfied by the
/// surrogate constraint. Sits well above the rounding noise of a QR factor.
pub const HINGE_DEADBAND: f64 = 1e-12;
/// Frobenius norm above which a FedPE iterate counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Data for one client's local subproblem in one round.
#[derive(Clone, Debug)]
pub struct LocalProblem {
    /// `d × d` scatter matrix of the client's data.
    pub gram: DenseMatrix,
    /// Consensus dual `Y` (`d × k`).
    pub dual_consensus: DenseMatrix,
    /// Orthonormality dual `T` (`k × k`); unused by FedPG.
    pub dual_ortho: DenseMatrix,
    /// Current consensus `Z` (`d × k`). Not orthonormal in general.
    pub consensus: DenseMatrix,
    pub rho: f64,
    pub eta: f64,
    pub local_iters: usize,
}

impl LocalProblem {
    pub fn new(
        gram: DenseMatrix,
        dual_consensus: DenseMatrix,
        dual_ortho: DenseMatrix,
        consensus: DenseMatrix,
        rho: f64,
        eta: f64,
        local_iters: usize,
    ) -> Result<Self> {
        let d = gram.rows();
        let (zd, k) = consensus.shape();
        if gram.cols() != d || zd != d {
            return Err(Error::DimensionMismatch {
                op: "LocalProblem",
                expected: (d, d),
                found: (zd, gram.cols()),
            });
        }
        if dual_consensus.shape() != (d, k) {
            return Err(Error::DimensionMismatch {
                op: "LocalProblem dual_consensus",
                expected: (d, k),
                found: dual_consensus.shape(),
            });
        }
        if dual_ortho.shape() != (k, k) {
            return Err(Error::DimensionMismatch {
                op: "LocalProblem dual_ortho",
                expected: (k, k),
                found: dual_ortho.shape(),
            });
        }
        if gram.asymmetry() > 1e-10 * gram.max_abs().max(1.0) {
            return Err(Error::InvalidArgument("scatter matrix is not symmetric"));
        }
        if !(rho > 0.0) || !(eta > 0.0) || local_iters == 0 {
            return Err(Error::InvalidArgument("rho, eta and local_iters must be positive"));
        }
        Ok(Self {
            gram,
            dual_consensus,
            dual_ortho,
            consensus,
            rho,
            eta,
            local_iters,
        })
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    pub fn rank(&self) -> usize {
        self.consensus.cols()
    }

    fn check_iterate(&self, u: &DenseMatrix, op: &'static str) -> Result<()> {
        if u.shape() != self.consensus.shape() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.consensus.shape(),
                found: u.shape(),
            });
        }
        Ok(())
    }
}

fn check_gram(s: &DenseMatrix, u: &DenseMatrix, op: &'static str) -> Result<()> {
    if s.rows() != s.cols() || s.rows() != u.rows() {
        return Err(Error::DimensionMismatch {
            op,
            expected: (s.rows(), u.cols()),
            found: u.shape(),
        });
    }
    Ok(())
}

fn check_manifold(u: &DenseMatrix) -> Result<()> {
    let deviation = u.orthonormality_defect();
    if !(deviation <= MANIFOLD_TOL) {
        return Err(Error::NotOrthonormal { deviation });
    }
    Ok(())
}

/// `tr(S) − 2·tr(UᵀSU) + tr(UᵀSU·UᵀU)`, which is `‖(I − UUᵀ)X‖_F²` for any
/// `U` when `S = XXᵀ`.
pub fn f_value(s: &DenseMatrix, u: &DenseMatrix) -> Result<f64> {
    check_gram(s, u, "f_value")?;
    let su = s.matmul(u)?;
    let m = u.t_matmul(&su)?;
    let g = u.t_matmul(u)?;
    Ok(s.trace() - 2.0 * m.trace() + m.dot(&g.transpose())?)
}

/// Euclidean gradient of [`f_value`]: `−4SU + 2SU(UᵀU) + 2U(UᵀSU)`.
pub fn f_grad(s: &DenseMatrix, u: &DenseMatrix) -> Result<DenseMatrix> {
    check_gram(s, u, "f_grad")?;
    let su = s.matmul(u)?;
    let g = u.t_matmul(u)?;
    let m = u.t_matmul(&su)?;
    let mut out = su.scale(-4.0);
    out.axpy(2.0, &su.matmul(&g)?)?;
    out.axpy(2.0, &u.matmul(&m)?)?;
    Ok(out)
}

#[inline]
fn hinge(v: f64) -> f64 {
    if v > HINGE_DEADBAND {
        v
    } else {
        0.0
    }
}

fn hinge_of_gram(u: &DenseMatrix) -> DenseMatrix {
    let g = u.t_matmul(u).expect("a matrix is always conformable with itself");
    DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| {
        hinge(g[(i, j)] - if i == j { 1.0 } else { 0.0 })
    })
}

/// Surrogate orthonormality constraint `max(0, UᵀU − I)²`, componentwise.
pub fn h_constraint(u: &DenseMatrix) -> DenseMatrix {
    hinge_of_gram(u).map(|v| v * v)
}

pub fn fedpe_local_value(p: &LocalProblem, u: &DenseMatrix) -> Result<f64> {
    p.check_iterate(u, "fedpe_local_value")?;
    let h = h_constraint(u);
    let diff = u.sub(&p.consensus)?;
    Ok(f_value(&p.gram, u)?
        + p.dual_consensus.dot(&diff)?
        + p.dual_ortho.dot(&h)?
        + 0.5 * p.rho * diff.frobenius_norm_sq()
        + 0.5 * p.rho * h.frobenius_norm_sq())
}

/// Gradient of [`fedpe_local_value`].
///
/// With `M = max(0, UᵀU − I)`, `A = 2·T⊙M` and `B = 2ρ·M³` (componentwise):
/// `∇f + Y + ρ(U − Z) + U(A + Aᵀ) + U(B + Bᵀ)`.
pub fn fedpe_local_grad(p: &LocalProblem, u: &DenseMatrix) -> Result<DenseMatrix> {
    p.check_iterate(u, "fedpe_local_grad")?;
    let mut grad = f_grad(&p.gram, u)?;
    grad.axpy(1.0, &p.dual_consensus)?;
    grad.axpy(p.rho, &u.sub(&p.consensus)?)?;

    let m = hinge_of_gram(u);
    if m.max_abs() > 0.0 {
        let a = p.dual_ortho.hadamard(&m)?.scale(2.0);
        let b = m.map(|v| v * v * v).scale(2.0 * p.rho);
        let sym = a.add(&a.transpose())?.add(&b.add(&b.transpose())?)?;
        grad.axpy(1.0, &u.matmul(&sym)?)?;
    }
    Ok(grad)
}

/// `f(U) + ⟨Y, U − Z⟩ + (ρ/2)‖U − Z‖²` for orthonormal `U`.
pub fn fedpg_local_value(p: &LocalProblem, u: &DenseMatrix) -> Result<f64> {
    p.check_iterate(u, "fedpg_local_value")?;
    check_manifold(u)?;
    let diff = u.sub(&p.consensus)?;
    Ok(f_value(&p.gram, u)? + p.dual_consensus.dot(&diff)? + 0.5 * p.rho * diff.frobenius_norm_sq())
}

/// Euclidean gradient `−2SU + Y + ρ(U − Z)` of the objective with `UᵀU = I`
/// substituted into `f`.
pub fn fedpg_euclidean_grad(p: &LocalProblem, u: &DenseMatrix) -> Result<DenseMatrix> {
    p.check_iterate(u, "fedpg_euclidean_grad")?;
    check_manifold(u)?;
    let mut grad = p.gram.matmul(u)?.scale(-2.0);
    grad.axpy(1.0, &p.dual_consensus)?;
    grad.axpy(p.rho, &u.sub(&p.consensus)?)?;
    Ok(grad)
}

/// Grassmann gradient: the Euclidean gradient projected onto the tangent
/// space at `U`.
pub fn fedpg_riemannian_grad(p: &LocalProblem, u: &Basis) -> Result<DenseMatrix> {
    project_tangent(u, &fedpg_euclidean_grad(p, u.matrix())?)
}

/// `(I − UUᵀ)G`
pub fn project_tangent(u: &Basis, g: &DenseMatrix) -> Result<DenseMatrix> {
    check_manifold(u.matrix())?;
    u.reject(g)
}

/// QR retraction: the `Q` factor of `U + step`.
pub fn retract(u: &Basis, step: &DenseMatrix) -> Result<Basis> {
    let moved = u.matrix().add(step)?;
    Ok(qr_thin(&moved)?.0)
}

/// Exactly `C` projected-gradient steps with QR retraction from `u0`.
pub fn solve_local_fedpg(p: &LocalProblem, u0: &Basis) -> Result<Basis> {
    let mut u = u0.clone();
    for _ in 0..p.local_iters {
        let direction = fedpg_riemannian_grad(p, &u)?;
        u = retract(&u, &direction.scale(-p.eta))?;
    }
    Ok(u)
}

/// Exactly `C` plain gradient steps from `u0`.
pub fn solve_local_fedpe(p: &LocalProblem, u0: &DenseMatrix) -> Result<DenseMatrix> {
    let mut u = u0.clone();
    for _ in 0..p.local_iters {
        let grad = fedpe_local_grad(p, &u)?;
        u.axpy(-p.eta, &grad)?;
        let norm = u.frobenius_norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { norm });
        }
    }
    Ok(u)
}

/// Picks, within the span of `U`, the representative `UR` (`R` orthogonal)
/// that minimises the local objective.
///
/// `f` depends only on the span, so over the rotations `R` the objective
/// reduces to `−⟨ρZ − Y, UR⟩` plus constants, minimised by the polar factor of
/// `Uᵀ(ρZ − Y)`. The tangent projection never moves `U` within its own span,
/// so without this step clients that agree on a subspace can still disagree
/// on its coordinates and the consensus residual stalls.
pub fn align_to_consensus(p: &LocalProblem, u: &Basis) -> Result<Basis> {
    p.check_iterate(u.matrix(), "align_to_consensus")?;
    let mut target = p.consensus.scale(p.rho);
    target.axpy(-1.0, &p.dual_consensus)?;
    let m = u.matrix().t_matmul(&target)?;
    match polar_factor(&m) {
        Some(r) => Basis::with_tolerance(u.matrix().matmul(&r)?, MANIFOLD_TOL),
        None => Ok(u.clone()),
    }
}
