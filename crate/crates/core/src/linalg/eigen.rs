use alloc::vec::Vec;

use super::qr::qr_thin_recovering;
use super::{Basis, DenseMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Symmetry tolerance accepted by [`top_k_eig`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative eigenpair residual at which subspace iteration stops early.
pub const TARGET_RESIDUAL: f64 = 1e-10;
/// Relative eigenpair residual still accepted once the iteration cap is hit.
pub const ACCEPT_RESIDUAL: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Full eigendecomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Eigenvalues are returned in descending order with matching
/// eigenvector columns.
pub fn symmetric_eigen(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let mut m = a.symmetrized();
    let mut v = DenseMatrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if libm::sqrt(off) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[(y, y)].total_cmp(&m[(x, x)]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = v.select_columns(&order);
    canonicalize_signs(&mut vectors);
    (vectors, values)
}

/// Flips each column so that its largest-magnitude entry is positive.
fn canonicalize_signs(v: &mut DenseMatrix) {
    for j in 0..v.cols() {
        let mut best = 0usize;
        for i in 0..v.rows() {
            if v[(i, j)].abs() > v[(best, j)].abs() {
                best = i;
            }
        }
        if v[(best, j)] < 0.0 {
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
}

fn eigen_residual(s: &DenseMatrix, v: &DenseMatrix, values: &[f64], k: usize) -> Result<f64> {
    let sv = s.matmul(v)?;
    let mut worst: f64 = 0.0;
    for j in 0..k {
        let mut acc = 0.0;
        for i in 0..v.rows() {
            let r = sv[(i, j)] - values[j] * v[(i, j)];
            acc += r * r;
        }
        worst = worst.max(libm::sqrt(acc));
    }
    Ok(worst)
}

/// Leading `k` eigenpairs of a symmetric positive semidefinite matrix.
///
/// Blocked orthogonal iteration on an oversampled block with a Rayleigh–Ritz
/// step after every multiplication. Stops once every returned pair satisfies
/// `‖Sv − λv‖ ≤ 1e-10·max(1, λ₁)`; the iteration budget is `10·d`.
pub fn top_k_eig(s: &DenseMatrix, k: usize) -> Result<(Basis, Vec<f64>)> {
    let d = s.rows();
    if s.cols() != d {
        return Err(Error::DimensionMismatch {
            op: "top_k_eig",
            expected: (d, d),
            found: s.shape(),
        });
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument("eigenpair count must be in 1..=d"));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("top_k_eig input"));
    }
    if s.asymmetry() > SYMMETRY_TOL * s.max_abs().max(1.0) {
        return Err(Error::InvalidArgument("matrix is not symmetric"));
    }
    let s = s.symmetrized();

    let block = d.min((2 * k).max(k + 8));
    let mut stream = rng::keyed(0, rng::Domain::Eigen, d as u64, block as u64);
    let start = rng::gaussian_matrix(&mut stream, d, block);
    let mut q = qr_thin_recovering(&start, 0, d as u64)?.0.into_matrix();

    let max_iter = 10 * d;
    let mut residual = f64::INFINITY;
    let mut ritz_values = Vec::new();
    for iter in 0..=max_iter {
        // Rayleigh–Ritz on the current block.
        let projected = q.t_matmul(&s.matmul(&q)?)?;
        let (w, values) = symmetric_eigen(&projected);
        let ritz = q.matmul(&w)?;
        let scale = values.first().copied().unwrap_or(0.0).abs().max(1.0);
        residual = eigen_residual(&s, &ritz, &values, k)? / scale;
        ritz_values = values;
        q = ritz;
        if residual <= TARGET_RESIDUAL || iter == max_iter {
            break;
        }
        let next = s.matmul(&q)?;
        let norm = next.max_abs();
        let next = if norm > 0.0 { next.scale(1.0 / norm) } else { next };
        q = qr_thin_recovering(&next, iter as u64, d as u64)?.0.into_matrix();
    }
    if residual > ACCEPT_RESIDUAL {
        return Err(Error::NoConvergence {
            iterations: max_iter,
            residual,
        });
    }
    let columns: Vec<usize> = (0..k).collect();
    let mut v = q.select_columns(&columns);
    canonicalize_signs(&mut v);
    ritz_values.truncate(k);
    Ok((Basis::from_trusted(v), ritz_values))
}

/// Orthogonal polar factor `M (MᵀM)^{-1/2}` of a square matrix; the
/// orthogonal matrix closest to `M` in Frobenius norm. `None` when `M` is
/// numerically singular.
pub fn polar_factor(m: &DenseMatrix) -> Option<DenseMatrix> {
    let n = m.rows();
    if n != m.cols() {
        return None;
    }
    let gram = m.t_matmul(m).ok()?;
    let (w, values) = symmetric_eigen(&gram);
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) || values.iter().any(|&l| !(l > 1e-20 * top)) {
        return None;
    }
    let inv_sqrt = DenseMatrix::diag(&values.iter().map(|&l| 1.0 / libm::sqrt(l)).collect::<Vec<_>>());
    let root = w.matmul(&inv_sqrt).ok()?.matmul(&w.transpose()).ok()?;
    let mut x = m.matmul(&root).ok()?;
    // Two Newton–Schulz sweeps X ← X(3I − XᵀX)/2 clean up rounding.
    for _ in 0..2 {
        let xtx = x.t_matmul(&x).ok()?;
        let corr = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (if i == j { 3.0 } else { 0.0 } - xtx[(i, j)]));
        x = x.matmul(&corr).ok()?;
    }
    Some(x)
}
