use alloc::vec::Vec;

use rand::Rng;

use super::{Basis, DenseMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Diagonal entries of `R` at or below this magnitude mark a rank-deficient
/// input.
pub const RANK_TOL: f64 = 1e-12;

/// Thin Householder QR of a `d × k` matrix with `d ≥ k`.
///
/// Returns `Q` (`d × k`, orthonormal columns) and upper-triangular `R`
/// (`k × k`) with a nonnegative diagonal, so the factorization is unique for
/// full-rank input.
pub fn qr_thin(a: &DenseMatrix) -> Result<(Basis, DenseMatrix)> {
    let (d, k) = a.shape();
    if d < k {
        return Err(Error::DimensionMismatch {
            op: "qr_thin",
            expected: (k, k),
            found: (d, k),
        });
    }
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        let norm_x = libm::sqrt((j..d).map(|i| work[(i, j)] * work[(i, j)]).sum::<f64>());
        if norm_x <= RANK_TOL {
            return Err(Error::RankDeficient {
                column: j,
                magnitude: norm_x,
            });
        }
        let x0 = work[(j, j)];
        let alpha = if x0 >= 0.0 { -norm_x } else { norm_x };
        let mut v: Vec<f64> = (j..d).map(|i| work[(i, j)]).collect();
        v[0] -= alpha;
        let norm_v = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        for x in &mut v {
            *x /= norm_v;
        }
        // work[j.., j..] -= 2 v (vᵀ work[j.., j..])
        for c in j..k {
            let proj: f64 = v.iter().enumerate().map(|(r, vr)| vr * work[(j + r, c)]).sum();
            let s = 2.0 * proj;
            for (r, vr) in v.iter().enumerate() {
                work[(j + r, c)] -= s * vr;
            }
        }
        reflectors.push(v);
    }

    // Q = H_0 H_1 … H_{k-1} applied to the first k columns of I.
    let mut q = DenseMatrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 });
    for j in (0..k).rev() {
        let v = &reflectors[j];
        for c in 0..k {
            let proj: f64 = v.iter().enumerate().map(|(r, vr)| vr * q[(j + r, c)]).sum();
            let s = 2.0 * proj;
            for (r, vr) in v.iter().enumerate() {
                q[(j + r, c)] -= s * vr;
            }
        }
    }

    let mut r = DenseMatrix::from_fn(k, k, |i, j| if j >= i { work[(i, j)] } else { 0.0 });
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for c in j..k {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
        if r[(j, j)].abs() <= RANK_TOL {
            return Err(Error::RankDeficient {
                column: j,
                magnitude: r[(j, j)].abs(),
            });
        }
    }
    Ok((Basis::from_trusted(q), r))
}

/// Orthonormalizes `a`, replacing any column that makes the factorization
/// rank deficient with a fresh Gaussian column drawn from the keyed stream
/// `(seed, Recovery, key, attempt)`.
pub fn qr_thin_recovering(a: &DenseMatrix, seed: u64, key: u64) -> Result<(Basis, DenseMatrix)> {
    let mut a = a.clone();
    let max_attempts = 4 * a.cols().max(1);
    for attempt in 0..max_attempts {
        match qr_thin(&a) {
            Err(Error::RankDeficient { column, .. }) => {
                let mut stream = rng::keyed(seed, rng::Domain::Recovery, key, attempt as u64);
                let fresh = rng::gaussian_vec(&mut stream, a.rows());
                a.set_column(column, &fresh);
            }
            other => return other,
        }
    }
    qr_thin(&a)
}

/// Orthonormal `d × k` basis drawn from the Gaussian ensemble.
pub fn random_basis<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize) -> Result<Basis> {
    if k > d {
        return Err(Error::InvalidArgument("rank exceeds dimension"));
    }
    let g = rng::gaussian_matrix(rng, d, k);
    let key = g.as_slice().first().map_or(0, |v| v.to_bits());
    Ok(qr_thin_recovering(&g, key, 0)?.0)
}
