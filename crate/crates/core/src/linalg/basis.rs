use super::DenseMatrix;
use crate::error::{Error, Result};

/// Default tolerance on `‖MᵀM − I‖_F` for a matrix to be accepted as a basis.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// A `d × k` matrix with orthonormal columns, representing a point on the
/// Grassmann manifold (its column span).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Basis {
    m: DenseMatrix,
}

impl Basis {
    /// Accepts `m` if it is orthonormal within [`ORTHONORMAL_TOL`].
    pub fn new(m: DenseMatrix) -> Result<Self> {
        Self::with_tolerance(m, ORTHONORMAL_TOL)
    }

    pub fn with_tolerance(m: DenseMatrix, tol: f64) -> Result<Self> {
        if m.cols() > m.rows() {
            return Err(Error::InvalidArgument("basis rank exceeds dimension"));
        }
        let deviation = m.orthonormality_defect();
        if !(deviation <= tol) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { m })
    }

    pub(crate) fn from_trusted(m: DenseMatrix) -> Self {
        Self { m }
    }

    /// The first `k` standard basis vectors of `Rᵈ`.
    pub fn canonical(d: usize, k: usize) -> Self {
        assert!(k <= d);
        Self {
            m: DenseMatrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 }),
        }
    }

    #[inline]
    pub fn matrix(&self) -> &DenseMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.m.cols()
    }

    /// Coordinates `Uᵀx` of a vector in the basis.
    pub fn coordinates(&self, x: &[f64]) -> Result<alloc::vec::Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                op: "coordinates",
                expected: (self.dim(), 1),
                found: (x.len(), 1),
            });
        }
        let k = self.rank();
        let mut c = alloc::vec![0.0; k];
        for (i, xi) in x.iter().enumerate() {
            for (j, cj) in c.iter_mut().enumerate() {
                *cj += self.m[(i, j)] * xi;
            }
        }
        Ok(c)
    }

    /// `‖(I − UUᵀ)x‖²`, computed from the explicit residual vector so that it
    /// is exactly nonnegative and accurate for `x` close to the span.
    pub fn residual_energy(&self, x: &[f64]) -> Result<f64> {
        let c = self.coordinates(x)?;
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let proj: f64 = c.iter().enumerate().map(|(j, cj)| self.m[(i, j)] * cj).sum();
            let r = xi - proj;
            acc += r * r;
        }
        Ok(acc)
    }

    /// `(I − UUᵀ)G`
    pub fn reject(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        let coeffs = self.m.t_matmul(g)?;
        let mut out = g.clone();
        out.axpy(-1.0, &self.m.matmul(&coeffs)?)?;
        Ok(out)
    }
}

/// `√(k − ‖UᵀV‖_F²)`, the chordal distance between two subspaces.
///
/// Evaluated as the root mean of `‖(I − UUᵀ)V‖_F²` and `‖(I − VVᵀ)U‖_F²`,
/// which is algebraically identical for orthonormal inputs, exactly symmetric
/// and free of cancellation when the subspaces nearly coincide.
pub fn chordal_distance(u: &Basis, v: &Basis) -> Result<f64> {
    if u.matrix().shape() != v.matrix().shape() {
        return Err(Error::DimensionMismatch {
            op: "chordal_distance",
            expected: u.matrix().shape(),
            found: v.matrix().shape(),
        });
    }
    let a = u.reject(v.matrix())?.frobenius_norm_sq();
    let b = v.reject(u.matrix())?.frobenius_norm_sq();
    Ok(libm::sqrt(0.5 * (a + b)))
}
