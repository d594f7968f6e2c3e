//! Dense helpers shared by the regression, certification and learning code.
//!
//! Every pseudoinverse in this crate is of a full-row-rank matrix, so it is
//! realized as `Mᵀ(MMᵀ)⁻¹` through a Cholesky factor of the Gram matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{KcfError, Result};

/// Largest accepted condition number of a Gram matrix `MMᵀ`.
pub const GRAM_COND_LIMIT: f64 = 1e10;

/// Cholesky factor of a Gram matrix `MMᵀ` together with its 2-norm condition number.
#[derive(Clone, Debug)]
pub struct GramFactor {
    chol: Cholesky<f64, Dyn>,
    cond: f64,
}

impl GramFactor {
    /// Factors `MMᵀ`, rejecting it when its condition number exceeds [`GRAM_COND_LIMIT`].
    pub fn new(m: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        Self::from_gram(m * m.transpose(), what)
    }

    pub fn from_gram(gram: DMatrix<f64>, what: &'static str) -> Result<Self> {
        let r = gram.nrows();
        if r == 0 {
            return Err(KcfError::invalid(what, "matrix has no rows"));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(KcfError::RankDeficient {
                what,
                cond: f64::INFINITY,
                limit: GRAM_COND_LIMIT,
            });
        }
        let cond = spd_condition(&gram);
        if cond.is_nan() || cond > GRAM_COND_LIMIT {
            return Err(KcfError::RankDeficient {
                what,
                cond,
                limit: GRAM_COND_LIMIT,
            });
        }
        let chol = Cholesky::new(gram).ok_or(KcfError::RankDeficient {
            what,
            cond,
            limit: GRAM_COND_LIMIT,
        })?;
        Ok(Self { chol, cond })
    }

    pub fn cond(&self) -> f64 {
        self.cond
    }

    /// `(MMᵀ)⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// 2-norm condition number of a symmetric positive semidefinite matrix.
pub fn spd_condition(s: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// 2-norm condition number of a full-row-rank matrix, `sqrt(cond(MMᵀ))`.
pub fn row_condition(m: &DMatrix<f64>) -> f64 {
    spd_condition(&(m * m.transpose())).sqrt()
}

/// Moore-Penrose pseudoinverse `Mᵀ(MMᵀ)⁻¹` of a full-row-rank matrix.
pub fn pinv_full_row_rank(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = GramFactor::new(m, "matrix")?;
    Ok(gram.solve(m).transpose())
}

/// Rows forming an orthonormal basis of `row(J)`, from a thin QR of `Jᵀ`.
///
/// Returns `(J̄, T)` with `J = T J̄`; `T` is the transposed triangular QR factor.
pub fn orthonormal_rows(j: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = j.transpose().qr();
    let q = qr.q();
    let r = qr.r();
    (q.transpose(), r.transpose())
}

/// Principal square root of a symmetric positive definite matrix.
pub fn spd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `(A + Aᵀ)/2`.
pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Serde adapter storing a matrix as `{rows, cols, data}` with row-major data.
pub mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    pub struct RowMajor {
        pub rows: usize,
        pub cols: usize,
        pub data: Vec<f64>,
    }

    impl From<&DMatrix<f64>> for RowMajor {
        fn from(m: &DMatrix<f64>) -> Self {
            let mut data = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                data.extend(m.row(i).iter());
            }
            RowMajor {
                rows: m.nrows(),
                cols: m.ncols(),
                data,
            }
        }
    }

    impl RowMajor {
        pub fn into_matrix(self) -> Result<DMatrix<f64>, String> {
            if self.rows * self.cols != self.data.len() {
                return Err(format!(
                    "row-major matrix {}x{} has {} entries",
                    self.rows,
                    self.cols,
                    self.data.len()
                ));
            }
            Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
        }
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        RowMajor::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        RowMajor::deserialize(d)?
            .into_matrix()
            .map_err(serde::de::Error::custom)
    }
}

/// Serde adapter storing a vector as a plain array.
pub mod flat_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
