//! Closed-form least-squares fits on snapshot data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::{NormalBasis, Structure};
use crate::error::{KcfError, Result};
use crate::linalg::{row_condition, row_major, GramFactor};

pub use crate::linalg::pinv_full_row_rank;

pub(crate) const PSI_LABEL: &str = "Psi(X,U)";
pub(crate) const H_PLUS_LABEL: &str = "H(X+)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Column-aligned snapshot triples `(x_i, u_i, x_i⁺)` with split labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    pub x: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub split: Vec<Split>,
}

impl SnapshotDataset {
    /// All columns labelled as training data.
    pub fn new(x: DMatrix<f64>, x_plus: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self> {
        let n = x.ncols();
        Self::with_split(x, x_plus, u, vec![Split::Train; n])
    }

    pub fn with_split(
        x: DMatrix<f64>,
        x_plus: DMatrix<f64>,
        u: DMatrix<f64>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = x.ncols();
        if n == 0 {
            return Err(KcfError::invalid("snapshot dataset", "no snapshots"));
        }
        if x_plus.ncols() != n {
            return Err(KcfError::dim("snapshot count of X+", n, x_plus.ncols()));
        }
        if u.ncols() != n {
            return Err(KcfError::dim("snapshot count of U", n, u.ncols()));
        }
        if split.len() != n {
            return Err(KcfError::dim("split labels", n, split.len()));
        }
        if x_plus.nrows() != x.nrows() {
            return Err(KcfError::dim(
                "state dimension of X+",
                x.nrows(),
                x_plus.nrows(),
            ));
        }
        Ok(Self {
            x,
            x_plus,
            u,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn indices_of(&self, which: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == which)
            .collect()
    }

    /// Columns `idx`, keeping their labels.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::with_split(
            self.x.select_columns(idx),
            self.x_plus.select_columns(idx),
            self.u.select_columns(idx),
            idx.iter().map(|&i| self.split[i]).collect(),
        )
    }

    pub fn subset(&self, which: Split) -> Result<Self> {
        self.select(&self.indices_of(which))
    }

    fn check_basis(&self, basis: &NormalBasis) -> Result<()> {
        if basis.n() != self.n() {
            return Err(KcfError::dim("basis state dimension", self.n(), basis.n()));
        }
        if basis.m() != self.m() {
            return Err(KcfError::dim("basis input dimension", self.m(), basis.m()));
        }
        Ok(())
    }

    /// `(J, L) = (H(X⁺), Ψ(X, U))`.
    pub fn lift(&self, basis: &NormalBasis) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_basis(basis)?;
        Ok((
            basis.eval_h(&self.x_plus)?,
            basis.eval_psi(&self.x, &self.u)?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `‖H(X⁺) − [A₁₁, A₁₂] Ψ(X, U)‖_F`.
    pub residual_fro: f64,
    pub cond_psi: f64,
    pub cond_h_plus: f64,
    pub snapshots: usize,
}

/// Top block `[A₁₁, A₁₂]` of the EDMD matrix, defining `𝒜(u) = A₁₁ + A₁₂ G(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub structure: Structure,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "n_H")]
    pub n_h: usize,
    #[serde(rename = "n_Psi")]
    pub n_psi: usize,
    #[serde(with = "row_major")]
    pub a11: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub a12: DMatrix<f64>,
    /// Rows of `H` that hold the raw state coordinates, when known.
    pub state_rows: Option<Vec<usize>>,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    /// `[A₁₁, A₁₂]`.
    pub fn forward_matrix(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_h, self.n_psi);
        p.columns_mut(0, self.n_h).copy_from(&self.a11);
        p.columns_mut(self.n_h, self.n_psi - self.n_h)
            .copy_from(&self.a12);
        p
    }

    pub fn check_basis(&self, basis: &NormalBasis) -> Result<()> {
        if (basis.n_h(), basis.n_psi(), basis.m()) != (self.n_h, self.n_psi, self.m) {
            return Err(KcfError::invalid(
                "model/basis pair",
                format!(
                    "model has (n_H, n_Psi, m) = ({}, {}, {}), basis has ({}, {}, {})",
                    self.n_h,
                    self.n_psi,
                    self.m,
                    basis.n_h(),
                    basis.n_psi(),
                    basis.m()
                ),
            ));
        }
        if basis.structure() != self.structure {
            return Err(KcfError::invalid(
                "model/basis pair",
                "structure tags differ",
            ));
        }
        Ok(())
    }
}

/// Full EDMD matrix `A = Ψ(X⁺, U) Ψ(X, U)†`.
pub fn edmd_full(basis: &NormalBasis, data: &SnapshotDataset) -> Result<DMatrix<f64>> {
    data.check_basis(basis)?;
    let l = basis.eval_psi(&data.x, &data.u)?;
    let l_plus = basis.eval_psi(&data.x_plus, &data.u)?;
    let gram = GramFactor::new(&l, PSI_LABEL)?;
    // A = L⁺ Lᵀ (LLᵀ)⁻¹ = ((LLᵀ)⁻¹ L L⁺ᵀ)ᵀ
    Ok(gram.solve(&(&l * l_plus.transpose())).transpose())
}

/// `[A₁₁, A₁₂] = H(X⁺) Ψ(X, U)†`.
pub fn fit_top_block(basis: &NormalBasis, data: &SnapshotDataset) -> Result<FittedModel> {
    let (j, l) = data.lift(basis)?;
    let gram = GramFactor::new(&l, PSI_LABEL)?;
    let a_f = gram.solve(&(&l * j.transpose())).transpose();
    let nh = basis.n_h();
    let residual_fro = (&j - &a_f * &l).norm();
    Ok(FittedModel {
        structure: basis.structure(),
        n: basis.n(),
        m: basis.m(),
        n_h: nh,
        n_psi: basis.n_psi(),
        a11: a_f.columns(0, nh).into_owned(),
        a12: a_f.columns(nh, basis.n_psi() - nh).into_owned(),
        state_rows: basis.state().state_rows(),
        diagnostics: FitDiagnostics {
            residual_fro,
            cond_psi: gram.cond().sqrt(),
            cond_h_plus: row_condition(&j),
            snapshots: data.len(),
        },
    })
}

/// Forward and backward regressions on raw lifted matrices:
/// `A_f = J L†` and `A_b = L J†`.
pub fn forward_backward_matrices(
    j: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if j.ncols() != l.ncols() {
        return Err(KcfError::dim("snapshot count of L", j.ncols(), l.ncols()));
    }
    let l_gram = GramFactor::new(l, PSI_LABEL)?;
    let j_gram = GramFactor::new(j, H_PLUS_LABEL)?;
    let a_f = l_gram.solve(&(l * j.transpose())).transpose();
    let a_b = j_gram.solve(&(j * l.transpose())).transpose();
    Ok((a_f, a_b))
}

/// `(A_f, A_b)` for a basis on a dataset.
pub fn forward_backward(
    basis: &NormalBasis,
    data: &SnapshotDataset,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (j, l) = data.lift(basis)?;
    forward_backward_matrices(&j, &l)
}
