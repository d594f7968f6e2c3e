//! Control forward-backward consistency: the matrix `M_CC = I − A_f A_b`,
//! its spectrum, the consistency index and the worst-case RRMSE certificate.
//!
//! The spectrum is always computed from the symmetric matrix
//! `I − J̄ L†L J̄ᵀ`, where the rows of `J̄` are an orthonormal basis of
//! `row(H(X⁺))`. It is similar to `M_CC`, and its top eigenvector is the
//! worst-case direction in the orthonormalized coordinates.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dictionary::NormalBasis;
use crate::error::{KcfError, Result};
use crate::linalg::{orthonormal_rows, row_major, spd_sqrt, symmetric_part, GramFactor};
use crate::predictor::function_predict;
use crate::regression::{FittedModel, SnapshotDataset, H_PLUS_LABEL, PSI_LABEL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDiagnostics {
    /// Largest eigenvalue before clipping into `[0, 1]`.
    pub cci_raw: f64,
    /// Largest `|Im λ|` among the eigenvalues of the non-symmetric `M_CC`.
    pub max_imag: f64,
    /// Condition number of `JJᵀ`, `J = H(X⁺)`.
    pub cond_jjt: f64,
    /// Condition number of `LLᵀ`, `L = Ψ(X, U)`.
    pub cond_llt: f64,
    pub snapshots: usize,
}

/// Certified accuracy of a normal basis on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    #[serde(rename = "n_H")]
    pub n_h: usize,
    #[serde(rename = "n_Psi")]
    pub n_psi: usize,
    #[serde(with = "row_major")]
    pub m_cc: DMatrix<f64>,
    /// Real spectrum, ascending.
    pub spectrum: Vec<f64>,
    pub cci: f64,
    pub trace: f64,
    /// `√cci`: the largest relative RMS one-step error of any `h ∈ span(H)`.
    pub rrmse_max: f64,
    /// Unit eigenvector for `cci` in orthonormalized coordinates.
    pub worst_direction: Vec<f64>,
    /// The same function in `H` coordinates: `vᵀH` attains `rrmse_max`.
    pub worst_function: Vec<f64>,
    pub diagnostics: ReportDiagnostics,
}

/// `(tr M_CC, tr/n_H, tr)`: bounds sandwiching the consistency index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceBounds {
    pub trace: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `M_CC = I − A_f A_b`.
pub fn consistency_matrix(a_f: &DMatrix<f64>, a_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a_f.ncols() != a_b.nrows() {
        return Err(KcfError::dim("A_b rows", a_f.ncols(), a_b.nrows()));
    }
    if a_b.ncols() != a_f.nrows() {
        return Err(KcfError::dim("A_b columns", a_f.nrows(), a_b.ncols()));
    }
    let n = a_f.nrows();
    Ok(DMatrix::identity(n, n) - a_f * a_b)
}

/// `R⁻¹ M_CC R` with `R = (JJᵀ)^{1/2}`; symmetric when `M_CC` comes from `J`.
pub fn symmetrized(m_cc: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m_cc.nrows() != j.nrows() || !m_cc.is_square() {
        return Err(KcfError::dim("M_CC size", j.nrows(), m_cc.nrows()));
    }
    let gram = GramFactor::new(j, H_PLUS_LABEL)?;
    let r = spd_sqrt(&(j * j.transpose()));
    let r_inv = spd_sqrt(&gram.inverse());
    Ok(r_inv * m_cc * r)
}

pub fn trace_proxy(m_cc: &DMatrix<f64>) -> TraceBounds {
    let trace = m_cc.trace();
    let n = m_cc.nrows().max(1) as f64;
    TraceBounds {
        trace,
        lower: trace / n,
        upper: trace,
    }
}

/// Eigenvalues of a general square matrix via a real Schur form.
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| KcfError::Eigen("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect())
}

/// Certifies `basis` on `data`.
pub fn certify(basis: &NormalBasis, data: &SnapshotDataset) -> Result<ConsistencyReport> {
    let (j, l) = data.lift(basis)?;
    certify_matrices(&j, &l)
}

/// Certification from raw `J = H(X⁺)` and `L = Ψ(X, U)`.
pub fn certify_matrices(j: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<ConsistencyReport> {
    if j.ncols() != l.ncols() {
        return Err(KcfError::dim("snapshot count of L", j.ncols(), l.ncols()));
    }
    let nh = j.nrows();
    let l_gram = GramFactor::new(l, PSI_LABEL)?;
    let j_gram = GramFactor::new(j, H_PLUS_LABEL)?;

    let a_f = l_gram.solve(&(l * j.transpose())).transpose();
    let a_b = j_gram.solve(&(j * l.transpose())).transpose();
    let m_cc = consistency_matrix(&a_f, &a_b)?;

    let (j_bar, _) = orthonormal_rows(j);
    let b = &j_bar * l.transpose();
    let target = symmetric_part(&(DMatrix::identity(nh, nh) - &b * l_gram.solve(&b.transpose())));
    let eig = SymmetricEigen::try_new(target, f64::EPSILON, 100_000)
        .ok_or_else(|| KcfError::Eigen("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..nh).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let top = *order.last().expect("n_H > 0");
    let cci_raw = eig.eigenvalues[top];
    let cci = cci_raw.clamp(0.0, 1.0);

    let mut w: DVector<f64> = eig.eigenvectors.column(top).into_owned();
    w /= w.norm();
    let (imax, _) = w.iamax_full();
    if w[imax] < 0.0 {
        w = -w;
    }
    // vᵀJ = wᵀJ̄  ⇔  (JJᵀ) v = J J̄ᵀ w
    let v = j_gram.solve_vec(&(j * j_bar.transpose() * &w));

    let max_imag = general_eigenvalues(&m_cc)?
        .iter()
        .map(|(_, im)| im.abs())
        .fold(0.0, f64::max);

    Ok(ConsistencyReport {
        n_h: nh,
        n_psi: l.nrows(),
        trace: m_cc.trace(),
        m_cc,
        spectrum,
        cci,
        rrmse_max: cci.sqrt(),
        worst_direction: w.as_slice().to_vec(),
        worst_function: v.as_slice().to_vec(),
        diagnostics: ReportDiagnostics {
            cci_raw,
            max_imag,
            cond_jjt: j_gram.cond(),
            cond_llt: l_gram.cond(),
            snapshots: j.ncols(),
        },
    })
}

/// Relative RMS error of the one-step predictor of `h = vᵀH` on `data`.
pub fn rrmse_of_function(
    v: &[f64],
    model: &FittedModel,
    basis: &NormalBasis,
    data: &SnapshotDataset,
) -> Result<f64> {
    model.check_basis(basis)?;
    if v.len() != basis.n_h() {
        return Err(KcfError::dim("function coefficients", basis.n_h(), v.len()));
    }
    let truth = DVector::from_column_slice(v).transpose() * basis.eval_h(&data.x_plus)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..data.len() {
        let x: Vec<f64> = data.x.column(i).iter().copied().collect();
        let u: Vec<f64> = data.u.column(i).iter().copied().collect();
        let pred = function_predict(v, model, basis, &x, &u)?;
        num += (truth[i] - pred).powi(2);
        den += truth[i].powi(2);
    }
    if den <= 0.0 {
        return Err(KcfError::invalid(
            "function",
            "vanishes on every successor state (zero denominator)",
        ));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jl_example() -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        )
    }

    #[test]
    fn consistency_matrix_cases() {
        let a_f = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let a_b = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let m = consistency_matrix(&a_f, &a_b).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        let zero = consistency_matrix(&DMatrix::zeros(2, 1), &a_b).unwrap();
        assert_eq!(zero, DMatrix::identity(2, 2));
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_eq!(
            consistency_matrix(&eye, &eye).unwrap(),
            DMatrix::zeros(2, 2)
        );
        assert!(consistency_matrix(&a_f, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn symmetrized_with_orthonormal_j_is_unchanged() {
        let (j, _) = jl_example();
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let s = symmetrized(&m, &j).unwrap();
        assert!((s - m).norm() < 1e-14);
    }

    #[test]
    fn certify_two_by_three_example() {
        let (j, l) = jl_example();
        let r = certify_matrices(&j, &l).unwrap();
        assert!((r.spectrum[0]).abs() < 1e-14 && (r.spectrum[1] - 1.0).abs() < 1e-14);
        assert!((r.cci - 1.0).abs() < 1e-14);
        assert!((r.rrmse_max - 1.0).abs() < 1e-14);
        assert!((r.worst_direction[0]).abs() < 1e-14);
        assert!((r.worst_direction[1] - 1.0).abs() < 1e-14);
        assert!((r.worst_function[1] - 1.0).abs() < 1e-14);
        assert!((r.trace - 1.0).abs() < 1e-14);
    }

    #[test]
    fn trace_bounds() {
        let t = trace_proxy(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!((t.trace, t.lower, t.upper), (1.0, 0.5, 1.0));
        let t = trace_proxy(&DMatrix::zeros(2, 2));
        assert_eq!((t.trace, t.lower, t.upper), (0.0, 0.0, 0.0));
        let t = trace_proxy(&DMatrix::identity(3, 3));
        assert_eq!((t.trace, t.lower, t.upper), (3.0, 1.0, 3.0));
    }

    #[test]
    fn report_serializes_row_major() {
        let (j, l) = jl_example();
        let r = certify_matrices(&j, &l).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["m_cc"]["data"].as_array().unwrap().len(), 4);
        let back: ConsistencyReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }
}
