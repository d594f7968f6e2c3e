//! Training loss `tr(M_CC) + α·cond(Ψ(X,U)) [+ α_H·cond(H(X⁺))]` and its
//! exact reverse-mode gradient.
//!
//! With `J = H(X⁺)`, `L = Ψ(X, U)`, `C = JJᵀ`, `K = LLᵀ` and `B = JLᵀ`,
//! `tr(M_CC) = n_H − tr(C⁻¹ B K⁻¹ Bᵀ)`. The condition number is replaced by
//! the smooth surrogate `√(tr K · tr K⁻¹) / n_Ψ`, which equals one for
//! orthonormal rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::{stack_psi, InputFactor};
use crate::error::Result;
use crate::linalg::GramFactor;
use crate::regression::{SnapshotDataset, H_PLUS_LABEL, PSI_LABEL};

use super::ParametricBasis;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the `Ψ(X, U)` condition surrogate.
    pub alpha: f64,
    /// Weight of the `H(X⁺)` condition surrogate.
    pub alpha_h: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1e-5,
            alpha_h: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub trace: f64,
    pub cond_surrogate: f64,
    pub cond_h_surrogate: f64,
    /// `cond(LLᵀ)` of the batch, as checked by the rank guard.
    pub gram_cond: f64,
    /// Gradient with respect to `[φ, θ]`, when requested.
    pub gradient: Option<Vec<f64>>,
}

struct Forward {
    j: DMatrix<f64>,
    l: DMatrix<f64>,
    hx: DMatrix<f64>,
    gs: Vec<DMatrix<f64>>,
}

/// Surrogate value and its gradient with respect to `M`.
fn cond_surrogate(
    m: &DMatrix<f64>,
    gram: &GramFactor,
    want_grad: bool,
) -> (f64, Option<DMatrix<f64>>) {
    let k = m * m.transpose();
    let k_inv = gram.inverse();
    let a = k.trace();
    let b = k_inv.trace();
    let c = (a * b).sqrt() / m.nrows() as f64;
    let grad = want_grad.then(|| {
        // d tr K = 2 tr(Mᵀ dM), d tr K⁻¹ = −2 tr(Mᵀ K⁻² dM)
        let da = m * 2.0;
        let db = &k_inv * (&k_inv * m) * -2.0;
        (da / a + db / b) * (0.5 * c)
    });
    (c, grad)
}

/// Loss value only.
pub fn loss(
    basis: &ParametricBasis,
    batch: &SnapshotDataset,
    weights: LossWeights,
) -> Result<LossValue> {
    evaluate(basis, batch, weights, false)
}

/// Loss value and gradient.
pub fn loss_and_gradient(
    basis: &ParametricBasis,
    batch: &SnapshotDataset,
    weights: LossWeights,
) -> Result<LossValue> {
    evaluate(basis, batch, weights, true)
}

fn evaluate(
    basis: &ParametricBasis,
    batch: &SnapshotDataset,
    weights: LossWeights,
    want_grad: bool,
) -> Result<LossValue> {
    let b = batch.len();
    // H^φ on X and X⁺ in one pass.
    let mut both = DMatrix::zeros(basis.n, 2 * b);
    both.columns_mut(0, b).copy_from(&batch.x);
    both.columns_mut(b, b).copy_from(&batch.x_plus);
    let (h_out, h_cache) = basis.h_net.forward_cached(&both);
    let hx = basis.assemble_h(&batch.x, &h_out.columns(0, b).into_owned());
    let j = basis.assemble_h(&batch.x_plus, &h_out.columns(b, b).into_owned());

    let n_h = basis.n_h();
    let (gs, g_cache) = match &basis.g_net {
        Some(net) => {
            let (out, cache) = net.forward_cached(&batch.u);
            let gs = out
                .column_iter()
                .map(|c| DMatrix::from_row_slice(basis.g_rows, n_h, c.as_slice()))
                .collect();
            (gs, Some(cache))
        }
        None => {
            let factor = match basis.class {
                super::ModelClass::Bilinear => InputFactor::Bilinear { m: basis.m, n_h },
                _ => InputFactor::LiftedLinear { m: basis.m, n_h },
            };
            (factor.eval_batch(&batch.u)?, None)
        }
    };
    let l = stack_psi(&hx, &gs, basis.g_rows);
    let fwd = Forward { j, l, hx, gs };

    let l_gram = GramFactor::new(&fwd.l, PSI_LABEL)?;
    let j_gram = GramFactor::new(&fwd.j, H_PLUS_LABEL)?;

    let bmat = &fwd.j * fwd.l.transpose();
    let k_inv_bt = l_gram.solve(&bmat.transpose()); // K⁻¹Bᵀ
    let w = j_gram.solve(&k_inv_bt.transpose()); // C⁻¹BK⁻¹
    let f = (&w * bmat.transpose()).trace();
    let trace = n_h as f64 - f;

    let (c_l, dc_l) = cond_surrogate(&fwd.l, &l_gram, want_grad);
    let (c_j, dc_j) = if weights.alpha_h != 0.0 {
        cond_surrogate(&fwd.j, &j_gram, want_grad)
    } else {
        (cond_surrogate(&fwd.j, &j_gram, false).0, None)
    };
    let value = trace + weights.alpha * c_l + weights.alpha_h * c_j;

    let gradient = if want_grad {
        // ∂f/∂J = 2WL − 2EJ,  ∂f/∂L = 2WᵀJ − 2FL,
        // E = C⁻¹BK⁻¹BᵀC⁻¹ = C⁻¹(BWᵀ),  F = K⁻¹BᵀC⁻¹BK⁻¹ = K⁻¹(BᵀW).
        let e = j_gram.solve(&(&bmat * w.transpose()));
        let fmat = l_gram.solve(&(bmat.transpose() * &w));
        let mut d_j = (&e * &fwd.j - &w * &fwd.l) * 2.0;
        let mut d_l = (&fmat * &fwd.l - w.transpose() * &fwd.j) * 2.0;
        if let Some(g) = dc_l {
            d_l += g * weights.alpha;
        }
        if let Some(g) = dc_j {
            d_j += g * weights.alpha_h;
        }
        Some(backpropagate(
            basis,
            &fwd,
            &d_j,
            &d_l,
            &h_cache,
            g_cache.as_ref(),
        ))
    } else {
        None
    };

    Ok(LossValue {
        loss: value,
        trace,
        cond_surrogate: c_l,
        cond_h_surrogate: c_j,
        gram_cond: l_gram.cond(),
        gradient,
    })
}

fn backpropagate(
    basis: &ParametricBasis,
    fwd: &Forward,
    d_j: &DMatrix<f64>,
    d_l: &DMatrix<f64>,
    h_cache: &super::mlp::MlpCache,
    g_cache: Option<&super::mlp::MlpCache>,
) -> Vec<f64> {
    let n_h = basis.n_h();
    let b = fwd.hx.ncols();
    let rows = basis.g_rows;

    // L = [H; G_i H_i] column-wise.
    let mut d_hx = d_l.rows(0, n_h).into_owned();
    let d_low = d_l.rows(n_h, rows);
    let mut d_g_out = basis
        .g_net
        .as_ref()
        .map(|net| DMatrix::zeros(net.output_dim(), b));
    for i in 0..b {
        let dl = d_low.column(i);
        let gi = &fwd.gs[i];
        let mut col = d_hx.column_mut(i);
        col += gi.transpose() * dl;
        if let Some(dg) = d_g_out.as_mut() {
            let hi = fwd.hx.column(i);
            let outer = dl * hi.transpose();
            for r in 0..rows {
                for c in 0..n_h {
                    dg[(r * n_h + c, i)] = outer[(r, c)];
                }
            }
        }
    }

    // Only the network rows of H carry parameters.
    let np = basis.pinned.len();
    let k = basis.h_net.output_dim();
    let mut d_h_out = DMatrix::zeros(k, 2 * b);
    d_h_out.columns_mut(0, b).copy_from(&d_hx.rows(np, k));
    d_h_out.columns_mut(b, b).copy_from(&d_j.rows(np, k));
    let mut grad = basis.h_net.backward(h_cache, &d_h_out);
    if let (Some(net), Some(cache), Some(dg)) = (&basis.g_net, g_cache, d_g_out) {
        grad.extend(net.backward(cache, &dg));
    }
    grad
}
