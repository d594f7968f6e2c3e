//! Dictionary learning: neural `H^φ` and `G^θ` trained to minimize the
//! consistency trace with a condition-number penalty.

pub mod loss;
pub mod mlp;
pub mod optim;
pub mod train;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{InputFactor, NormalBasis, StateDictionary};
use crate::error::{KcfError, Result};
use crate::systems::Domain;
use mlp::{Mlp, MlpSpec};

pub use loss::{loss, loss_and_gradient, LossValue, LossWeights};
pub use optim::{lr_schedule, Adam};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

/// Which structure the input factor is given.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    /// Learned `G^θ`.
    Separable,
    /// `G(u) = [u₁I; …; u_mI]`.
    Bilinear,
    /// `H = [H^φ; 1]`, `G(u) = [0, u]`.
    Linear,
}

impl ModelClass {
    pub fn label(self) -> &'static str {
        match self {
            ModelClass::Separable => "Input-State Separable",
            ModelClass::Bilinear => "Lifted Bilinear",
            ModelClass::Linear => "Lifted Linear",
        }
    }
}

impl std::str::FromStr for ModelClass {
    type Err = KcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(ModelClass::Separable),
            "bilinear" => Ok(ModelClass::Bilinear),
            "linear" => Ok(ModelClass::Linear),
            other => Err(KcfError::invalid(
                "model class",
                format!("unknown class '{other}'"),
            )),
        }
    }
}

/// Trainable normal basis: `H^φ(x) = [x_pinned; net_φ(x)]` (plus a trailing
/// constant for the linear class) and either a learned or structured `G`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricBasis {
    pub class: ModelClass,
    pub n: usize,
    pub m: usize,
    pub pinned: Vec<usize>,
    pub h_net: Mlp,
    /// Present for the separable class only; output is `rows × n_H` row-major.
    pub g_net: Option<Mlp>,
    /// Rows of `G(u)` for the separable class.
    pub g_rows: usize,
}

impl ParametricBasis {
    /// `h_outputs` is the width of `H^φ` including the pinned state coordinates;
    /// `n_psi` is only used by the separable class.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        class: ModelClass,
        state_box: &Domain,
        input_box: &Domain,
        h_outputs: usize,
        n_psi: usize,
        hidden: &[usize],
        layer_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let n = state_box.dim();
        let m = input_box.dim();
        if h_outputs < n {
            return Err(KcfError::invalid(
                "dictionary size",
                format!("H must have at least the {n} pinned state coordinates"),
            ));
        }
        let h_net = Mlp::new(
            MlpSpec {
                input_dim: n,
                hidden: hidden.to_vec(),
                output_dim: h_outputs - n,
                layer_norm,
            },
            rng,
        )
        .with_input_box(&state_box.lo, &state_box.hi);
        let n_h = h_outputs + usize::from(class == ModelClass::Linear);
        let (g_net, g_rows) = match class {
            ModelClass::Separable => {
                if n_psi <= n_h {
                    return Err(KcfError::invalid(
                        "dictionary size",
                        "n_Psi must exceed n_H",
                    ));
                }
                let rows = n_psi - n_h;
                let net = Mlp::new(
                    MlpSpec {
                        input_dim: m,
                        hidden: hidden.to_vec(),
                        output_dim: rows * n_h,
                        layer_norm,
                    },
                    rng,
                )
                .with_input_box(&input_box.lo, &input_box.hi);
                (Some(net), rows)
            }
            ModelClass::Bilinear => (None, m * n_h),
            ModelClass::Linear => (None, m),
        };
        Ok(ParametricBasis {
            class,
            n,
            m,
            pinned: (0..n).collect(),
            h_net,
            g_net,
            g_rows,
        })
    }

    pub fn n_h(&self) -> usize {
        self.pinned.len() + self.h_net.output_dim() + usize::from(self.class == ModelClass::Linear)
    }

    pub fn n_psi(&self) -> usize {
        self.n_h() + self.g_rows
    }

    pub fn num_params(&self) -> usize {
        self.h_net.num_params() + self.g_net.as_ref().map_or(0, Mlp::num_params)
    }

    /// `[φ, θ]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.h_net.params();
        if let Some(g) = &self.g_net {
            p.extend(g.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let k = self.h_net.num_params();
        self.h_net.set_params(&p[..k]);
        if let Some(g) = &mut self.g_net {
            g.set_params(&p[k..]);
        }
    }

    /// Immutable snapshot as a [`NormalBasis`].
    pub fn to_basis(&self) -> Result<NormalBasis> {
        let neural = StateDictionary::Neural {
            n: self.n,
            pinned: self.pinned.clone(),
            net: self.h_net.clone(),
        };
        match self.class {
            ModelClass::Separable => NormalBasis::new(
                neural,
                InputFactor::Neural {
                    m: self.m,
                    n_h: self.n_h(),
                    rows: self.g_rows,
                    net: self.g_net.clone().expect("separable class has G^θ"),
                },
            ),
            ModelClass::Bilinear => crate::dictionary::make_bilinear(neural, self.m),
            ModelClass::Linear => crate::dictionary::make_lifted_linear(neural, self.m),
        }
    }

    /// Assembles `H` from the pinned rows, the network output, and the constant.
    pub(crate) fn assemble_h(&self, x: &DMatrix<f64>, net_out: &DMatrix<f64>) -> DMatrix<f64> {
        let np = self.pinned.len();
        let mut h = DMatrix::zeros(self.n_h(), x.ncols());
        for (r, &c) in self.pinned.iter().enumerate() {
            h.row_mut(r).copy_from(&x.row(c));
        }
        h.rows_mut(np, net_out.nrows()).copy_from(net_out);
        if self.class == ModelClass::Linear {
            h.row_mut(self.n_h() - 1).fill(1.0);
        }
        h
    }
}
