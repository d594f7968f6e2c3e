//! Feed-forward networks with layer normalization and ELU activations,
//! evaluated column-wise on sample batches, with an explicit backward pass.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KcfError, Result};
use crate::linalg::{flat_vector, row_major};

const LN_EPS: f64 = 1e-5;

/// Shape of a network: input width, hidden widths, output width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Per-sample layer normalization after every hidden affine map.
    pub layer_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    #[serde(with = "row_major")]
    pub weight: DMatrix<f64>,
    #[serde(with = "flat_vector")]
    pub bias: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    #[serde(with = "flat_vector")]
    pub gain: DVector<f64>,
    #[serde(with = "flat_vector")]
    pub bias: DVector<f64>,
}

/// A multilayer perceptron. Inputs are affinely rescaled by fixed
/// `(x - input_shift) * input_scale` before the first layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: Vec<Dense>,
    pub norms: Vec<LayerNorm>,
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

struct HiddenCache {
    /// Layer input.
    input: DMatrix<f64>,
    /// Normalized pre-activations (identity copy of the affine output without layer norm).
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    /// Argument of the activation.
    pre: DMatrix<f64>,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for the backward pass.
pub struct MlpCache {
    hidden: Vec<HiddenCache>,
    last_input: DMatrix<f64>,
}

impl Mlp {
    /// Weights and biases uniform in `±1/√fan_in`, unit gains.
    pub fn new<R: Rng>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut widths = vec![spec.input_dim];
        widths.extend(&spec.hidden);
        widths.push(spec.output_dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0].max(1) as f64).sqrt();
                Dense {
                    weight: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        let norms = if spec.layer_norm {
            spec.hidden
                .iter()
                .map(|&h| LayerNorm {
                    gain: DVector::from_element(h, 1.0),
                    bias: DVector::zeros(h),
                })
                .collect()
        } else {
            Vec::new()
        };
        Mlp {
            input_shift: vec![0.0; spec.input_dim],
            input_scale: vec![1.0; spec.input_dim],
            spec,
            layers,
            norms,
        }
    }

    /// Sets the fixed input rescaling so that the box `[lo, hi]` maps onto `[-1, 1]`.
    pub fn with_input_box(mut self, lo: &[f64], hi: &[f64]) -> Self {
        self.input_shift = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        self.input_scale = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| if b > a { 2.0 / (b - a) } else { 1.0 })
            .collect();
        self
    }

    /// Zeroes the output layer, so the network evaluates to zero everywhere.
    pub fn zero_output_layer(mut self) -> Self {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
        self
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        if self.layers.len() != s.hidden.len() + 1 {
            return Err(KcfError::invalid(
                "network",
                "layer count does not match spec",
            ));
        }
        if self.input_shift.len() != s.input_dim || self.input_scale.len() != s.input_dim {
            return Err(KcfError::invalid(
                "network",
                "input rescaling has wrong length",
            ));
        }
        let mut width = s.input_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            let out = if k < s.hidden.len() {
                s.hidden[k]
            } else {
                s.output_dim
            };
            if layer.weight.shape() != (out, width) || layer.bias.len() != out {
                return Err(KcfError::invalid(
                    "network",
                    format!("layer {k} has wrong shape"),
                ));
            }
            width = out;
        }
        if s.layer_norm {
            if self.norms.len() != s.hidden.len() {
                return Err(KcfError::invalid(
                    "network",
                    "missing layer norm parameters",
                ));
            }
            for (ln, &h) in self.norms.iter().zip(&s.hidden) {
                if ln.gain.len() != h || ln.bias.len() != h {
                    return Err(KcfError::invalid("network", "layer norm has wrong width"));
                }
            }
        } else if !self.norms.is_empty() {
            return Err(KcfError::invalid(
                "network",
                "layer norm parameters without layer norm",
            ));
        }
        Ok(())
    }

    fn rescale(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let (s, c) = (self.input_shift[i], self.input_scale[i]);
            row.apply(|v| *v = (*v - s) * c);
        }
        out
    }

    fn affine(layer: &Dense, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = &layer.weight * h;
        for mut col in a.column_iter_mut() {
            col += &layer.bias;
        }
        a
    }

    /// Evaluates the network on every column of `x` (input_dim × B).
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut h = self.rescale(x);
        let n_hidden = self.spec.hidden.len();
        let mut hidden = Vec::with_capacity(n_hidden);
        for k in 0..n_hidden {
            let a = Self::affine(&self.layers[k], &h);
            let (xhat, inv_std, pre) = if self.spec.layer_norm {
                let ln = &self.norms[k];
                let mut xhat = a;
                let mut inv_std = Vec::with_capacity(xhat.ncols());
                for mut col in xhat.column_iter_mut() {
                    let n = col.len() as f64;
                    let mean = col.sum() / n;
                    col.add_scalar_mut(-mean);
                    let var = col.norm_squared() / n;
                    let is = 1.0 / (var + LN_EPS).sqrt();
                    col *= is;
                    inv_std.push(is);
                }
                let mut pre = xhat.clone();
                for mut col in pre.column_iter_mut() {
                    col.component_mul_assign(&ln.gain);
                    col += &ln.bias;
                }
                (xhat, inv_std, pre)
            } else {
                (DMatrix::zeros(0, 0), Vec::new(), a)
            };
            let next = pre.map(elu);
            hidden.push(HiddenCache {
                input: h,
                xhat,
                inv_std,
                pre,
            });
            h = next;
        }
        let out = Self::affine(&self.layers[n_hidden], &h);
        (
            out,
            MlpCache {
                hidden,
                last_input: h,
            },
        )
    }

    pub fn num_params(&self) -> usize {
        let dense: usize = self
            .layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum();
        let norms: usize = self.norms.iter().map(|n| n.gain.len() + n.bias.len()).sum();
        dense + norms
    }

    /// Flat parameter vector: per layer the row-major weight then the bias,
    /// followed by every layer norm's gain and bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for i in 0..l.weight.nrows() {
                p.extend(l.weight.row(i).iter());
            }
            p.extend(l.bias.iter());
        }
        for n in &self.norms {
            p.extend(n.gain.iter());
            p.extend(n.bias.iter());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let mut it = p.iter().copied();
        let mut next = || it.next().expect("length checked");
        for l in &mut self.layers {
            let (r, c) = l.weight.shape();
            for i in 0..r {
                for j in 0..c {
                    l.weight[(i, j)] = next();
                }
            }
            l.bias.iter_mut().for_each(|b| *b = next());
        }
        for n in &mut self.norms {
            n.gain.iter_mut().for_each(|v| *v = next());
            n.bias.iter_mut().for_each(|v| *v = next());
        }
    }

    /// Gradient of a scalar with respect to the flat parameters, given the
    /// gradient `d_out` with respect to the network output on the cached batch.
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> Vec<f64> {
        let n_hidden = self.spec.hidden.len();
        let mut dense_grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n_hidden + 1);
        let mut norm_grads: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(n_hidden);

        let last = &self.layers[n_hidden];
        dense_grads.push((d_out * cache.last_input.transpose(), row_sums(d_out)));
        let mut dh = last.weight.transpose() * d_out;

        for k in (0..n_hidden).rev() {
            let c = &cache.hidden[k];
            let mut dpre = dh;
            dpre.zip_apply(&c.pre, |d, p| *d *= elu_grad(p));
            let da = if self.spec.layer_norm {
                let ln = &self.norms[k];
                norm_grads.push((row_sums(&dpre.component_mul(&c.xhat)), row_sums(&dpre)));
                let mut dxhat = dpre;
                for mut col in dxhat.column_iter_mut() {
                    col.component_mul_assign(&ln.gain);
                }
                let mut da = dxhat;
                for (j, mut col) in da.column_iter_mut().enumerate() {
                    let xh = c.xhat.column(j);
                    let n = col.len() as f64;
                    let mean_d = col.sum() / n;
                    let mean_dx = col.dot(&xh) / n;
                    let is = c.inv_std[j];
                    for i in 0..col.len() {
                        col[i] = is * (col[i] - mean_d - xh[i] * mean_dx);
                    }
                }
                da
            } else {
                dpre
            };
            dense_grads.push((&da * c.input.transpose(), row_sums(&da)));
            if k > 0 {
                dh = self.layers[k].weight.transpose() * &da;
            } else {
                break;
            }
        }
        dense_grads.reverse();
        norm_grads.reverse();

        let mut g = Vec::with_capacity(self.num_params());
        for (w, b) in &dense_grads {
            for i in 0..w.nrows() {
                g.extend(w.row(i).iter());
            }
            g.extend(b.iter());
        }
        for (gain, bias) in &norm_grads {
            g.extend(gain.iter());
            g.extend(bias.iter());
        }
        g
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}
