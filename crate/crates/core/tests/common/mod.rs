#![allow(dead_code)]

use kcf::dictionary::{
    make_bilinear, make_lifted_linear, InputFactor, NormalBasis, StateDictionary,
};
use kcf::learning::mlp::{Mlp, MlpSpec};
use kcf::linalg::GramFactor;
use kcf::regression::SnapshotDataset;
use kcf::systems::{
    collect, synthetic_bilinear, synthetic_linear, ControlSystem, ExperimentProtocol,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Gaussian via Box-Muller, used for directions on the sphere.
pub fn gaussian(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| {
        let a: f64 = rng.random_range(f64::EPSILON..1.0);
        let b: f64 = rng.random_range(0.0..1.0);
        (-2.0 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos()
    })
}

pub fn unit_direction(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = gaussian(len, rng);
    let n = v.norm();
    v / n
}

/// Random full-row-rank `(J, L)` with the given shape ranges; retries on
/// numerically rank-deficient draws.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    loop {
        let nh = rng.random_range(2..=6);
        let np = rng.random_range(nh + 1..=12);
        let n = rng.random_range(np + 1..=60);
        let j = uniform(nh, n, rng);
        let l = uniform(np, n, rng);
        if GramFactor::new(&j, "J").is_ok() && GramFactor::new(&l, "L").is_ok() {
            return (j, l);
        }
    }
}

/// Block lower-triangular, well-conditioned `R` with the given block split.
pub fn random_lower_block(nh: usize, np: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut r = uniform(np, np, rng) * 0.3 + DMatrix::identity(np, np);
    r.view_mut((0, nh), (nh, np - nh)).fill(0.0);
    r
}

fn nonlinear_successor(x: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, x.ncols(), |i, j| {
        let (a, b) = (x[(0, j)], x[(1, j)]);
        let v = u[(0, j)];
        let w = if u.nrows() > 1 { u[(1, j)] } else { 0.0 };
        if i == 0 {
            0.9 * a + 0.2 * b * b + 0.3 * v.tanh() + 0.1 * a * w
        } else {
            0.7 * b - 0.3 * a * b + 0.4 * (a * v).sin() + 0.2 * w
        }
    })
}

/// Random normal basis of one of the three structures with nonlinear data
/// that it does not represent exactly.
pub fn random_problem(rng: &mut ChaCha8Rng, samples: usize) -> (NormalBasis, SnapshotDataset) {
    let m = rng.random_range(1..=2usize);
    let degree = rng.random_range(1..=3u32);
    let state = StateDictionary::Polynomial { n: 2, degree };
    let basis = match rng.random_range(0..3) {
        0 => make_lifted_linear(state, m).unwrap(),
        1 => make_bilinear(state, m).unwrap(),
        _ => {
            let nh = state.n_h();
            let rows = rng.random_range(1..=4);
            let net = Mlp::new(
                MlpSpec {
                    input_dim: m,
                    hidden: vec![8],
                    output_dim: rows * nh,
                    layer_norm: false,
                },
                rng,
            );
            NormalBasis::new(
                state,
                InputFactor::Neural {
                    m,
                    n_h: nh,
                    rows,
                    net,
                },
            )
            .unwrap()
        }
    };
    let x = uniform(2, samples, rng);
    let u = uniform(m, samples, rng);
    let xp = nonlinear_successor(&x, &u);
    (basis, SnapshotDataset::new(x, xp, u).unwrap())
}

/// Exact discrete linear system whose state stays order one under inputs in [-1, 1].
pub fn exact_linear_system(rng: &mut ChaCha8Rng) -> ControlSystem {
    let th: f64 = rng.random_range(0.2..0.8);
    let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.95;
    let b = uniform(2, 1, rng) * 0.5;
    synthetic_linear(a, b).unwrap()
}

pub fn exact_bilinear_system(rng: &mut ChaCha8Rng) -> ControlSystem {
    let th: f64 = rng.random_range(0.2..0.8);
    let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.97;
    let b = uniform(2, 2, rng) * 0.03;
    synthetic_bilinear(a, vec![b]).unwrap()
}

pub fn exact_data(
    system: &ControlSystem,
    snapshots: usize,
    restart: Option<usize>,
    seed: u64,
) -> SnapshotDataset {
    let mut protocol = ExperimentProtocol::discrete(snapshots, vec![0.5; system.n()], seed);
    protocol.restart_every = restart;
    collect(system, &protocol).unwrap()
}

/// Independent oracle for the one-step relative RMS error of `vᵀH`, using an
/// SVD pseudoinverse instead of the normal equations.
pub struct ErrorOracle {
    /// `J Jᵀ`
    pub jjt: DMatrix<f64>,
    /// `E Eᵀ` with `E = J − J L† L`.
    pub eet: DMatrix<f64>,
}

impl ErrorOracle {
    pub fn new(j: &DMatrix<f64>, l: &DMatrix<f64>) -> Self {
        let l_pinv = l.clone().pseudo_inverse(1e-14).unwrap();
        let e = j - j * &l_pinv * l;
        ErrorOracle {
            jjt: j * j.transpose(),
            eet: &e * e.transpose(),
        }
    }

    pub fn rrmse(&self, v: &DVector<f64>) -> f64 {
        (v.dot(&(&self.eet * v)) / v.dot(&(&self.jjt * v))).sqrt()
    }

    /// Largest generalized Rayleigh quotient of `(EEᵀ, JJᵀ)`.
    pub fn max_ratio(&self) -> f64 {
        let chol = self.jjt.clone().cholesky().unwrap();
        let l_inv = chol.l().try_inverse().unwrap();
        let s = &l_inv * &self.eet * l_inv.transpose();
        let s = (&s + s.transpose()) * 0.5;
        s.symmetric_eigenvalues().max()
    }
}
