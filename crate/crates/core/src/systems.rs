//! Reference control systems, the RK4 integrator and the data-collection protocol.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KcfError, Result};
use crate::linalg::row_major;
use crate::regression::{SnapshotDataset, Split};

/// Input nonlinearity `f(u)` of the DC motor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNonlinearity {
    /// `2 tanh(u)`
    Tanh,
    /// `2 tanh(u cos u)`
    TanhCos,
}

impl InputNonlinearity {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            InputNonlinearity::Tanh => 2.0 * u.tanh(),
            InputNonlinearity::TanhCos => 2.0 * (u * u.cos()).tanh(),
        }
    }
}

/// DC motor vector field.
pub fn dc_motor_rhs(x: &[f64], u: f64, f: InputNonlinearity) -> [f64; 2] {
    let fu = f.apply(u);
    [
        -39.3153 * x[0] - 0.805732 * x[1] * fu + 191.083,
        -1.65986 * x[1] + 57.3696 * x[0] * fu - 333.333,
    ]
}

/// Classical fourth-order Runge-Kutta step with the input held constant.
pub fn integrate_step<F>(rhs: F, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    if dt.is_nan() || dt <= 0.0 {
        return Err(KcfError::invalid(
            "time step",
            format!("{dt} is not positive"),
        ));
    }
    let axpy = |a: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        a.iter().zip(k).map(|(a, k)| a + h * k).collect()
    };
    let k1 = rhs(x, u);
    let k2 = rhs(&axpy(x, &k1, 0.5 * dt), u);
    let k3 = rhs(&axpy(x, &k2, 0.5 * dt), u);
    let k4 = rhs(&axpy(x, &k3, dt), u);
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(KcfError::NonFinite {
            step: 0,
            context: "integrator output".into(),
        });
    }
    Ok(next)
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Domain { lo, hi }
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Domain {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// The box scaled by `factor` about its center.
    pub fn scaled(&self, factor: f64) -> Domain {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let c = 0.5 * (l + h);
                let r = 0.5 * (h - l) * factor;
                (c - r, c + r)
            })
            .unzip();
        Domain { lo, hi }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dynamics {
    /// Continuous-time DC motor, discretized by RK4.
    DcMotor { nonlinearity: InputNonlinearity },
    /// `x⁺ = Ax + Bu`.
    Linear {
        #[serde(with = "row_major")]
        a: DMatrix<f64>,
        #[serde(with = "row_major")]
        b: DMatrix<f64>,
    },
    /// `x⁺ = Ax + Σ uᵢ Bᵢ x`.
    Bilinear {
        #[serde(with = "row_major")]
        a: DMatrix<f64>,
        #[serde(with = "bilinear_terms")]
        b: Vec<DMatrix<f64>>,
    },
}

mod bilinear_terms {
    use crate::linalg::row_major::RowMajor;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(RowMajor::from)
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<RowMajor>::deserialize(d)?
            .into_iter()
            .map(|m| m.into_matrix().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// A control system `x⁺ = 𝒯(x, u)` with its region of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSystem {
    pub dynamics: Dynamics,
    pub state_domain: Domain,
    pub input_domain: Domain,
}

impl ControlSystem {
    /// DC motor on `[-5, 15] × [-250, 125]` with inputs in `[-2, 2]`.
    pub fn dc_motor(nonlinearity: InputNonlinearity) -> Self {
        ControlSystem {
            dynamics: Dynamics::DcMotor { nonlinearity },
            state_domain: Domain::new(vec![-5.0, -250.0], vec![15.0, 125.0]),
            input_domain: Domain::new(vec![-2.0], vec![2.0]),
        }
    }

    pub fn n(&self) -> usize {
        self.state_domain.dim()
    }

    pub fn m(&self) -> usize {
        self.input_domain.dim()
    }

    pub fn tag(&self) -> String {
        match &self.dynamics {
            Dynamics::DcMotor { nonlinearity } => match nonlinearity {
                InputNonlinearity::Tanh => "dc-motor/tanh".into(),
                InputNonlinearity::TanhCos => "dc-motor/tanh-cos".into(),
            },
            Dynamics::Linear { .. } => "linear".into(),
            Dynamics::Bilinear { .. } => "bilinear".into(),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.dynamics, Dynamics::DcMotor { .. })
    }

    /// One sample period: RK4 over `dt` for continuous systems, the exact map otherwise.
    pub fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        match &self.dynamics {
            Dynamics::DcMotor { nonlinearity } => {
                let f = *nonlinearity;
                integrate_step(|x, u| dc_motor_rhs(x, u[0], f).to_vec(), x, u, dt)
            }
            Dynamics::Linear { a, b } => {
                let next = a * DVector::from_column_slice(x) + b * DVector::from_column_slice(u);
                Ok(next.as_slice().to_vec())
            }
            Dynamics::Bilinear { a, b } => {
                let xv = DVector::from_column_slice(x);
                let mut next = a * &xv;
                for (bi, ui) in b.iter().zip(u) {
                    next += bi * &xv * *ui;
                }
                Ok(next.as_slice().to_vec())
            }
        }
    }

    /// States visited from `x0` under `inputs` (`m × T`), as an `n × (T+1)` matrix.
    pub fn simulate(&self, x0: &[f64], inputs: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
        let mut xs = DMatrix::zeros(self.n(), inputs.ncols() + 1);
        xs.column_mut(0).copy_from_slice(x0);
        let mut x = x0.to_vec();
        for t in 0..inputs.ncols() {
            let u: Vec<f64> = inputs.column(t).iter().copied().collect();
            x = self.step(&x, &u, dt).map_err(|e| with_step(e, t))?;
            xs.column_mut(t + 1).copy_from_slice(&x);
        }
        Ok(xs)
    }

    /// Piecewise-constant inputs drawn uniformly from the input domain,
    /// redrawn every `hold_steps` steps.
    pub fn random_inputs<R: Rng>(
        &self,
        steps: usize,
        hold_steps: usize,
        rng: &mut R,
    ) -> DMatrix<f64> {
        let mut inputs = DMatrix::zeros(self.m(), steps);
        let mut current = Vec::new();
        for t in 0..steps {
            if t % hold_steps.max(1) == 0 {
                current = self.input_domain.sample(rng);
            }
            inputs.column_mut(t).copy_from_slice(&current);
        }
        inputs
    }
}

fn with_step(e: KcfError, t: usize) -> KcfError {
    match e {
        KcfError::NonFinite { context, .. } => KcfError::NonFinite { step: t, context },
        other => other,
    }
}

/// `x⁺ = Ax + Bu` on `[-1, 1]` boxes.
pub fn synthetic_linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<ControlSystem> {
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(KcfError::invalid(
            "linear system",
            "A must be square and B conformable",
        ));
    }
    let (n, m) = (a.nrows(), b.ncols());
    Ok(ControlSystem {
        dynamics: Dynamics::Linear { a, b },
        state_domain: Domain::symmetric(n, 1.0),
        input_domain: Domain::symmetric(m, 1.0),
    })
}

/// `x⁺ = Ax + Σ uᵢ Bᵢ x` on `[-1, 1]` boxes.
pub fn synthetic_bilinear(a: DMatrix<f64>, b: Vec<DMatrix<f64>>) -> Result<ControlSystem> {
    if !a.is_square() || b.iter().any(|bi| bi.shape() != a.shape()) || b.is_empty() {
        return Err(KcfError::invalid(
            "bilinear system",
            "A and every Bᵢ must be square of equal size",
        ));
    }
    let (n, m) = (a.nrows(), b.len());
    Ok(ControlSystem {
        dynamics: Dynamics::Bilinear { a, b },
        state_domain: Domain::symmetric(n, 1.0),
        input_domain: Domain::symmetric(m, 1.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Seeded random column split.
    Random,
    /// Leading columns train, trailing columns test.
    Contiguous,
}

/// Single-experiment data collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentProtocol {
    /// Seconds (number of steps for discrete systems with `dt = 1`).
    pub duration: f64,
    pub dt: f64,
    pub hold: f64,
    pub initial_state: Vec<f64>,
    pub seed: u64,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
    /// Redraw the state uniformly from the state domain every this many steps.
    #[serde(default)]
    pub restart_every: Option<usize>,
}

impl ExperimentProtocol {
    /// 50 s from the origin, 5 ms sampling, inputs held for 0.2 s, 80/20 split.
    pub fn dc_motor(seed: u64) -> Self {
        ExperimentProtocol {
            duration: 50.0,
            dt: 0.005,
            hold: 0.2,
            initial_state: vec![0.0, 0.0],
            seed,
            train_fraction: 0.8,
            split_mode: SplitMode::Random,
            restart_every: None,
        }
    }

    /// Discrete-time protocol with `steps` snapshots and inputs redrawn every step.
    pub fn discrete(steps: usize, initial_state: Vec<f64>, seed: u64) -> Self {
        ExperimentProtocol {
            duration: steps as f64,
            dt: 1.0,
            hold: 1.0,
            initial_state,
            seed,
            train_fraction: 0.8,
            split_mode: SplitMode::Random,
            restart_every: None,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn hold_steps(&self) -> usize {
        (self.hold / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt.is_nan() || self.duration.is_nan() || self.dt <= 0.0 || self.duration <= 0.0 {
            return Err(KcfError::invalid(
                "protocol",
                "duration and dt must be positive",
            ));
        }
        let ratio = self.hold / self.dt;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(KcfError::invalid(
                "protocol",
                format!(
                    "hold time {} is not a positive multiple of dt {}",
                    self.hold, self.dt
                ),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(KcfError::invalid(
                "protocol",
                "train fraction must lie in (0, 1)",
            ));
        }
        if self.steps() == 0 {
            return Err(KcfError::invalid("protocol", "no snapshots"));
        }
        if self.restart_every == Some(0) {
            return Err(KcfError::invalid(
                "protocol",
                "restart period must be positive",
            ));
        }
        Ok(())
    }
}

const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Train/test labels with `round(fraction·N)` training columns.
pub fn split_labels(n: usize, fraction: f64, mode: SplitMode, seed: u64) -> Vec<Split> {
    let n_train = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    if mode == SplitMode::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM);
        order.shuffle(&mut rng);
    }
    let mut labels = vec![Split::Test; n];
    for &i in &order[..n_train] {
        labels[i] = Split::Train;
    }
    labels
}

/// Runs the protocol from its initial state and records `(x, u, x⁺)` triples.
pub fn collect(system: &ControlSystem, protocol: &ExperimentProtocol) -> Result<SnapshotDataset> {
    protocol.validate()?;
    if protocol.initial_state.len() != system.n() {
        return Err(KcfError::dim(
            "initial state",
            system.n(),
            protocol.initial_state.len(),
        ));
    }
    let steps = protocol.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let inputs = system.random_inputs(steps, protocol.hold_steps(), &mut rng);
    let guard = system.state_domain.scaled(10.0);

    let n = system.n();
    let mut xs = DMatrix::zeros(n, steps);
    let mut xps = DMatrix::zeros(n, steps);
    let mut x = protocol.initial_state.clone();
    for t in 0..steps {
        if let Some(period) = protocol.restart_every {
            if t > 0 && t % period == 0 {
                x = system.state_domain.sample(&mut rng);
            }
        }
        let u: Vec<f64> = inputs.column(t).iter().copied().collect();
        let next = system
            .step(&x, &u, protocol.dt)
            .map_err(|e| with_step(e, t))?;
        if !guard.contains(&next) {
            return Err(KcfError::GuardBox { step: t });
        }
        xs.column_mut(t).copy_from_slice(&x);
        xps.column_mut(t).copy_from_slice(&next);
        x = next;
    }
    let split = split_labels(
        steps,
        protocol.train_fraction,
        protocol.split_mode,
        protocol.seed,
    );
    SnapshotDataset::with_split(xs, xps, inputs, split)
}
