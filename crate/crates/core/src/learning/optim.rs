//! Adam and the warmup/cosine learning-rate schedule.

use std::f64::consts::PI;

/// Learning rate for `epoch`: linear ramp from `floor` to `peak` over the
/// first `warmup` epochs, then cosine annealing back to `floor` at `epochs`.
pub fn lr_schedule(epoch: usize, epochs: usize, warmup: usize, peak: f64, floor: f64) -> f64 {
    if epoch < warmup {
        return floor + (peak - floor) * epoch as f64 / warmup as f64;
    }
    let decay = epochs.saturating_sub(warmup);
    if decay == 0 {
        return floor;
    }
    let progress = ((epoch - warmup) as f64 / decay as f64).min(1.0);
    floor + 0.5 * (peak - floor) * (1.0 + (PI * progress).cos())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
