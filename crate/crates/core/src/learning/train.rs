//! Mini-batch Adam training of a [`ParametricBasis`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{certify, ConsistencyReport};
use crate::dictionary::NormalBasis;
use crate::error::{KcfError, Result};
use crate::regression::{fit_top_block, FittedModel, SnapshotDataset, Split};
use crate::systems::Domain;

use super::loss::{loss_and_gradient, LossWeights};
use super::optim::{lr_schedule, Adam};
use super::{ModelClass, ParametricBasis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Width of `H^φ` including the pinned state coordinates.
    pub h_outputs: usize,
    /// Dictionary size of the separable class.
    pub n_psi: usize,
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub alpha: f64,
    #[serde(default)]
    pub alpha_h: f64,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    /// Two hidden layers of 32 and 100 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            h_outputs: 5,
            n_psi: 10,
            hidden: vec![32, 32],
            layer_norm: true,
            epochs: 100,
            warmup_epochs: 10,
            batch_size: 100,
            lr_peak: 1e-3,
            lr_floor: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            alpha: 1e-5,
            alpha_h: 0.0,
            seed: 0,
            checkpoint_every: None,
        }
    }

    /// Four hidden layers of 64 and 500 epochs with 50 warmup epochs.
    pub fn paper_scale() -> Self {
        TrainConfig {
            hidden: vec![64; 4],
            epochs: 500,
            warmup_epochs: 50,
            ..Self::desk()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            alpha_h: self.alpha_h,
        }
    }

    pub fn validate(&self, n_psi: usize) -> Result<()> {
        if self.batch_size <= n_psi {
            return Err(KcfError::invalid(
                "training config",
                format!("batch size {} must exceed n_Psi = {n_psi}", self.batch_size),
            ));
        }
        if self.lr_floor.is_nan()
            || self.lr_peak.is_nan()
            || self.lr_floor > self.lr_peak
            || self.lr_floor < 0.0
        {
            return Err(KcfError::invalid(
                "training config",
                "need 0 <= lr_floor <= lr_peak",
            ));
        }
        if self.epochs == 0 || self.warmup_epochs > self.epochs {
            return Err(KcfError::invalid(
                "training config",
                "need 0 <= warmup_epochs <= epochs, epochs > 0",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(KcfError::invalid(
                "training config",
                "Adam betas must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub mean_trace: f64,
    pub batches: usize,
    /// Batches dropped by the rank guard.
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub class: ModelClass,
    pub basis: NormalBasis,
    pub model: FittedModel,
    pub train_report: ConsistencyReport,
    pub test_report: Option<ConsistencyReport>,
    pub history: Vec<EpochLog>,
}

/// Trains a dictionary of the given class on the training split of `data`,
/// then refits `[A₁₁, A₁₂]` on the full training split and certifies both splits.
///
/// `on_checkpoint` is called every `checkpoint_every` epochs with a snapshot.
pub fn train<F>(
    data: &SnapshotDataset,
    class: ModelClass,
    config: &TrainConfig,
    state_box: &Domain,
    input_box: &Domain,
    mut on_checkpoint: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &NormalBasis) -> Result<()>,
{
    if state_box.dim() != data.n() || input_box.dim() != data.m() {
        return Err(KcfError::invalid(
            "training domains",
            "box dimensions differ from the data",
        ));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut basis = ParametricBasis::new(
        class,
        state_box,
        input_box,
        config.h_outputs,
        config.n_psi,
        &config.hidden,
        config.layer_norm,
        &mut init_rng,
    )?;
    config.validate(basis.n_psi())?;

    let train_set = data.subset(Split::Train)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut params = basis.params();
    let mut adam = Adam::new(params.len(), config.beta1, config.beta2, config.adam_eps);
    let weights = config.weights();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = lr_schedule(
            epoch,
            config.epochs,
            config.warmup_epochs,
            config.lr_peak,
            config.lr_floor,
        );
        order.shuffle(&mut shuffle_rng);
        let mut log = EpochLog {
            epoch,
            lr,
            mean_loss: 0.0,
            mean_trace: 0.0,
            batches: 0,
            skipped: 0,
        };
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() <= basis.n_psi() {
                continue;
            }
            let batch = train_set.select(chunk)?;
            let value = match loss_and_gradient(&basis, &batch, weights) {
                Ok(v) => v,
                Err(KcfError::RankDeficient { .. }) => {
                    log.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grad = value.gradient.expect("gradient requested");
            if !value.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(KcfError::Diverged { epoch, batch: b });
            }
            adam.step(&mut params, &grad, lr);
            basis.set_params(&params);
            log.mean_loss += value.loss;
            log.mean_trace += value.trace;
            log.batches += 1;
        }
        if log.batches > 0 {
            log.mean_loss /= log.batches as f64;
            log.mean_trace /= log.batches as f64;
        }
        history.push(log);
        if let Some(k) = config.checkpoint_every {
            if k > 0 && (epoch + 1) % k == 0 {
                on_checkpoint(epoch + 1, &basis.to_basis()?)?;
            }
        }
    }

    let learned = basis.to_basis()?;
    let model = fit_top_block(&learned, &train_set)?;
    let train_report = certify(&learned, &train_set)?;
    let test_set = data.indices_of(Split::Test);
    let test_report = if test_set.is_empty() {
        None
    } else {
        Some(certify(&learned, &data.select(&test_set)?)?)
    };
    Ok(TrainOutcome {
        class,
        basis: learned,
        model,
        train_report,
        test_report,
        history,
    })
}
