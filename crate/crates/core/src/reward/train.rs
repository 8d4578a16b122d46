//! Mini-batch trainer shared by both reward-model families.

use alloc::vec::Vec;

use crate::numerics::{MlpGrads, MlpParams, Rng};

use super::{
    inforem_loss, standard_loss, InfoRmParams, LossBreakdown, PreferencePair, RmKind, RmParams,
    StandardRmParams,
};

/// Momentum coefficient used by [`Optimizer::Momentum`].
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Plain SGD: `theta -= lr * grad`.
    Sgd,
    /// Heavy-ball SGD: `v = 0.9 v - lr * grad; theta += v`.
    Momentum,
}

/// Trainer settings. `beta` and `latent_dim` are ignored for the standard
/// model family.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub beta: f64,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 1,
            seed: 0,
            optimizer: Optimizer::Momentum,
            beta: 0.1,
            latent_dim: 8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) {
        assert!(self.learning_rate > 0.0 && self.learning_rate.is_finite());
        assert!(self.batch_size >= 1, "batch_size must be >= 1");
        assert!(self.epochs >= 1, "epochs must be >= 1");
        assert!(self.beta >= 0.0 && self.beta.is_finite());
        assert!(self.latent_dim >= 1, "latent_dim must be >= 1");
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainError {
    /// Loss became non-finite at this step index.
    Diverged { step: usize },
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::Diverged { step } => write!(f, "loss became non-finite at step {step}"),
        }
    }
}

struct SgdState {
    velocity: MlpGrads,
}

impl SgdState {
    fn new(params: &MlpParams) -> Self {
        SgdState { velocity: MlpGrads::zeros_like(params) }
    }

    fn apply(&mut self, params: &mut MlpParams, grads: &MlpGrads, cfg: &TrainConfig) {
        match cfg.optimizer {
            Optimizer::Sgd => {
                self.velocity.scale(0.0);
                self.velocity.add_scaled(grads, -cfg.learning_rate);
            }
            Optimizer::Momentum => {
                self.velocity.scale(MOMENTUM);
                self.velocity.add_scaled(grads, -cfg.learning_rate);
            }
        }
        for (layer, (w, b)) in params
            .layers
            .iter_mut()
            .zip(self.velocity.weights.iter().zip(self.velocity.biases.iter()))
        {
            for (dst, v) in layer.weights.iter_mut().zip(w.iter()) {
                *dst += v;
            }
            for (dst, v) in layer.bias.iter_mut().zip(b.iter()) {
                *dst += v;
            }
        }
    }
}

/// Train a reward model of the given kind on ranked pairs.
///
/// Fully deterministic for a given config: initialization, epoch shuffles,
/// and latent noise each consume their own substream of `cfg.seed`. Returns
/// the trained parameters and one [`LossBreakdown`] per optimization step
/// (computed on the batch *before* the update that step applies).
pub fn train_rm(
    kind: RmKind,
    dataset: &[PreferencePair],
    cfg: &TrainConfig,
) -> Result<(RmParams, Vec<LossBreakdown>), TrainError> {
    assert!(!dataset.is_empty(), "cannot train on an empty dataset");
    cfg.validate();
    let d = dataset[0].feature_dim();
    assert!(dataset.iter().all(|p| p.feature_dim() == d), "pairs must share a dimension");

    let root = Rng::new(cfg.seed);
    let mut init_rng = root.derive(0);
    let mut shuffle_rng = root.derive(1);
    let mut eps_rng = root.derive(2);

    let mut params = match kind {
        RmKind::Standard => RmParams::Standard(StandardRmParams::random(d, &mut init_rng)),
        RmKind::InfoRm => {
            RmParams::InfoRm(InfoRmParams::random(d, cfg.latent_dim, cfg.beta, &mut init_rng))
        }
    };

    let mut states: Vec<SgdState> = match &params {
        RmParams::Standard(p) => alloc::vec![SgdState::new(&p.mlp)],
        RmParams::InfoRm(p) => alloc::vec![SgdState::new(&p.encoder), SgdState::new(&p.decoder)],
    };

    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PreferencePair> =
                chunk.iter().map(|&i| dataset[i].clone()).collect();

            let breakdown = match &mut params {
                RmParams::Standard(p) => {
                    let (breakdown, grads) = standard_loss(p, &batch);
                    if !breakdown.total.is_finite() {
                        return Err(TrainError::Diverged { step });
                    }
                    states[0].apply(&mut p.mlp, &grads, cfg);
                    breakdown
                }
                RmParams::InfoRm(p) => {
                    let (breakdown, grads) = inforem_loss(p, &batch, &mut eps_rng);
                    if !breakdown.total.is_finite() {
                        return Err(TrainError::Diverged { step });
                    }
                    states[0].apply(&mut p.encoder, &grads.encoder, cfg);
                    states[1].apply(&mut p.decoder, &grads.decoder, cfg);
                    breakdown
                }
            };
            curve.push(breakdown);
            step += 1;
        }
    }

    Ok((params, curve))
}
