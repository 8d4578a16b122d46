//! Reward models over feature vectors and the pairwise losses that train
//! them.
//!
//! Two model families share one scalar-reward interface: a plain MLP scorer
//! trained on the Bradley–Terry pairwise likelihood, and a bottlenecked
//! scorer that routes the input through a stochastic low-dimensional latent
//! (encoder emits a diagonal Gaussian, decoder scores a sample of it) with a
//! KL penalty toward the standard-normal prior. The bottleneck strength
//! `beta` trades preference fit against compression.
//!
//! Combinators for multi-model baselines live here too: variance-penalized
//! ensembling and uniform weight averaging.

mod train;

pub use train::{train_rm, Optimizer, TrainConfig, TrainError};

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{log_sigmoid, sigmoid, DiagGaussian, MlpGrads, MlpParams, Rng};

/// Hidden widths for the plain scorer: D-32-16-1.
pub const STANDARD_HIDDEN: [usize; 2] = [32, 16];
/// Hidden widths for the bottleneck encoder: D-32-2K.
pub const ENCODER_HIDDEN: [usize; 1] = [32];
/// Hidden widths for the bottleneck decoder: K-16-1.
pub const DECODER_HIDDEN: [usize; 1] = [16];

/// One ranked comparison: `chosen` was preferred over `rejected`.
/// `flipped` marks pairs whose label was inverted by injected label noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
    pub flipped: bool,
}

impl PreferencePair {
    pub fn new(chosen: Vec<f64>, rejected: Vec<f64>) -> Self {
        assert_eq!(chosen.len(), rejected.len(), "pair members must share a dimension");
        assert!(!chosen.is_empty(), "pair members must be non-empty");
        PreferencePair { chosen, rejected, flipped: false }
    }

    pub fn feature_dim(&self) -> usize {
        self.chosen.len()
    }
}

/// Plain scalar reward model: a single MLP mapping D → 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardRmParams {
    pub mlp: MlpParams,
}

impl StandardRmParams {
    pub fn new(mlp: MlpParams) -> Self {
        assert_eq!(mlp.out_dim(), 1, "reward head must be scalar");
        StandardRmParams { mlp }
    }

    /// Fresh model at the default architecture for `feature_dim` inputs.
    pub fn random(feature_dim: usize, rng: &mut Rng) -> Self {
        let dims = [feature_dim, STANDARD_HIDDEN[0], STANDARD_HIDDEN[1], 1];
        StandardRmParams::new(MlpParams::random(&dims, rng))
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.in_dim()
    }
}

/// Bottlenecked reward model: encoder D → 2K (mean head then raw-scale
/// head), decoder K → 1, bottleneck strength `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoRmParams {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub beta: f64,
    pub latent_dim: usize,
}

impl InfoRmParams {
    pub fn new(encoder: MlpParams, decoder: MlpParams, beta: f64, latent_dim: usize) -> Self {
        assert!(latent_dim >= 1, "latent dimension must be >= 1");
        assert_eq!(encoder.out_dim(), 2 * latent_dim, "encoder must emit mean and raw scale");
        assert_eq!(decoder.in_dim(), latent_dim, "decoder input must match latent dimension");
        assert_eq!(decoder.out_dim(), 1, "reward head must be scalar");
        assert!(beta >= 0.0 && beta.is_finite(), "beta must be finite and >= 0");
        InfoRmParams { encoder, decoder, beta, latent_dim }
    }

    /// Fresh model at the default architecture.
    pub fn random(feature_dim: usize, latent_dim: usize, beta: f64, rng: &mut Rng) -> Self {
        let enc_dims = [feature_dim, ENCODER_HIDDEN[0], 2 * latent_dim];
        let dec_dims = [latent_dim, DECODER_HIDDEN[0], 1];
        let mut encoder = MlpParams::random(&enc_dims, rng);
        // The raw-scale head must start near 1, not 0: at raw scale 0 the
        // floored variance sits on the steep side of -ln(var) and the first
        // KL gradient is ~1/(2*sqrt(floor)), which blows past any sane
        // learning rate. Starting at 1 makes the initial posterior match
        // the prior.
        let last = encoder.layers.last_mut().expect("encoder has layers");
        for b in last.bias[latent_dim..].iter_mut() {
            *b = 1.0;
        }
        let decoder = MlpParams::random(&dec_dims, rng);
        InfoRmParams::new(encoder, decoder, beta, latent_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.in_dim()
    }
}

/// Model family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmKind {
    Standard,
    InfoRm,
}

/// A reward model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum RmParams {
    Standard(StandardRmParams),
    InfoRm(InfoRmParams),
}

impl RmParams {
    pub fn kind(&self) -> RmKind {
        match self {
            RmParams::Standard(_) => RmKind::Standard,
            RmParams::InfoRm(_) => RmKind::InfoRm,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            RmParams::Standard(p) => p.feature_dim(),
            RmParams::InfoRm(p) => p.feature_dim(),
        }
    }

    /// Deterministic (eval-mode) reward.
    pub fn reward_eval(&self, x: &[f64]) -> f64 {
        match self {
            RmParams::Standard(p) => standard_reward(p, x),
            RmParams::InfoRm(p) => inforem_reward(p, x, EncodeMode::Eval),
        }
    }
}

/// Probability that the first item beats the second under the pairwise
/// logistic model: `exp(r_w) / (exp(r_w) + exp(r_l))`.
pub fn bt_probability(r_chosen: f64, r_rejected: f64) -> f64 {
    sigmoid(r_chosen - r_rejected)
}

/// Scalar output of the plain reward model.
pub fn standard_reward(p: &StandardRmParams, x: &[f64]) -> f64 {
    p.mlp.forward(x)[0]
}

/// Latent construction mode: stochastic during training, posterior mean at
/// inference time.
pub enum EncodeMode<'a> {
    Train(&'a mut Rng),
    Eval,
}

/// Encoder pass: splits the encoder output into a diagonal Gaussian and
/// produces the latent for the requested mode (reparameterized sample for
/// training, mean for eval).
pub fn inforem_encode(p: &InfoRmParams, x: &[f64], mode: EncodeMode) -> (DiagGaussian, Vec<f64>) {
    let out = p.encoder.forward(x);
    let k = p.latent_dim;
    let gaussian = DiagGaussian::new(out[..k].to_vec(), out[k..].to_vec());
    let latent = match mode {
        EncodeMode::Train(rng) => {
            let eps = rng.sample_standard_normal(k);
            gaussian.sample_with(&eps)
        }
        EncodeMode::Eval => gaussian.mean.clone(),
    };
    (gaussian, latent)
}

/// Decoder applied to the latent from [`inforem_encode`].
pub fn inforem_reward(p: &InfoRmParams, x: &[f64], mode: EncodeMode) -> f64 {
    let (_, latent) = inforem_encode(p, x, mode);
    p.decoder.forward(&latent)[0]
}

/// Per-batch loss summary. `total` is the minimized quantity; for the
/// bottlenecked loss, `total = -(preference_term - beta * bottleneck_term)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub preference_term: f64,
    pub bottleneck_term: f64,
    pub accuracy: f64,
}

/// Add `c * g`'s parameter gradients into `acc`, leaving `acc.input` alone.
/// Input gradients are per-example and meaningless summed across a batch.
fn accumulate_params(acc: &mut MlpGrads, g: &MlpGrads, c: f64) {
    for (a, b) in acc.weights.iter_mut().zip(g.weights.iter()) {
        for (x, y) in a.iter_mut().zip(b.iter()) {
            *x += c * y;
        }
    }
    for (a, b) in acc.biases.iter_mut().zip(g.biases.iter()) {
        for (x, y) in a.iter_mut().zip(b.iter()) {
            *x += c * y;
        }
    }
}

/// Mean negative log-likelihood of the pairwise logistic model over the
/// batch, with exact parameter gradients. Accuracy counts strict wins only;
/// tied rewards score as incorrect.
pub fn standard_loss(p: &StandardRmParams, batch: &[PreferencePair]) -> (LossBreakdown, MlpGrads) {
    assert!(!batch.is_empty(), "loss over an empty batch is undefined");
    let scale = 1.0 / batch.len() as f64;
    let mut grads = MlpGrads::zeros_like(&p.mlp);
    let mut pref_sum = 0.0;
    let mut correct = 0usize;

    for pair in batch {
        let tw = p.mlp.forward_trace(&pair.chosen);
        let tl = p.mlp.forward_trace(&pair.rejected);
        let rw = tw.output()[0];
        let rl = tl.output()[0];
        let margin = rw - rl;
        pref_sum += log_sigmoid(margin);
        if rw > rl {
            correct += 1;
        }
        // d(-log_sigmoid(m))/dm = sigmoid(m) - 1.
        let dm = sigmoid(margin) - 1.0;
        accumulate_params(&mut grads, &p.mlp.backward(&tw, &[dm]), scale);
        accumulate_params(&mut grads, &p.mlp.backward(&tl, &[-dm]), scale);
    }

    let preference_term = pref_sum * scale;
    let breakdown = LossBreakdown {
        total: -preference_term,
        preference_term,
        bottleneck_term: 0.0,
        accuracy: correct as f64 * scale,
    };
    (breakdown, grads)
}

/// Gradients of the bottlenecked loss, split by sub-network.
#[derive(Debug, Clone)]
pub struct InfoRmGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

/// Bottlenecked pairwise loss with fresh noise: one standard-normal vector
/// is drawn per input (chosen first, then rejected, in batch order).
pub fn inforem_loss(
    p: &InfoRmParams,
    batch: &[PreferencePair],
    rng: &mut Rng,
) -> (LossBreakdown, InfoRmGrads) {
    let eps: Vec<(Vec<f64>, Vec<f64>)> = batch
        .iter()
        .map(|_| {
            (rng.sample_standard_normal(p.latent_dim), rng.sample_standard_normal(p.latent_dim))
        })
        .collect();
    inforem_loss_with_eps(p, batch, &eps)
}

/// Bottlenecked pairwise loss with caller-supplied noise, one
/// `(eps_chosen, eps_rejected)` per pair. Deterministic; this is the entry
/// point for gradient checking.
///
/// Per pair: `-(log_sigmoid(score_w - score_l) - beta * (kl_w + kl_l))`,
/// where scores decode reparameterized latents and each KL is taken from
/// the encoder's Gaussian to the standard normal. Returned terms are batch
/// means; gradients are exact.
pub fn inforem_loss_with_eps(
    p: &InfoRmParams,
    batch: &[PreferencePair],
    eps: &[(Vec<f64>, Vec<f64>)],
) -> (LossBreakdown, InfoRmGrads) {
    assert!(!batch.is_empty(), "loss over an empty batch is undefined");
    assert_eq!(eps.len(), batch.len(), "one noise pair per preference pair");
    let k = p.latent_dim;
    let scale = 1.0 / batch.len() as f64;

    let mut enc_grads = MlpGrads::zeros_like(&p.encoder);
    let mut dec_grads = MlpGrads::zeros_like(&p.decoder);
    let mut pref_sum = 0.0;
    let mut bottleneck_sum = 0.0;
    let mut correct = 0usize;

    // One side's forward state: encoder trace, Gaussian, decoder trace.
    struct Side {
        enc_trace: crate::numerics::MlpTrace,
        gaussian: DiagGaussian,
        dec_trace: crate::numerics::MlpTrace,
        score: f64,
    }
    let forward = |x: &[f64], e: &[f64]| -> Side {
        assert_eq!(e.len(), k, "noise vector must match latent dimension");
        let enc_trace = p.encoder.forward_trace(x);
        let out = enc_trace.output();
        let gaussian = DiagGaussian::new(out[..k].to_vec(), out[k..].to_vec());
        let latent = gaussian.sample_with(e);
        let dec_trace = p.decoder.forward_trace(&latent);
        let score = dec_trace.output()[0];
        Side { enc_trace, gaussian, dec_trace, score }
    };

    for (pair, (ew, el)) in batch.iter().zip(eps.iter()) {
        let w = forward(&pair.chosen, ew);
        let l = forward(&pair.rejected, el);

        let margin = w.score - l.score;
        pref_sum += log_sigmoid(margin);
        bottleneck_sum += w.gaussian.kl_to_standard() + l.gaussian.kl_to_standard();
        if w.score > l.score {
            correct += 1;
        }

        let dm = sigmoid(margin) - 1.0;
        // (side, d total / d score for that side, its noise vector)
        for (side, dscore, e) in [(&w, dm, ew), (&l, -dm, el)] {
            let dec_g = p.decoder.backward(&side.dec_trace, &[dscore]);
            accumulate_params(&mut dec_grads, &dec_g, scale);

            // Upstream into the encoder output: latent = mu + raw .* eps
            // contributes through the decoder; the KL closed form adds
            // beta * mu to the mean head and beta * raw * (1 - 1/var) to
            // the raw-scale head.
            let mut upstream = vec![0.0; 2 * k];
            for i in 0..k {
                let mu = side.gaussian.mean[i];
                let raw = side.gaussian.raw_scale[i];
                let var = side.gaussian.variance(i);
                upstream[i] = dec_g.input[i] + p.beta * mu;
                upstream[k + i] = dec_g.input[i] * e[i] + p.beta * raw * (1.0 - 1.0 / var);
            }
            accumulate_params(&mut enc_grads, &p.encoder.backward(&side.enc_trace, &upstream), scale);
        }
    }

    let preference_term = pref_sum * scale;
    let bottleneck_term = bottleneck_sum * scale;
    let breakdown = LossBreakdown {
        total: -(preference_term - p.beta * bottleneck_term),
        preference_term,
        bottleneck_term,
        accuracy: correct as f64 * scale,
    };
    (breakdown, InfoRmGrads { encoder: enc_grads, decoder: dec_grads })
}

fn assert_same_shape(members: &[RmParams]) {
    let first = &members[0];
    for m in &members[1..] {
        let compatible = match (first, m) {
            (RmParams::Standard(a), RmParams::Standard(b)) => a.mlp.dims() == b.mlp.dims(),
            (RmParams::InfoRm(a), RmParams::InfoRm(b)) => {
                a.encoder.dims() == b.encoder.dims()
                    && a.decoder.dims() == b.decoder.dims()
                    && a.beta == b.beta
                    && a.latent_dim == b.latent_dim
            }
            _ => false,
        };
        assert!(compatible, "ensemble members must share kind and shape");
    }
}

/// Variance-penalized ensemble score: mean member reward minus `lambda`
/// times the population variance across members (eval-mode rewards).
pub fn ensemble_reward(members: &[RmParams], x: &[f64], lambda: f64) -> f64 {
    assert!(members.len() >= 2, "an ensemble needs at least two members");
    assert!(lambda >= 0.0, "lambda must be >= 0");
    assert_same_shape(members);
    let n = members.len() as f64;
    let rewards: Vec<f64> = members.iter().map(|m| m.reward_eval(x)).collect();
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    mean - lambda * var
}

/// Element-wise uniform mean of identically-shaped models.
pub fn weight_average(members: &[RmParams]) -> RmParams {
    assert!(!members.is_empty(), "cannot average zero models");
    assert_same_shape(members);
    let n = members.len() as f64;

    let avg_mlp = |extract: &dyn Fn(&RmParams) -> &MlpParams| -> MlpParams {
        let mut out = extract(&members[0]).clone();
        for layer in out.layers.iter_mut() {
            for w in layer.weights.iter_mut() {
                *w /= n;
            }
            for b in layer.bias.iter_mut() {
                *b /= n;
            }
        }
        for m in &members[1..] {
            let src = extract(m);
            for (dst, s) in out.layers.iter_mut().zip(src.layers.iter()) {
                for (w, v) in dst.weights.iter_mut().zip(s.weights.iter()) {
                    *w += v / n;
                }
                for (b, v) in dst.bias.iter_mut().zip(s.bias.iter()) {
                    *b += v / n;
                }
            }
        }
        out
    };

    match &members[0] {
        RmParams::Standard(_) => {
            let mlp = avg_mlp(&|m| match m {
                RmParams::Standard(p) => &p.mlp,
                RmParams::InfoRm(_) => unreachable!("shape check enforces kind"),
            });
            RmParams::Standard(StandardRmParams::new(mlp))
        }
        RmParams::InfoRm(first) => {
            let encoder = avg_mlp(&|m| match m {
                RmParams::InfoRm(p) => &p.encoder,
                RmParams::Standard(_) => unreachable!("shape check enforces kind"),
            });
            let decoder = avg_mlp(&|m| match m {
                RmParams::InfoRm(p) => &p.decoder,
                RmParams::Standard(_) => unreachable!("shape check enforces kind"),
            });
            RmParams::InfoRm(InfoRmParams::new(encoder, decoder, first.beta, first.latent_dim))
        }
    }
}

/// Fraction of pairs the model ranks correctly in eval mode. Ties count as
/// incorrect, so an all-zero model scores 0.
pub fn rm_accuracy(params: &RmParams, pairs: &[PreferencePair]) -> f64 {
    assert!(!pairs.is_empty(), "accuracy over an empty set is undefined");
    let correct = pairs
        .iter()
        .filter(|p| params.reward_eval(&p.chosen) > params.reward_eval(&p.rejected))
        .count();
    correct as f64 / pairs.len() as f64
}

/// Scalar reward with its input gradient — the interface policy
/// optimization drives. Rewards are deterministic (eval-mode).
pub trait RewardFn {
    fn reward(&self, x: &[f64]) -> f64;
    fn reward_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

impl RewardFn for StandardRmParams {
    fn reward(&self, x: &[f64]) -> f64 {
        standard_reward(self, x)
    }

    fn reward_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let trace = self.mlp.forward_trace(x);
        let r = trace.output()[0];
        let grads = self.mlp.backward(&trace, &[1.0]);
        (r, grads.input)
    }
}

impl RewardFn for InfoRmParams {
    fn reward(&self, x: &[f64]) -> f64 {
        inforem_reward(self, x, EncodeMode::Eval)
    }

    fn reward_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let enc_trace = self.encoder.forward_trace(x);
        let mu = &enc_trace.output()[..self.latent_dim];
        let dec_trace = self.decoder.forward_trace(mu);
        let r = dec_trace.output()[0];
        let dec_g = self.decoder.backward(&dec_trace, &[1.0]);
        // Eval mode reads only the mean head; the raw-scale half of the
        // encoder output gets zero upstream.
        let mut upstream = vec![0.0; 2 * self.latent_dim];
        upstream[..self.latent_dim].copy_from_slice(&dec_g.input);
        let enc_g = self.encoder.backward(&enc_trace, &upstream);
        (r, enc_g.input)
    }
}

impl RewardFn for RmParams {
    fn reward(&self, x: &[f64]) -> f64 {
        self.reward_eval(x)
    }

    fn reward_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            RmParams::Standard(p) => p.reward_and_input_grad(x),
            RmParams::InfoRm(p) => p.reward_and_input_grad(x),
        }
    }
}

/// Variance-penalized ensemble as a single differentiable reward.
pub struct PenalizedEnsemble {
    pub members: Vec<RmParams>,
    pub lambda: f64,
}

impl PenalizedEnsemble {
    pub fn new(members: Vec<RmParams>, lambda: f64) -> Self {
        assert!(members.len() >= 2, "an ensemble needs at least two members");
        assert!(lambda >= 0.0, "lambda must be >= 0");
        assert_same_shape(&members);
        PenalizedEnsemble { members, lambda }
    }
}

impl RewardFn for PenalizedEnsemble {
    fn reward(&self, x: &[f64]) -> f64 {
        ensemble_reward(&self.members, x, self.lambda)
    }

    fn reward_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.members.len() as f64;
        let evals: Vec<(f64, Vec<f64>)> =
            self.members.iter().map(|m| m.reward_and_input_grad(x)).collect();
        let mean = evals.iter().map(|(r, _)| r).sum::<f64>() / n;
        let var = evals.iter().map(|(r, _)| (r - mean) * (r - mean)).sum::<f64>() / n;

        // d/dx [mean - lambda * var] = mean_i g_i - (2 lambda / n)
        //   * sum_i (r_i - mean) g_i.
        let d = x.len();
        let mut grad = vec![0.0; d];
        for (r, g) in &evals {
            let coeff = 1.0 / n - self.lambda * 2.0 / n * (r - mean);
            for (out, gi) in grad.iter_mut().zip(g.iter()) {
                *out += coeff * gi;
            }
        }
        (mean - self.lambda * var, grad)
    }
}
