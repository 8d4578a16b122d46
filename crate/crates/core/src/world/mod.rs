//! Synthetic preference world: a fixed linear gold scorer over feature
//! vectors, a diagonal-Gaussian response policy, noisy pairwise labeling
//! with a deliberately planted spurious correlation, and a policy-gradient
//! loop that optimizes a learned proxy reward while the gold reward is
//! audited on the side.
//!
//! The feature space stands in for response text: the first
//! `relevant_dims` coordinates carry genuine quality (the gold scorer
//! weights them), the rest are noise a reward model could latch onto. The
//! labeling step can inflate one designated spurious coordinate on the
//! gold-preferred response, planting a correlation that only generalizes
//! in the training distribution.

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::Rng;
use crate::reward::{PreferencePair, RewardFn};

/// Ground-truth preference scorer: a fixed linear functional, zero on
/// spurious dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldRm {
    pub weights: Vec<f64>,
    /// True where the gold scorer carries weight.
    pub relevant_mask: Vec<bool>,
    pub seed: u64,
}

impl GoldRm {
    pub fn new(weights: Vec<f64>, relevant_mask: Vec<bool>, seed: u64) -> Self {
        assert_eq!(weights.len(), relevant_mask.len(), "mask must cover every dimension");
        assert!(relevant_mask.iter().any(|&m| m), "at least one relevant dimension required");
        for (w, &m) in weights.iter().zip(relevant_mask.iter()) {
            assert!(w.is_finite());
            assert!(m || *w == 0.0, "weights must be exactly zero on spurious dimensions");
        }
        GoldRm { weights, relevant_mask, seed }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "input dimension mismatch");
        self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum()
    }

    /// First spurious dimension — the one the labeler inflates.
    /// `None` when every dimension is relevant.
    pub fn spurious_dim(&self) -> Option<usize> {
        self.relevant_mask.iter().position(|&m| !m)
    }
}

impl RewardFn for GoldRm {
    fn reward(&self, x: &[f64]) -> f64 {
        self.score(x)
    }

    fn reward_and_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.score(x), self.weights.clone())
    }
}

/// Diagonal-Gaussian distribution over feature vectors; doubles as the
/// frozen SFT reference and the policy being optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub mean: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl Policy {
    pub fn new(mean: Vec<f64>, log_scale: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_scale.len(), "mean and log_scale must share a dimension");
        assert!(!mean.is_empty(), "policy must have dimension >= 1");
        assert!(mean.iter().chain(log_scale.iter()).all(|v| v.is_finite()));
        Policy { mean, log_scale }
    }

    /// Standard policy: zero mean, unit scales.
    pub fn standard(dim: usize) -> Self {
        Policy::new(vec![0.0; dim], vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn scale(&self, d: usize) -> f64 {
        libm::exp(self.log_scale[d])
    }
}

/// World-generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    /// Feature dimension D.
    pub feature_dim: usize,
    /// The first `relevant_dims` coordinates carry gold weight; the rest
    /// are spurious.
    pub relevant_dims: usize,
    pub n_pairs: usize,
    /// Fraction of pairs whose label is flipped after gold ranking.
    pub noise_frac: f64,
    /// Probability that a pair gets the spurious-coordinate inflation.
    pub spurious_corr: f64,
    /// Margin added on the spurious coordinate when inflating.
    pub spurious_offset: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            feature_dim: 16,
            relevant_dims: 12,
            n_pairs: 2000,
            noise_frac: 0.25,
            spurious_corr: 0.9,
            spurious_offset: 1.0,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) {
        assert!(self.feature_dim >= 2, "feature_dim must be >= 2");
        assert!(
            self.relevant_dims >= 1 && self.relevant_dims <= self.feature_dim,
            "relevant_dims must be in 1..=feature_dim"
        );
        assert!((0.0..=1.0).contains(&self.noise_frac), "noise_frac must be in [0, 1]");
        assert!((0.0..=1.0).contains(&self.spurious_corr), "spurious_corr must be in [0, 1]");
        assert!(
            self.spurious_offset > 0.0 && self.spurious_offset.is_finite(),
            "spurious_offset must be positive"
        );
    }
}

/// Deterministically build the gold scorer (unit-norm weights on the
/// relevant dimensions) and the SFT reference policy (standard Gaussian).
pub fn make_world(cfg: &WorldConfig) -> (GoldRm, Policy) {
    cfg.validate();
    let mut rng = Rng::new(cfg.seed).derive(0);
    let mut weights = vec![0.0; cfg.feature_dim];
    for w in weights[..cfg.relevant_dims].iter_mut() {
        *w = rng.next_standard_normal();
    }
    let norm = libm::sqrt(weights.iter().map(|w| w * w).sum::<f64>());
    assert!(norm > 1e-12, "degenerate gold weight draw");
    for w in weights.iter_mut() {
        *w /= norm;
    }
    let mask: Vec<bool> = (0..cfg.feature_dim).map(|i| i < cfg.relevant_dims).collect();
    (GoldRm::new(weights, mask, cfg.seed), Policy::standard(cfg.feature_dim))
}

/// `n` independent draws from the policy.
pub fn sample_responses(policy: &Policy, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    assert!(n >= 1, "need at least one sample");
    (0..n)
        .map(|_| {
            (0..policy.dim())
                .map(|d| policy.mean[d] + policy.scale(d) * rng.next_standard_normal())
                .collect()
        })
        .collect()
}

/// Labeling knobs; see [`WorldConfig`] for field meanings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelOptions {
    pub noise_frac: f64,
    pub spurious_corr: f64,
    pub spurious_offset: f64,
}

impl LabelOptions {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        LabelOptions {
            noise_frac: cfg.noise_frac,
            spurious_corr: cfg.spurious_corr,
            spurious_offset: cfg.spurious_offset,
        }
    }
}

/// Labeled dataset plus labeling statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairs {
    pub pairs: Vec<PreferencePair>,
    pub n_flipped: usize,
    /// Exact gold-score ties, resolved lexicographically.
    pub n_ties: usize,
}

/// Rank consecutive response pairs with the gold scorer, optionally inflate
/// the designated spurious coordinate of the gold-chosen response, then
/// flip a random fraction of labels.
///
/// The inflation happens before the flip: it tracks the *gold* choice, the
/// way a real-world confound tracks true preference, so flipped pairs end
/// up with the inflation on the rejected side.
pub fn label_pairs(
    gold: &GoldRm,
    responses: &[Vec<f64>],
    opts: &LabelOptions,
    rng: &mut Rng,
) -> LabeledPairs {
    assert!(responses.len().is_multiple_of(2), "responses must come in pairs");
    assert!((0.0..=1.0).contains(&opts.noise_frac));
    assert!((0.0..=1.0).contains(&opts.spurious_corr));
    if opts.spurious_corr > 0.0 {
        assert!(
            gold.spurious_dim().is_some(),
            "spurious injection requires at least one spurious dimension"
        );
    }

    let mut out = LabeledPairs { pairs: Vec::with_capacity(responses.len() / 2), n_flipped: 0, n_ties: 0 };
    for pair in responses.chunks_exact(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (sa, sb) = (gold.score(a), gold.score(b));
        let (mut chosen, mut rejected) = if sa > sb {
            (a.clone(), b.clone())
        } else if sb > sa {
            (b.clone(), a.clone())
        } else {
            out.n_ties += 1;
            // Exact tie: lexicographically greater vector wins.
            if a.as_slice() > b.as_slice() {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            }
        };

        // Fixed draw order per pair keeps the stream layout independent of
        // the parameter values.
        let u_spurious = rng.next_f64();
        let u_flip = rng.next_f64();

        if u_spurious < opts.spurious_corr {
            let sd = gold.spurious_dim().expect("checked above");
            chosen[sd] = chosen[sd].max(rejected[sd]) + opts.spurious_offset;
        }

        let mut flipped = false;
        if u_flip < opts.noise_frac {
            core::mem::swap(&mut chosen, &mut rejected);
            flipped = true;
            out.n_flipped += 1;
        }

        out.pairs.push(PreferencePair { chosen, rejected, flipped });
    }
    out
}

/// Closed-form KL divergence between diagonal Gaussian policies,
/// `KL(p ‖ q) = Σ_d [ln(σq/σp) + (σp² + (μp−μq)²) / (2σq²) − ½]`.
pub fn policy_kl(p: &Policy, q: &Policy) -> f64 {
    assert_eq!(p.dim(), q.dim(), "policies must share a dimension");
    let mut acc = 0.0;
    for d in 0..p.dim() {
        let (sp, sq) = (p.scale(d), q.scale(d));
        let dm = p.mean[d] - q.mean[d];
        acc += q.log_scale[d] - p.log_scale[d] + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
    }
    acc
}

/// One audited point on the optimization trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean proxy reward over the eval probe.
    pub proxy_score: f64,
    /// Mean gold reward over the same probe.
    pub gold_score: f64,
    /// KL(policy ‖ sft), closed form.
    pub policy_kl: f64,
    /// Drift indicator, present when a monitor observed the run.
    pub csi: Option<f64>,
}

/// Trajectory of eval records; `stopped_at` is the step where a monitor
/// halted the run, if it did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub records: Vec<EvalRecord>,
    pub stopped_at: Option<usize>,
}

/// What a monitor reports back at an eval point.
pub struct ObserverSignal {
    pub csi: Option<f64>,
    pub stop: bool,
}

/// Hook called at every eval point with the probe samples already drawn
/// for scoring. Implementations must not consume the run's own randomness,
/// so a monitored run retraces an unmonitored one exactly until it stops.
pub trait EvalObserver {
    fn observe(&mut self, step: usize, probe: &[Vec<f64>]) -> ObserverSignal;
}

/// Policy-optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RlConfig {
    pub steps: usize,
    pub kl_coef: f64,
    pub learning_rate: f64,
    /// Fresh policy samples per gradient step.
    pub batch_size: usize,
    /// Steps between eval records.
    pub eval_interval: usize,
    /// Probe samples per eval.
    pub probe_size: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            steps: 500,
            kl_coef: 0.0,
            learning_rate: 5e-2,
            batch_size: 64,
            eval_interval: 10,
            probe_size: 256,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) {
        assert!(self.steps >= 1, "steps must be >= 1");
        assert!(self.kl_coef >= 0.0 && self.kl_coef.is_finite(), "kl_coef must be >= 0");
        assert!(self.learning_rate > 0.0 && self.learning_rate.is_finite());
        assert!(self.batch_size >= 1, "batch_size must be >= 1");
        assert!(self.eval_interval >= 1, "eval_interval must be >= 1");
        assert!(self.probe_size >= 1, "probe_size must be >= 1");
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RlError {
    /// Objective or parameters became non-finite at this step.
    NonFinite { step: usize },
}

impl core::fmt::Display for RlError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RlError::NonFinite { step } => {
                write!(f, "objective became non-finite at step {step}")
            }
        }
    }
}

/// Ascend `E_{x~policy}[proxy(x)] − kl_coef · KL(policy ‖ sft)` on the
/// policy's mean and log-scale.
///
/// The expectation gradient is the reparameterized Monte-Carlo estimate
/// over `batch_size` fresh samples. The KL penalty is applied as the exact
/// flow of its continuous-time gradient dynamics over one learning-rate
/// unit of time (the means decay exponentially toward the reference, the
/// variance ratio follows its logistic closed form). Splitting the update
/// this way keeps any `kl_coef` — including the 1e6 pin-to-reference
/// regime — unconditionally stable, where an explicit Euler step would
/// need `lr·kl_coef < 2`.
///
/// Evals land at step 0, every `eval_interval` steps, and the final step.
/// An observer sees each eval's probe and may stop the run; it must not
/// draw from the run's RNG streams.
pub fn optimize_policy(
    initial: &Policy,
    proxy: &dyn RewardFn,
    gold: &GoldRm,
    sft: &Policy,
    cfg: &RlConfig,
    mut observer: Option<&mut dyn EvalObserver>,
) -> Result<(Policy, RunTrace), RlError> {
    cfg.validate();
    let d = initial.dim();
    assert_eq!(sft.dim(), d, "sft dimension mismatch");
    assert_eq!(gold.dim(), d, "gold dimension mismatch");

    let root = Rng::new(cfg.seed);
    let mut step_rng = root.derive(20);
    let mut eval_rng = root.derive(21);

    let mut policy = initial.clone();
    let mut trace = RunTrace::default();

    let mut run_eval = |step: usize,
                        policy: &Policy,
                        eval_rng: &mut Rng,
                        observer: &mut Option<&mut dyn EvalObserver>|
     -> Result<bool, RlError> {
        let probe = sample_responses(policy, cfg.probe_size, eval_rng);
        let n = probe.len() as f64;
        let proxy_score = probe.iter().map(|x| proxy.reward(x)).sum::<f64>() / n;
        let gold_score = probe.iter().map(|x| gold.score(x)).sum::<f64>() / n;
        let kl = policy_kl(policy, sft);
        if !(proxy_score.is_finite() && gold_score.is_finite() && kl.is_finite()) {
            return Err(RlError::NonFinite { step });
        }
        let (csi, stop) = match observer {
            Some(obs) => {
                let signal = obs.observe(step, &probe);
                (signal.csi, signal.stop)
            }
            None => (None, false),
        };
        trace.records.push(EvalRecord { step, proxy_score, gold_score, policy_kl: kl, csi });
        Ok(stop)
    };

    if run_eval(0, &policy, &mut eval_rng, &mut observer)? {
        trace.stopped_at = Some(0);
        return Ok((policy, trace));
    }

    for step in 1..=cfg.steps {
        let mut grad_mean = vec![0.0; d];
        let mut grad_log_scale = vec![0.0; d];
        for _ in 0..cfg.batch_size {
            let z = step_rng.sample_standard_normal(d);
            let x: Vec<f64> =
                (0..d).map(|i| policy.mean[i] + policy.scale(i) * z[i]).collect();
            let (_, gx) = proxy.reward_and_input_grad(&x);
            for i in 0..d {
                grad_mean[i] += gx[i];
                grad_log_scale[i] += gx[i] * policy.scale(i) * z[i];
            }
        }
        let inv_m = 1.0 / cfg.batch_size as f64;
        for i in 0..d {
            policy.mean[i] += cfg.learning_rate * grad_mean[i] * inv_m;
            policy.log_scale[i] += cfg.learning_rate * grad_log_scale[i] * inv_m;
        }

        if cfg.kl_coef > 0.0 {
            // Exact gradient flow of kl_coef * KL(policy ‖ sft) for time
            // `learning_rate`, per dimension:
            //   mean:   mu <- muq + (mu - muq) * exp(-k t / sigma_q^2)
            //   scales: w = sigma_p^2/sigma_q^2 follows dw/dt = 2k w (1-w),
            //           so w <- 1 / (1 + (1/w - 1) exp(-2k t)).
            let t = cfg.learning_rate;
            let e2 = libm::exp(-2.0 * cfg.kl_coef * t);
            for i in 0..d {
                let sq = sft.scale(i);
                let decay = libm::exp(-cfg.kl_coef * t / (sq * sq));
                policy.mean[i] = sft.mean[i] + (policy.mean[i] - sft.mean[i]) * decay;
                // 1/w in log space to dodge overflow for extreme scales.
                let inv_w = libm::exp(2.0 * (sft.log_scale[i] - policy.log_scale[i]).clamp(-350.0, 350.0));
                let w_new = 1.0 / (1.0 + (inv_w - 1.0) * e2);
                policy.log_scale[i] = sft.log_scale[i] + 0.5 * libm::log(w_new);
            }
        }

        if policy.mean.iter().chain(policy.log_scale.iter()).any(|v| !v.is_finite()) {
            return Err(RlError::NonFinite { step });
        }

        if (step % cfg.eval_interval == 0 || step == cfg.steps)
            && run_eval(step, &policy, &mut eval_rng, &mut observer)?
        {
            trace.stopped_at = Some(step);
            break;
        }
    }

    Ok((policy, trace))
}

/// Trajectory classification over the final `window` eval records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Proxy still rising, gold falling, and gold peaked before the window.
    Hacked,
    /// Gold not falling over the window.
    Clean,
    Inconclusive,
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let cov = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
    let var = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum::<f64>();
    assert!(var > 0.0, "slope needs at least two distinct steps");
    cov / var
}

/// Classify a finished trace. Needs at least `2 * window` eval records so
/// the window is compared against genuine history.
pub fn hacking_verdict(trace: &RunTrace, window: usize) -> Verdict {
    assert!(window >= 2, "window must be >= 2");
    let n = trace.records.len();
    assert!(n >= 2 * window, "trace too short for a verdict: {n} records, window {window}");

    let tail = &trace.records[n - window..];
    let proxy_slope =
        least_squares_slope(&tail.iter().map(|r| (r.step as f64, r.proxy_score)).collect::<Vec<_>>());
    let gold_slope =
        least_squares_slope(&tail.iter().map(|r| (r.step as f64, r.gold_score)).collect::<Vec<_>>());

    // First index attaining the gold maximum.
    let peak = trace
        .records
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| {
            a.gold_score.partial_cmp(&b.gold_score).expect("finite scores").then(j.cmp(i))
        })
        .map(|(i, _)| i)
        .expect("nonempty trace");

    if proxy_slope > 0.0 && gold_slope < 0.0 && peak < n - window {
        Verdict::Hacked
    } else if gold_slope >= 0.0 {
        Verdict::Clean
    } else {
        Verdict::Inconclusive
    }
}
