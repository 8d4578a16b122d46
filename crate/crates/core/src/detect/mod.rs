//! Drift detection in the bottleneck latent space.
//!
//! A bottlenecked reward model embeds responses into a low-dimensional
//! latent cloud. Overoptimized policies push their outputs away from the
//! region the pre-optimization (SFT) samples occupy, and that drift shows
//! up as clusters with no nearby pre-run neighbor. The cluster separation
//! index (CSI) quantifies it: cluster the after-run cloud, weight each
//! cluster's distance-to-nearest-SFT-point by its size, and sum.
//!
//! On top of CSI sits a change-rate early-stopping rule and a monitor
//! that hooks into the policy-optimization loop as an [`EvalObserver`].

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::reward::{inforem_encode, EncodeMode, InfoRmParams, RewardFn};
use crate::world::{
    optimize_policy, EvalObserver, GoldRm, ObserverSignal, Policy, RlConfig, RlError, RunTrace,
};

/// Label DBSCAN assigns to points that belong to no cluster.
pub const NOISE_LABEL: i64 = -1;

/// Which side of the optimization run a cloud was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudTag {
    BeforeRlhf,
    AfterRlhf,
}

/// A set of latent points with uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCloud {
    pub points: Vec<Vec<f64>>,
    pub tag: CloudTag,
}

impl LatentCloud {
    pub fn new(points: Vec<Vec<f64>>, tag: CloudTag) -> Self {
        assert!(!points.is_empty(), "latent cloud must be nonempty");
        let k = points[0].len();
        assert!(k >= 1, "latent points must have at least one coordinate");
        for p in &points {
            assert_eq!(p.len(), k, "latent dimension mismatch");
            assert!(p.iter().all(|v| v.is_finite()), "latent coordinates must be finite");
        }
        Self { points, tag }
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// DBSCAN settings; the metric is always Euclidean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_samples: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 0.5, min_samples: 5 }
    }
}

impl DbscanParams {
    fn validate(&self) {
        assert!(self.eps > 0.0 && self.eps.is_finite(), "eps must be a positive real");
        assert!(self.min_samples >= 1, "min_samples must be >= 1");
    }
}

/// Eval-mode posterior means of `responses` under the bottlenecked model;
/// order-preserving.
pub fn extract_latents(p: &InfoRmParams, responses: &[Vec<f64>], tag: CloudTag) -> LatentCloud {
    assert!(!responses.is_empty(), "no responses to embed");
    let points = responses
        .iter()
        .map(|x| {
            assert_eq!(x.len(), p.feature_dim(), "feature dimension mismatch");
            inforem_encode(p, x, EncodeMode::Eval).1
        })
        .collect();
    LatentCloud::new(points, tag)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    libm::sqrt(sum)
}

fn neighbors_of(points: &[Vec<f64>], i: usize, eps: f64) -> Vec<usize> {
    (0..points.len()).filter(|&j| euclidean(&points[i], &points[j]) <= eps).collect()
}

/// Classic DBSCAN with a fixed ascending scan order.
///
/// A point is core when at least `min_samples` points (itself included)
/// lie within `eps`. Clusters are the connected components of core points
/// under eps-reachability; border points take the label of the first
/// cluster whose expansion reaches them; everything else gets
/// [`NOISE_LABEL`].
pub fn dbscan(points: &[Vec<f64>], params: &DbscanParams) -> Vec<i64> {
    params.validate();
    assert!(!points.is_empty(), "dbscan needs at least one point");
    const UNCLASSIFIED: i64 = -2;
    let n = points.len();
    let mut labels = vec![UNCLASSIFIED; n];
    let mut next_cluster = 0i64;
    for i in 0..n {
        if labels[i] != UNCLASSIFIED {
            continue;
        }
        let seeds = neighbors_of(points, i, params.eps);
        if seeds.len() < params.min_samples {
            labels[i] = NOISE_LABEL;
            continue;
        }
        let id = next_cluster;
        next_cluster += 1;
        labels[i] = id;
        let mut queue: VecDeque<usize> = seeds.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE_LABEL {
                // Reachable but not core: border point, no further expansion.
                labels[j] = id;
                continue;
            }
            if labels[j] != UNCLASSIFIED {
                continue;
            }
            labels[j] = id;
            let reach = neighbors_of(points, j, params.eps);
            if reach.len() >= params.min_samples {
                queue.extend(reach);
            }
        }
    }
    labels
}

/// One cluster's contribution to the separation index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub id: i64,
    pub size: usize,
    pub centroid: Vec<f64>,
    /// Minimum Euclidean distance from the centroid to any before-cloud point.
    pub nearest_sft_distance: f64,
    /// `size * nearest_sft_distance`.
    pub weighted: f64,
}

/// Clustering of the after-cloud plus the size-weighted drift total.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiReport {
    pub labels: Vec<i64>,
    pub clusters: Vec<ClusterSummary>,
    pub csi: f64,
}

/// Cluster separation index of `after` against `before`.
///
/// Noise points form one pseudo-cluster with its own centroid and weight,
/// matching a loop over every label the clustering returns.
pub fn csi(after: &LatentCloud, before: &LatentCloud, params: &DbscanParams) -> CsiReport {
    csi_with(after, before, params, false)
}

/// [`csi`] with the option to drop the noise pseudo-cluster from the sum.
pub fn csi_with(
    after: &LatentCloud,
    before: &LatentCloud,
    params: &DbscanParams,
    exclude_noise: bool,
) -> CsiReport {
    assert_eq!(after.dim(), before.dim(), "cloud dimension mismatch");
    let labels = dbscan(&after.points, params);
    let mut ids: Vec<i64> = labels.clone();
    ids.sort_unstable();
    ids.dedup();

    let k = after.dim();
    let mut clusters = Vec::new();
    let mut total = 0.0;
    for id in ids {
        if exclude_noise && id == NOISE_LABEL {
            continue;
        }
        let members: Vec<&Vec<f64>> = labels
            .iter()
            .zip(after.points.iter())
            .filter(|(&l, _)| l == id)
            .map(|(_, p)| p)
            .collect();
        let mut centroid = vec![0.0; k];
        for m in &members {
            for (c, v) in centroid.iter_mut().zip(m.iter()) {
                *c += v;
            }
        }
        for c in centroid.iter_mut() {
            *c /= members.len() as f64;
        }
        let distance = before
            .points
            .iter()
            .map(|p| euclidean(p, &centroid))
            .fold(f64::INFINITY, f64::min);
        let weighted = members.len() as f64 * distance;
        total += weighted;
        clusters.push(ClusterSummary {
            id,
            size: members.len(),
            centroid,
            nearest_sft_distance: distance,
            weighted,
        });
    }
    CsiReport { labels, clusters, csi: total }
}

fn cloud_stats(cloud: &LatentCloud) -> (Vec<f64>, Vec<f64>) {
    let k = cloud.dim();
    let n = cloud.len() as f64;
    let mut mean = vec![0.0; k];
    for p in &cloud.points {
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut std = vec![0.0; k];
    for p in &cloud.points {
        for (s, (v, m)) in std.iter_mut().zip(p.iter().zip(mean.iter())) {
            *s += (v - m) * (v - m);
        }
    }
    for s in std.iter_mut() {
        *s = libm::sqrt(*s / n);
        // A dimension the before-cloud doesn't vary in is left unscaled.
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mean, std)
}

fn apply_standardization(cloud: &LatentCloud, shift: &[f64], scale: &[f64]) -> LatentCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| p.iter().zip(shift.iter().zip(scale.iter())).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    LatentCloud::new(points, cloud.tag)
}

/// Per-dimension z-scores both clouds using the before-cloud's mean and
/// (population) standard deviation, so a fixed `eps` stays meaningful
/// across differently scaled latent spaces.
pub fn standardize(after: &LatentCloud, before: &LatentCloud) -> (LatentCloud, LatentCloud) {
    assert_eq!(after.dim(), before.dim(), "cloud dimension mismatch");
    let (shift, scale) = cloud_stats(before);
    (apply_standardization(after, &shift, &scale), apply_standardization(before, &shift, &scale))
}

/// Fold state for the CSI change-rate stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    /// Maximum tolerable ratio of the newest jump to the mean of earlier ones.
    pub eps_max: f64,
    pub csi_history: Vec<f64>,
    /// `deltas[t-1] = |csi_history[t] - csi_history[t-1]|`.
    pub deltas: Vec<f64>,
    /// Index into `csi_history` where the rule first fired; never rewritten.
    pub stopped_at: Option<usize>,
}

impl EarlyStopState {
    pub fn new(eps_max: f64) -> Self {
        assert!(eps_max > 0.0, "eps_max must be positive");
        Self { eps_max, csi_history: Vec::new(), deltas: Vec::new(), stopped_at: None }
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new(10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Absorbs the next CSI observation and decides whether to halt.
///
/// The t-th jump is compared against the mean of all earlier jumps; the
/// first observation sets the baseline and the second has no jump history
/// to compare against, so both always continue. A flat history (mean jump
/// below 1e-12) only stops on an absolute jump above `1e-12 * eps_max`,
/// keeping the rule total without dividing by zero.
pub fn early_stop_update(state: &mut EarlyStopState, c_t: f64) -> StopDecision {
    assert!(c_t.is_finite(), "CSI observation must be finite");
    state.csi_history.push(c_t);
    let t = state.csi_history.len() - 1;
    if t == 0 {
        return StopDecision::Continue;
    }
    let delta = libm::fabs(c_t - state.csi_history[t - 1]);
    state.deltas.push(delta);
    if t == 1 {
        return StopDecision::Continue;
    }
    let prior = &state.deltas[..t - 1];
    let mean = prior.iter().sum::<f64>() / prior.len() as f64;
    let trip = if mean < 1e-12 { delta > 1e-12 * state.eps_max } else { delta / mean > state.eps_max };
    if trip {
        if state.stopped_at.is_none() {
            state.stopped_at = Some(t);
        }
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Watches a policy-optimization run through the latent space of a
/// bottlenecked reward model.
///
/// The pre-run cloud is embedded once at construction and its statistics
/// frozen; every probe is standardized against them before CSI is
/// computed, so the monitor never consumes the run's own randomness and a
/// monitored run retraces an unmonitored one exactly until it stops.
pub struct CsiMonitor {
    rm: InfoRmParams,
    dbscan: DbscanParams,
    shift: Vec<f64>,
    scale: Vec<f64>,
    before: LatentCloud,
    pub state: EarlyStopState,
}

impl CsiMonitor {
    pub fn new(
        rm: InfoRmParams,
        sft_responses: &[Vec<f64>],
        dbscan: DbscanParams,
        eps_max: f64,
    ) -> Self {
        dbscan.validate();
        let raw = extract_latents(&rm, sft_responses, CloudTag::BeforeRlhf);
        let (shift, scale) = cloud_stats(&raw);
        let before = apply_standardization(&raw, &shift, &scale);
        Self { rm, dbscan, shift, scale, before, state: EarlyStopState::new(eps_max) }
    }

    /// CSI of a probe against the frozen pre-run cloud, in the pre-run
    /// cloud's standardized coordinates.
    pub fn measure(&self, probe: &[Vec<f64>]) -> CsiReport {
        let raw = extract_latents(&self.rm, probe, CloudTag::AfterRlhf);
        let after = apply_standardization(&raw, &self.shift, &self.scale);
        csi(&after, &self.before, &self.dbscan)
    }
}

impl EvalObserver for CsiMonitor {
    fn observe(&mut self, _step: usize, probe: &[Vec<f64>]) -> ObserverSignal {
        let report = self.measure(probe);
        let decision = early_stop_update(&mut self.state, report.csi);
        ObserverSignal { csi: Some(report.csi), stop: decision == StopDecision::Stop }
    }
}

/// Policy optimization with a drift monitor attached.
///
/// `sft_responses` seed the frozen pre-run cloud. The run halts at the
/// first eval whose CSI jump trips the change-rate rule; the returned
/// monitor carries the full CSI history and stop index.
#[allow(clippy::too_many_arguments)]
pub fn monitor_run(
    initial: &Policy,
    proxy: &dyn RewardFn,
    gold: &GoldRm,
    sft: &Policy,
    cfg: &RlConfig,
    rm: &InfoRmParams,
    sft_responses: &[Vec<f64>],
    dbscan: &DbscanParams,
    eps_max: f64,
) -> Result<(Policy, RunTrace, CsiMonitor), RlError> {
    let mut monitor = CsiMonitor::new(rm.clone(), sft_responses, *dbscan, eps_max);
    let (policy, trace) = optimize_policy(initial, proxy, gold, sft, cfg, Some(&mut monitor))?;
    Ok((policy, trace, monitor))
}

#[cfg(test)]
mod tests;
