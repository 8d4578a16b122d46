use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::numerics::{MlpParams, Rng};
use crate::world::{make_world, sample_responses, WorldConfig};

fn after(points: Vec<Vec<f64>>) -> LatentCloud {
    LatentCloud::new(points, CloudTag::AfterRlhf)
}

fn before(points: Vec<Vec<f64>>) -> LatentCloud {
    LatentCloud::new(points, CloudTag::BeforeRlhf)
}

fn params(eps: f64, min_samples: usize) -> DbscanParams {
    DbscanParams { eps, min_samples }
}

// ---- dbscan ----

/// Brute-force reference: core points by pairwise counting, clusters by
/// union-find over core pairs (ids ordered by smallest core index), border
/// points claimed by the lowest-id adjacent cluster. Matches the scan-order
/// semantics of the production implementation on every input.
fn reference_dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Vec<i64> {
    let n = points.len();
    let d = |i: usize, j: usize| {
        points[i]
            .iter()
            .zip(points[j].iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let core: Vec<bool> =
        (0..n).map(|i| (0..n).filter(|&j| d(i, j) <= eps).count() >= min_samples).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if core[i] && core[j] && d(i, j) <= eps {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }

    let mut ids: BTreeMap<usize, i64> = BTreeMap::new();
    let mut labels = vec![NOISE_LABEL; n];
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            let next = ids.len() as i64;
            labels[i] = *ids.entry(root).or_insert(next);
        }
    }
    for i in 0..n {
        if !core[i] {
            if let Some(best) =
                (0..n).filter(|&j| core[j] && d(i, j) <= eps).map(|j| labels[j]).min()
            {
                labels[i] = best;
            }
        }
    }
    labels
}

#[test]
fn identical_points_form_one_cluster() {
    let pts = vec![vec![3.0, -1.0]; 7];
    assert_eq!(dbscan(&pts, &params(0.5, 1)), vec![0; 7]);
}

#[test]
fn isolated_point_is_noise() {
    let pts = vec![vec![0.0, 0.0]];
    assert_eq!(dbscan(&pts, &params(0.5, 2)), vec![NOISE_LABEL]);
}

#[test]
fn two_distant_groups_form_two_clusters_without_noise() {
    let mut pts = Vec::new();
    for i in 0..5 {
        pts.push(vec![0.02 * i as f64, 0.0]);
    }
    for i in 0..5 {
        pts.push(vec![100.0 + 0.02 * i as f64, 0.0]);
    }
    let labels = dbscan(&pts, &params(0.5, 3));
    assert_eq!(labels[..5], [0; 5]);
    assert_eq!(labels[5..], [1; 5]);
    assert_eq!(labels, reference_dbscan(&pts, 0.5, 3));
}

#[test]
fn neighborhood_radius_is_inclusive() {
    // Exactly eps apart: each point has two neighbors (itself and the other).
    let pts = vec![vec![0.0], vec![0.5]];
    assert_eq!(dbscan(&pts, &params(0.5, 2)), vec![0, 0]);
}

fn random_blob_fixture(rng: &mut Rng) -> Vec<Vec<f64>> {
    let dim = 1 + (rng.next_u64() % 3) as usize;
    let n_blobs = 1 + (rng.next_u64() % 4) as usize;
    let n_points = 1 + (rng.next_u64() % 50) as usize;
    let centers: Vec<Vec<f64>> = (0..n_blobs)
        .map(|_| (0..dim).map(|_| 10.0 * (rng.next_f64() - 0.5)).collect())
        .collect();
    (0..n_points)
        .map(|_| {
            let c = &centers[(rng.next_u64() % n_blobs as u64) as usize];
            c.iter().map(|v| v + 0.3 * rng.next_standard_normal()).collect()
        })
        .collect()
}

#[test]
fn labels_match_the_brute_force_reference_on_random_fixtures() {
    let mut rng = Rng::new(100);
    for _ in 0..300 {
        let pts = random_blob_fixture(&mut rng);
        let eps = [0.3, 0.5, 1.0][(rng.next_u64() % 3) as usize];
        let min_samples = 1 + (rng.next_u64() % 6) as usize;
        let got = dbscan(&pts, &params(eps, min_samples));
        let want = reference_dbscan(&pts, eps, min_samples);
        assert_eq!(got, want, "eps {eps} min_samples {min_samples} points {pts:?}");
    }
}

#[test]
fn core_and_noise_sets_survive_input_permutation() {
    let mut rng = Rng::new(101);
    for _ in 0..30 {
        let pts = random_blob_fixture(&mut rng);
        let n = pts.len();
        let p = params(0.5, 3);
        let labels = dbscan(&pts, &p);

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let shuffled_labels = dbscan(&shuffled, &p);
        let mut unpermuted = vec![0i64; n];
        for (pos, &orig) in perm.iter().enumerate() {
            unpermuted[orig] = shuffled_labels[pos];
        }

        let noise = |ls: &[i64]| -> BTreeSet<usize> {
            ls.iter().enumerate().filter(|(_, &l)| l == NOISE_LABEL).map(|(i, _)| i).collect()
        };
        assert_eq!(noise(&labels), noise(&unpermuted));

        // Cluster membership partition must agree up to id renaming; border
        // attachment can legitimately move between adjacent clusters, so
        // only check points with an unambiguous home (cores and noise) via
        // the partition restricted to core points.
        let groups = |ls: &[i64]| -> BTreeSet<Vec<usize>> {
            let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (i, &l) in ls.iter().enumerate() {
                if l != NOISE_LABEL {
                    by_label.entry(l).or_default().push(i);
                }
            }
            by_label.into_values().collect()
        };
        // Blob fixtures keep clusters far apart relative to eps, so full
        // partitions (borders included) are comparable here.
        assert_eq!(groups(&labels), groups(&unpermuted));
    }
}

// ---- csi ----

#[test]
fn coincident_clouds_score_zero() {
    let point = vec![1.0, 2.0];
    let a = after(vec![point.clone(); 5]);
    let b = before(vec![point.clone(); 5]);
    let report = csi(&a, &b, &DbscanParams::default());
    assert_eq!(report.csi, 0.0);
    assert_eq!(report.labels, vec![0; 5]);
    assert_eq!(report.clusters.len(), 1);
    assert_eq!(report.clusters[0].size, 5);
}

#[test]
fn single_cluster_weights_distance_by_size() {
    let a = after(vec![vec![0.0, 0.0]; 3]);
    let b = before(vec![vec![2.0, 0.0], vec![10.0, 10.0]]);
    let report = csi(&a, &b, &params(0.5, 3));
    assert_eq!(report.csi, 6.0);
    assert_eq!(report.clusters[0].nearest_sft_distance, 2.0);
}

#[test]
fn two_clusters_sum_their_weighted_distances() {
    let a = after(vec![
        vec![0.0, 0.0],
        vec![0.25, 0.0],
        vec![8.0, 0.0],
        vec![8.25, 0.0],
        vec![8.5, 0.0],
    ]);
    let b = before(vec![vec![0.125, 1.0], vec![8.25, 4.0]]);
    let report = csi(&a, &b, &params(0.5, 2));
    assert_eq!(report.clusters.len(), 2);
    assert_eq!(report.clusters[0].size, 2);
    assert_eq!(report.clusters[0].nearest_sft_distance, 1.0);
    assert_eq!(report.clusters[1].size, 3);
    assert_eq!(report.clusters[1].nearest_sft_distance, 4.0);
    assert_eq!(report.csi, 14.0);
    let total: f64 = report.clusters.iter().map(|c| c.weighted).sum();
    assert!((report.csi - total).abs() < 1e-9);
}

#[test]
fn noise_points_form_a_pseudo_cluster_unless_excluded() {
    let blob = vec![
        vec![0.0, 0.0],
        vec![0.1, 0.0],
        vec![0.2, 0.0],
        vec![0.1, 0.1],
        vec![0.1, -0.1],
    ];
    let mut pts = blob;
    pts.push(vec![100.0, 0.0]);
    let a = after(pts);
    let b = before(vec![vec![0.1, 3.0]]);
    let p = DbscanParams::default();

    let report = csi(&a, &b, &p);
    assert_eq!(report.labels[5], NOISE_LABEL);
    assert_eq!(report.clusters.len(), 2);
    assert_eq!(report.clusters[0].id, NOISE_LABEL, "noise listed first");
    let noise_d = ((100.0f64 - 0.1).powi(2) + 9.0).sqrt();
    assert!((report.csi - (15.0 + noise_d)).abs() < 1e-9);
    let sizes: usize = report.clusters.iter().map(|c| c.size).sum();
    assert_eq!(sizes, a.len());

    let filtered = csi_with(&a, &b, &p, true);
    assert_eq!(filtered.clusters.len(), 1);
    assert!((filtered.csi - 15.0).abs() < 1e-9);
}

fn random_cloud_pair(rng: &mut Rng) -> (LatentCloud, LatentCloud) {
    // Well-separated blobs so cluster structure (and border attachment)
    // is unambiguous under permutation and rescaling.
    let centers = [
        vec![0.0, 0.0],
        vec![20.0, 0.0],
        vec![0.0, 20.0],
        vec![-20.0, -20.0],
    ];
    let cloud = |rng: &mut Rng, n_blobs: usize, per: usize| -> Vec<Vec<f64>> {
        (0..n_blobs)
            .flat_map(|b| {
                let c = centers[b].clone();
                (0..per)
                    .map(|_| {
                        c.iter().map(|v| v + 0.05 * rng.next_standard_normal()).collect()
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    (after(cloud(rng, 3, 6)), before(cloud(rng, 2, 4)))
}

#[test]
fn csi_is_invariant_to_point_order() {
    let mut rng = Rng::new(102);
    for _ in 0..20 {
        let (a, b) = random_cloud_pair(&mut rng);
        let p = params(0.5, 3);
        let base = csi(&a, &b, &p).csi;

        let shuffle = |rng: &mut Rng, cloud: &LatentCloud| {
            let mut pts = cloud.points.clone();
            for i in (1..pts.len()).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                pts.swap(i, j);
            }
            LatentCloud::new(pts, cloud.tag)
        };
        let got = csi(&shuffle(&mut rng, &a), &shuffle(&mut rng, &b), &p).csi;
        assert!((got - base).abs() < 1e-9, "{got} vs {base}");
    }
}

#[test]
fn csi_scales_exactly_with_the_coordinates() {
    let mut rng = Rng::new(103);
    for _ in 0..20 {
        let (a, b) = random_cloud_pair(&mut rng);
        let p = params(0.5, 3);
        let base = csi(&a, &b, &p).csi;

        let scaled = |cloud: &LatentCloud, c: f64| {
            LatentCloud::new(
                cloud.points.iter().map(|pt| pt.iter().map(|v| v * c).collect()).collect(),
                cloud.tag,
            )
        };
        for c in [2.0, 0.5] {
            let got = csi(&scaled(&a, c), &scaled(&b, c), &params(0.5 * c, 3)).csi;
            assert_eq!(got, base * c, "power-of-two rescaling is exact");
        }
        let got = csi(&scaled(&a, 3.0), &scaled(&b, 3.0), &params(1.5, 3)).csi;
        assert!((got - base * 3.0).abs() <= 1e-12 * base.max(1.0) * 3.0);
    }
}

#[test]
fn csi_ignores_a_common_translation() {
    let mut rng = Rng::new(104);
    for _ in 0..20 {
        let (a, b) = random_cloud_pair(&mut rng);
        let p = params(0.5, 3);
        let base = csi(&a, &b, &p).csi;

        let offset: Vec<f64> = (0..2).map(|_| 5.0 * rng.next_standard_normal()).collect();
        let moved = |cloud: &LatentCloud| {
            LatentCloud::new(
                cloud
                    .points
                    .iter()
                    .map(|pt| pt.iter().zip(offset.iter()).map(|(v, o)| v + o).collect())
                    .collect(),
                cloud.tag,
            )
        };
        let got = csi(&moved(&a), &moved(&b), &p).csi;
        assert!((got - base).abs() < 1e-9, "{got} vs {base}");
    }
}

#[test]
#[should_panic(expected = "dimension mismatch")]
fn mismatched_cloud_dimensions_are_rejected() {
    let a = after(vec![vec![0.0, 0.0]]);
    let b = before(vec![vec![0.0, 0.0, 0.0]]);
    csi(&a, &b, &DbscanParams::default());
}

// ---- standardization ----

#[test]
fn standardize_uses_before_cloud_statistics() {
    let b = before(vec![vec![0.0, 10.0], vec![2.0, 10.0]]);
    let a = after(vec![vec![1.0, 12.0]]);
    let (a_std, b_std) = standardize(&a, &b);
    // Before stats: mean (1, 10), population std (1, 0 -> floored to 1).
    assert_eq!(b_std.points, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    assert_eq!(a_std.points, vec![vec![0.0, 2.0]]);
    assert_eq!(a_std.tag, CloudTag::AfterRlhf);
    assert_eq!(b_std.tag, CloudTag::BeforeRlhf);
}

// ---- latent extraction ----

#[test]
fn zero_encoder_collapses_every_latent_to_the_origin() {
    let p = InfoRmParams::new(
        MlpParams::zeros(&[3, 4, 4]),
        MlpParams::zeros(&[2, 4, 1]),
        0.1,
        2,
    );
    let responses = vec![vec![1.0, -2.0, 0.5], vec![3.0, 3.0, 3.0]];
    let cloud = extract_latents(&p, &responses, CloudTag::BeforeRlhf);
    assert_eq!(cloud.points, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    assert_eq!(cloud.tag, CloudTag::BeforeRlhf);
}

#[test]
fn extraction_is_the_eval_mode_posterior_mean_in_input_order() {
    let mut rng = Rng::new(105);
    let p = InfoRmParams::random(4, 3, 0.1, &mut rng);
    let responses: Vec<Vec<f64>> = (0..10).map(|_| rng.sample_standard_normal(4)).collect();
    let cloud = extract_latents(&p, &responses, CloudTag::AfterRlhf);
    assert_eq!(cloud.len(), 10);
    assert_eq!(cloud.dim(), 3);
    for (x, point) in responses.iter().zip(cloud.points.iter()) {
        let (gaussian, latent) = inforem_encode(&p, x, EncodeMode::Eval);
        assert_eq!(*point, gaussian.mean);
        assert_eq!(*point, latent);
    }
}

#[test]
fn duplicate_responses_yield_duplicate_latents() {
    let mut rng = Rng::new(106);
    let p = InfoRmParams::random(4, 2, 0.1, &mut rng);
    let x = rng.sample_standard_normal(4);
    let cloud = extract_latents(&p, &[x.clone(), x], CloudTag::AfterRlhf);
    assert_eq!(cloud.points[0], cloud.points[1]);
}

// ---- early stopping ----

#[test]
fn steady_deltas_followed_by_a_spike_trigger_a_stop() {
    let mut state = EarlyStopState::default();
    for (i, c) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
        assert_eq!(early_stop_update(&mut state, *c), StopDecision::Continue, "obs {i}");
    }
    // Deltas so far [1, 1, 1]; jump of 50 gives a rate of 50 > 10.
    assert_eq!(early_stop_update(&mut state, 53.0), StopDecision::Stop);
    assert_eq!(state.stopped_at, Some(4));
}

#[test]
fn moderate_jumps_do_not_stop() {
    let mut state = EarlyStopState::default();
    for c in [0.0, 1.0, 2.0, 3.0] {
        early_stop_update(&mut state, c);
    }
    // Rate 5 <= 10.
    assert_eq!(early_stop_update(&mut state, 8.0), StopDecision::Continue);
    assert_eq!(state.stopped_at, None);
}

#[test]
fn constant_history_never_stops() {
    let mut state = EarlyStopState::default();
    for _ in 0..50 {
        assert_eq!(early_stop_update(&mut state, 7.5), StopDecision::Continue);
    }
    assert_eq!(state.stopped_at, None);
    assert!(state.deltas.iter().all(|d| *d == 0.0));
}

#[test]
fn the_first_two_observations_always_continue() {
    let mut state = EarlyStopState::default();
    assert_eq!(early_stop_update(&mut state, 0.0), StopDecision::Continue);
    // Even an enormous first jump has no baseline to compare against.
    assert_eq!(early_stop_update(&mut state, 1e9), StopDecision::Continue);
}

#[test]
fn flat_history_stops_only_on_an_absolute_jump() {
    let mut state = EarlyStopState::default();
    for _ in 0..4 {
        early_stop_update(&mut state, 5.0);
    }
    // Mean delta is 0; threshold becomes 1e-12 * eps_max = 1e-11.
    assert_eq!(early_stop_update(&mut state, 5.0 + 5e-12), StopDecision::Continue);
    assert_eq!(early_stop_update(&mut state, 5.0 + 3e-11), StopDecision::Stop);
}

#[test]
fn replaying_a_history_reproduces_the_stop_index() {
    let history = [1.0, 1.1, 1.2, 1.25, 1.3, 9.0, 9.1, 60.0];
    let run = || {
        let mut state = EarlyStopState::default();
        for c in history {
            early_stop_update(&mut state, c);
        }
        state
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.stopped_at, Some(5));
}

#[test]
fn stop_index_is_never_rewritten() {
    let mut state = EarlyStopState::default();
    for c in [0.0, 1.0, 2.0, 3.0, 53.0] {
        early_stop_update(&mut state, c);
    }
    assert_eq!(state.stopped_at, Some(4));
    // A later, even larger spike keeps reporting Stop but leaves the index.
    assert_eq!(early_stop_update(&mut state, 1e6), StopDecision::Stop);
    assert_eq!(state.stopped_at, Some(4));
}

// ---- monitor ----

fn pinned_run_config(steps: usize, seed: u64) -> RlConfig {
    // kl_coef large enough that the exact penalty flow returns the policy
    // to SFT after every step: the run is frozen in distribution.
    RlConfig { steps, kl_coef: 1e6, eval_interval: 10, seed, ..RlConfig::default() }
}

#[test]
fn frozen_policy_keeps_csi_flat_and_never_stops() {
    let world_cfg = WorldConfig::default();
    let (gold, sft) = make_world(&world_cfg);
    let mut rng = Rng::new(107);
    let rm = InfoRmParams::random(world_cfg.feature_dim, 8, 0.1, &mut rng);
    let sft_probe = sample_responses(&sft, 256, &mut rng);

    let cfg = pinned_run_config(500, 108);
    let (_, trace, monitor) = monitor_run(
        &sft,
        &gold,
        &gold,
        &sft,
        &cfg,
        &rm,
        &sft_probe,
        &DbscanParams::default(),
        10.0,
    )
    .unwrap();
    assert_eq!(trace.stopped_at, None);
    assert_eq!(trace.records.len(), 51);
    assert!(trace.records.iter().all(|r| r.csi.is_some_and(|c| c.is_finite() && c >= 0.0)));
    assert_eq!(monitor.state.stopped_at, None);
    assert_eq!(monitor.state.csi_history.len(), 51);
}

#[test]
fn an_injected_latent_jump_stops_at_that_eval() {
    let mut rng = Rng::new(101);
    let rm = InfoRmParams::random(6, 3, 0.1, &mut rng);
    let sft = crate::world::Policy::standard(6);
    let sft_probe = sample_responses(&sft, 128, &mut rng);
    let mut monitor = CsiMonitor::new(rm, &sft_probe, DbscanParams::default(), 10.0);

    for t in 0..30 {
        let probe = sample_responses(&sft, 128, &mut rng);
        let signal = monitor.observe(t, &probe);
        assert!(!signal.stop, "spurious stop at eval {t}");
    }
    let shifted: Vec<Vec<f64>> = sample_responses(&sft, 128, &mut rng)
        .into_iter()
        .map(|x| x.iter().map(|v| v + 50.0).collect())
        .collect();
    let signal = monitor.observe(30, &shifted);
    assert!(signal.stop);
    assert_eq!(monitor.state.stopped_at, Some(30));
}

#[test]
fn infinite_tolerance_disables_stopping_but_keeps_the_csi_column() {
    let mut rng = Rng::new(110);
    let rm = InfoRmParams::random(6, 3, 0.1, &mut rng);
    let sft = crate::world::Policy::standard(6);
    let sft_probe = sample_responses(&sft, 128, &mut rng);
    let mut monitor = CsiMonitor::new(rm, &sft_probe, DbscanParams::default(), f64::INFINITY);

    for t in 0..30 {
        let scale = if t >= 15 { 50.0 } else { 0.0 };
        let probe: Vec<Vec<f64>> = sample_responses(&sft, 128, &mut rng)
            .into_iter()
            .map(|x| x.iter().map(|v| v + scale).collect())
            .collect();
        let signal = monitor.observe(t, &probe);
        assert!(!signal.stop);
        assert!(signal.csi.is_some());
    }
    assert_eq!(monitor.state.stopped_at, None);
    assert_eq!(monitor.state.csi_history.len(), 30);
}

#[test]
fn monitored_runs_retrace_unmonitored_ones() {
    let world_cfg = WorldConfig::default();
    let (gold, sft) = make_world(&world_cfg);
    let mut rng = Rng::new(111);
    let rm = InfoRmParams::random(world_cfg.feature_dim, 8, 0.1, &mut rng);
    let sft_probe = sample_responses(&sft, 256, &mut rng);

    let cfg = RlConfig { steps: 80, eval_interval: 10, seed: 112, ..RlConfig::default() };
    let (bare_policy, bare_trace) =
        crate::world::optimize_policy(&sft, &gold, &gold, &sft, &cfg, None).unwrap();
    let (mon_policy, mon_trace, _) = monitor_run(
        &sft,
        &gold,
        &gold,
        &sft,
        &cfg,
        &rm,
        &sft_probe,
        &DbscanParams::default(),
        f64::INFINITY,
    )
    .unwrap();

    assert_eq!(bare_policy, mon_policy);
    assert_eq!(bare_trace.records.len(), mon_trace.records.len());
    for (a, b) in bare_trace.records.iter().zip(mon_trace.records.iter()) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.proxy_score, b.proxy_score);
        assert_eq!(a.gold_score, b.gold_score);
        assert_eq!(a.policy_kl, b.policy_kl);
        assert!(b.csi.is_some());
    }
}

