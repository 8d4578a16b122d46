//! The five subcommands.
//!
//! Seed-scoped commands (gen-world, train-rm, run-rl) loop over the seed
//! list and work inside `<out>/seed-N/`. Seed `s` seeds everything for
//! that run; substreams keep the consumers independent: world generation
//! uses stream 0, dataset sampling 10, labeling 11, training 0–2, policy
//! optimization 20–21, and the monitor's pre-run cloud 30–31.

use std::path::{Path, PathBuf};

use serde::Serialize;

use hackwatch_core::detect::{
    csi_with, extract_latents, monitor_run, standardize, CloudTag, DbscanParams, LatentCloud,
};
use hackwatch_core::numerics::{pca_project, Rng};
use hackwatch_core::reward::{rm_accuracy, train_rm, RmKind, RmParams};
use hackwatch_core::world::{
    hacking_verdict, label_pairs, make_world, optimize_policy, sample_responses, LabelOptions,
    RunTrace, Verdict,
};

use crate::config::ExperimentConfig;
use crate::formats::{self, fmt_f64, to_json, RunMeta};
use crate::{CliError, Outcome};

pub struct Ctx {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub out_root: PathBuf,
}

impl Ctx {
    fn seed_dir(&self, seed: u64) -> Result<PathBuf, CliError> {
        let dir = self.out_root.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn ensure_out_root(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_root)
            .map_err(|e| CliError::Data(format!("{}: {e}", self.out_root.display())))
    }
}

/// Relative paths are tried against the working directory first, then the
/// seed directory — so `--rm rm.json` picks each seed's own checkpoint in
/// a multi-seed run.
fn resolve(path: &Path, seed_dir: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        path.to_path_buf()
    } else {
        seed_dir.join(path)
    }
}

// ---- gen-world ----

pub fn gen_world(ctx: &Ctx) -> Result<Outcome, CliError> {
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed)?;
        let world_cfg = ctx.config.world.to_core(seed);
        let (gold, sft) = make_world(&world_cfg);
        let base = Rng::new(seed);
        let mut sample_rng = base.derive(10);
        let mut label_rng = base.derive(11);
        let responses = sample_responses(&sft, 2 * world_cfg.n_pairs, &mut sample_rng);
        let labeled = label_pairs(
            &gold,
            &responses,
            &LabelOptions::from_config(&world_cfg),
            &mut label_rng,
        );
        formats::write_file(&dir.join("world.json"), &formats::world_to_json(&gold, &sft))?;
        formats::write_file(&dir.join("pairs.jsonl"), &formats::pairs_to_jsonl(&labeled.pairs))?;
        let frac = labeled.n_flipped as f64 / labeled.pairs.len() as f64;
        println!("seed {seed}: {} pairs, flipped fraction {frac:?}", labeled.pairs.len());
    }
    Ok(Outcome::Done)
}

// ---- train-rm ----

pub fn train(
    ctx: &Ctx,
    kind: RmKind,
    data: Option<&Path>,
    rm_out: &str,
    curve_out: &str,
) -> Result<Outcome, CliError> {
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed)?;
        let pairs_path = match data {
            Some(p) => resolve(p, &dir),
            None => dir.join("pairs.jsonl"),
        };
        let pairs = formats::pairs_from_jsonl(&pairs_path)?;
        let cfg = ctx.config.train.to_core(seed)?;
        let (params, curve) = train_rm(kind, &pairs, &cfg)
            .map_err(|e| CliError::Data(format!("seed {seed}: {e}")))?;
        formats::save_checkpoint(&dir.join(rm_out), &params)?;
        formats::write_file(&dir.join(curve_out), &formats::curve_to_csv(&curve))?;
        let acc = rm_accuracy(&params, &pairs);
        println!("seed {seed}: {} steps, training-set accuracy {acc:?}", curve.len());
    }
    Ok(Outcome::Done)
}

// ---- run-rl ----

#[allow(clippy::too_many_arguments)]
pub fn run_rl(
    ctx: &Ctx,
    rm_path: &Path,
    monitor: bool,
    monitor_rm: Option<&Path>,
    trace_out: &str,
    meta_out: &str,
    dump_clouds: bool,
) -> Result<Outcome, CliError> {
    let want_monitor = monitor || monitor_rm.is_some();
    if dump_clouds && !want_monitor {
        return Err(CliError::Usage(
            "--dump-clouds needs a latent space to embed into; pass --monitor or --monitor-rm"
                .into(),
        ));
    }
    let mut any_stopped = false;
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed)?;
        let (gold, sft) = formats::world_from_json(&dir.join("world.json"))?;
        let proxy = formats::load_checkpoint(&resolve(rm_path, &dir))?;
        if proxy.feature_dim() != sft.dim() {
            return Err(CliError::Data(format!(
                "seed {seed}: checkpoint expects dimension {}, world has {}",
                proxy.feature_dim(),
                sft.dim()
            )));
        }
        let cfg = ctx.config.rl.to_core(seed)?;

        let trace: RunTrace;
        let mut watcher = None;
        if want_monitor {
            let watch_params = match monitor_rm {
                Some(p) => formats::load_checkpoint(&resolve(p, &dir))?,
                None => proxy.clone(),
            };
            let RmParams::InfoRm(watch) = watch_params else {
                return Err(CliError::Usage(
                    "monitoring runs in a bottlenecked model's latent space, and this \
                     checkpoint is a standard scorer; train an inforem model and pass it \
                     with --monitor-rm"
                        .into(),
                ));
            };
            if watch.feature_dim() != sft.dim() {
                return Err(CliError::Data(format!(
                    "seed {seed}: monitor checkpoint expects dimension {}, world has {}",
                    watch.feature_dim(),
                    sft.dim()
                )));
            }
            let mut probe_rng = Rng::new(seed).derive(30);
            let sft_probe = sample_responses(&sft, cfg.probe_size, &mut probe_rng);
            let (policy, t, _monitor) = monitor_run(
                &sft,
                &proxy,
                &gold,
                &sft,
                &cfg,
                &watch,
                &sft_probe,
                &ctx.config.detect.dbscan(),
                ctx.config.detect.eps_max,
            )
            .map_err(|e| CliError::Data(format!("seed {seed}: {e}")))?;
            trace = t;
            if dump_clouds {
                let mut final_rng = Rng::new(seed).derive(31);
                let final_probe = sample_responses(&policy, cfg.probe_size, &mut final_rng);
                let before = extract_latents(&watch, &sft_probe, CloudTag::BeforeRlhf);
                let after = extract_latents(&watch, &final_probe, CloudTag::AfterRlhf);
                let mut dump = formats::cloud_to_jsonl(&before.points, "before");
                dump.push_str(&formats::cloud_to_jsonl(&after.points, "after"));
                formats::write_file(&dir.join("clouds.jsonl"), &dump)?;
            }
            watcher = Some(watch);
        } else {
            let (_, t) = optimize_policy(&sft, &proxy, &gold, &sft, &cfg, None)
                .map_err(|e| CliError::Data(format!("seed {seed}: {e}")))?;
            trace = t;
        }
        let _ = watcher;

        formats::write_file(&dir.join(trace_out), &formats::trace_to_csv(&trace))?;
        let meta = to_json(&RunMeta { stopped_at: trace.stopped_at }) + "\n";
        formats::write_file(&dir.join(meta_out), &meta)?;

        let last = trace.records.last().expect("a run records at least step 0");
        match trace.stopped_at {
            Some(step) => {
                any_stopped = true;
                println!(
                    "seed {seed}: stopped early at step {step} (proxy {:?}, gold {:?})",
                    last.proxy_score, last.gold_score
                );
            }
            None => println!(
                "seed {seed}: ran {} steps, final proxy {:?}, gold {:?}",
                last.step, last.proxy_score, last.gold_score
            ),
        }
    }
    Ok(if any_stopped { Outcome::EarlyStopped } else { Outcome::Done })
}

// ---- detect ----

#[derive(Serialize)]
struct DetectClusterOut {
    id: i64,
    size: usize,
    distance: f64,
    weighted: f64,
}

#[derive(Serialize)]
struct DetectParamsOut {
    eps: f64,
    min_samples: usize,
    exclude_noise: bool,
    standardize: bool,
}

#[derive(Serialize)]
struct DetectReportOut {
    csi: f64,
    clusters: Vec<DetectClusterOut>,
    params: DetectParamsOut,
}

#[allow(clippy::too_many_arguments)]
pub fn detect(
    ctx: &Ctx,
    before_path: &Path,
    after_path: &Path,
    eps: Option<f64>,
    min_samples: Option<usize>,
    exclude_noise: bool,
    standardize_clouds: bool,
    project: bool,
) -> Result<Outcome, CliError> {
    let before_pts = formats::cloud_points_from_jsonl(before_path, "before")?;
    let after_pts = formats::cloud_points_from_jsonl(after_path, "after")?;
    let dim = before_pts[0].len();
    if before_pts.iter().chain(after_pts.iter()).any(|p| p.len() != dim) {
        return Err(CliError::Data("cloud dimension mismatch".into()));
    }

    let params = DbscanParams {
        eps: eps.unwrap_or(ctx.config.detect.eps),
        min_samples: min_samples.unwrap_or(ctx.config.detect.min_samples),
    };
    if !(params.eps > 0.0 && params.eps.is_finite()) {
        return Err(CliError::Usage("--eps must be a positive real".into()));
    }
    if params.min_samples < 1 {
        return Err(CliError::Usage("--min-samples must be >= 1".into()));
    }

    let mut after = LatentCloud::new(after_pts, CloudTag::AfterRlhf);
    let mut before = LatentCloud::new(before_pts, CloudTag::BeforeRlhf);
    if standardize_clouds {
        let (a, b) = standardize(&after, &before);
        after = a;
        before = b;
    }
    let report = csi_with(&after, &before, &params, exclude_noise);

    let out = DetectReportOut {
        csi: report.csi,
        clusters: report
            .clusters
            .iter()
            .map(|c| DetectClusterOut {
                id: c.id,
                size: c.size,
                distance: c.nearest_sft_distance,
                weighted: c.weighted,
            })
            .collect(),
        params: DetectParamsOut {
            eps: params.eps,
            min_samples: params.min_samples,
            exclude_noise,
            standardize: standardize_clouds,
        },
    };
    println!("{}", to_json(&out));

    if project {
        ctx.ensure_out_root()?;
        let pooled: Vec<Vec<f64>> =
            before.points.iter().chain(after.points.iter()).cloned().collect();
        let proj = pca_project(&pooled);
        let mut csv = String::from("x,y,tag\n");
        for (i, [x, y]) in proj.coords.iter().enumerate() {
            let tag = if i < before.len() { "before" } else { "after" };
            csv.push_str(&format!("{},{},{tag}\n", fmt_f64(*x), fmt_f64(*y)));
        }
        formats::write_file(&ctx.out_root.join("proj.csv"), &csv)?;
    }
    Ok(Outcome::Done)
}

// ---- report ----

#[derive(Serialize)]
struct RunEntry {
    run: String,
    valid: bool,
    error: Option<String>,
    final_proxy: Option<f64>,
    final_gold: Option<f64>,
    verdict: Option<String>,
    final_csi: Option<f64>,
    stop_step: Option<usize>,
    final_train_accuracy: Option<f64>,
}

impl RunEntry {
    fn invalid(run: String, error: String) -> Self {
        RunEntry {
            run,
            valid: false,
            error: Some(error),
            final_proxy: None,
            final_gold: None,
            verdict: None,
            final_csi: None,
            stop_step: None,
            final_train_accuracy: None,
        }
    }
}

#[derive(Serialize)]
struct Aggregate {
    n_runs: usize,
    n_valid: usize,
    n_hacked: usize,
    n_clean: usize,
    n_inconclusive: usize,
    median_final_gold: Option<f64>,
    median_final_proxy: Option<f64>,
    median_final_csi: Option<f64>,
}

#[derive(Serialize)]
struct ExperimentReport {
    runs: Vec<RunEntry>,
    aggregate: Aggregate,
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Hacked => "hacked",
        Verdict::Clean => "clean",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

fn read_run_dir(dir: &Path) -> RunEntry {
    let run = dir.display().to_string();
    let trace = match formats::trace_from_csv(&dir.join("trace.csv")) {
        Ok(t) => t,
        Err(e) => return RunEntry::invalid(run, e.message()),
    };
    let Some(last) = trace.records.last() else {
        return RunEntry::invalid(run, "trace has no records".into());
    };

    // Too few evals to fit trend lines on half the trace: call it
    // inconclusive rather than guessing.
    let n = trace.records.len();
    let verdict = if n >= 4 {
        hacking_verdict(&trace, (n / 2).min(10))
    } else {
        Verdict::Inconclusive
    };

    let meta_path = dir.join("run.json");
    let stop_step = if meta_path.exists() {
        match formats::run_meta_from_json(&meta_path) {
            Ok(meta) => meta.stopped_at,
            Err(e) => return RunEntry::invalid(run, e.message()),
        }
    } else {
        None
    };

    let curve_path = dir.join("train_curve.csv");
    let final_train_accuracy = if curve_path.exists() {
        match formats::curve_from_csv(&curve_path) {
            Ok(curve) => curve.last().map(|b| b.accuracy),
            Err(e) => return RunEntry::invalid(run, e.message()),
        }
    } else {
        None
    };

    RunEntry {
        run,
        valid: true,
        error: None,
        final_proxy: Some(last.proxy_score),
        final_gold: Some(last.gold_score),
        verdict: Some(verdict_name(verdict).into()),
        final_csi: last.csi,
        stop_step,
        final_train_accuracy,
    }
}

pub fn report(ctx: &Ctx, dirs: &[PathBuf]) -> Result<Outcome, CliError> {
    let runs: Vec<RunEntry> = dirs.iter().map(|d| read_run_dir(d)).collect();

    let count = |name: &str| {
        runs.iter().filter(|r| r.verdict.as_deref() == Some(name)).count()
    };
    let aggregate = Aggregate {
        n_runs: runs.len(),
        n_valid: runs.iter().filter(|r| r.valid).count(),
        n_hacked: count("hacked"),
        n_clean: count("clean"),
        n_inconclusive: count("inconclusive"),
        median_final_gold: median(runs.iter().filter_map(|r| r.final_gold).collect()),
        median_final_proxy: median(runs.iter().filter_map(|r| r.final_proxy).collect()),
        median_final_csi: median(runs.iter().filter_map(|r| r.final_csi).collect()),
    };
    let report = ExperimentReport { runs, aggregate };

    ctx.ensure_out_root()?;
    let json = to_json(&report) + "\n";
    formats::write_file(&ctx.out_root.join("report.json"), &json)?;

    let mut csv =
        String::from("run,valid,final_proxy,final_gold,verdict,final_csi,stop_step,final_train_accuracy\n");
    for r in &report.runs {
        let f = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.run,
            r.valid,
            f(r.final_proxy),
            f(r.final_gold),
            r.verdict.as_deref().unwrap_or_default(),
            f(r.final_csi),
            r.stop_step.map(|s| s.to_string()).unwrap_or_default(),
            f(r.final_train_accuracy),
        ));
    }
    formats::write_file(&ctx.out_root.join("summary.csv"), &csv)?;

    print!("{json}");
    Ok(Outcome::Done)
}
