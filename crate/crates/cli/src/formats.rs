//! On-disk artifact formats.
//!
//! Every float is written as `{:.16e}` — 17 significant digits, enough to
//! pin down the exact bit pattern — so all artifacts round-trip losslessly
//! and reruns produce byte-identical files. JSON output routes through a
//! custom serializer formatter to get the same digits there.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hackwatch_core::numerics::MlpParams;
use hackwatch_core::reward::{
    InfoRmParams, LossBreakdown, PreferencePair, RmParams, StandardRmParams,
};
use hackwatch_core::world::{EvalRecord, GoldRm, Policy, RunTrace};

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Sig17;

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Compact JSON with 17-significant-digit floats.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17);
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    String::from_utf8(buf).expect("serializer emits utf-8")
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64, CliError> {
    field.trim().parse().map_err(|_| {
        CliError::Data(format!("{}:{line}: bad float {field:?}", path.display()))
    })
}

fn parse_usize(field: &str, path: &Path, line: usize) -> Result<usize, CliError> {
    field.trim().parse().map_err(|_| {
        CliError::Data(format!("{}:{line}: bad integer {field:?}", path.display()))
    })
}

// ---- reward-model checkpoints ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    /// Row-major weight matrix, `w[o][i]`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Checkpoint schema shared by both model families. For `kind:"standard"`
/// the layers form one chain and `beta`/`latent_dim` are zero; for
/// `kind:"inforem"` the encoder chain is followed by the decoder chain,
/// and the boundary is the unique place where consecutive layer dims
/// disagree (encoder ends at `2 * latent_dim`, decoder starts at
/// `latent_dim`).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: String,
    /// Per-layer `[in, out]`.
    pub dims: Vec<[usize; 2]>,
    pub beta: f64,
    pub latent_dim: usize,
    pub layers: Vec<CheckpointLayer>,
}

fn mlp_to_checkpoint(mlp: &MlpParams, dims: &mut Vec<[usize; 2]>, layers: &mut Vec<CheckpointLayer>) {
    for layer in &mlp.layers {
        dims.push([layer.in_dim, layer.out_dim]);
        let w = (0..layer.out_dim)
            .map(|o| layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim].to_vec())
            .collect();
        layers.push(CheckpointLayer { w, b: layer.bias.clone() });
    }
}

pub fn checkpoint_from_params(params: &RmParams) -> Checkpoint {
    let mut dims = Vec::new();
    let mut layers = Vec::new();
    match params {
        RmParams::Standard(p) => {
            mlp_to_checkpoint(&p.mlp, &mut dims, &mut layers);
            Checkpoint { kind: "standard".into(), dims, beta: 0.0, latent_dim: 0, layers }
        }
        RmParams::InfoRm(p) => {
            mlp_to_checkpoint(&p.encoder, &mut dims, &mut layers);
            mlp_to_checkpoint(&p.decoder, &mut dims, &mut layers);
            Checkpoint { kind: "inforem".into(), dims, beta: p.beta, latent_dim: p.latent_dim, layers }
        }
    }
}

fn mlp_from_checkpoint(
    dims: &[[usize; 2]],
    layers: &[CheckpointLayer],
    what: &str,
) -> Result<MlpParams, CliError> {
    let err = |msg: String| CliError::Data(format!("checkpoint {what}: {msg}"));
    let chain: Vec<usize> = {
        let mut c = vec![dims[0][0]];
        for (i, d) in dims.iter().enumerate() {
            if i > 0 && d[0] != dims[i - 1][1] {
                return Err(err(format!("layer {i} input {} breaks the chain", d[0])));
            }
            c.push(d[1]);
        }
        c
    };
    if chain.contains(&0) {
        return Err(err("zero-width layer".into()));
    }
    let mut mlp = MlpParams::zeros(&chain);
    for (i, (layer, ck)) in mlp.layers.iter_mut().zip(layers.iter()).enumerate() {
        let (n_in, n_out) = (layer.in_dim, layer.out_dim);
        if ck.w.len() != n_out || ck.b.len() != n_out {
            return Err(err(format!("layer {i} has wrong output count")));
        }
        for (o, row) in ck.w.iter().enumerate() {
            if row.len() != n_in {
                return Err(err(format!("layer {i} row {o} has wrong width")));
            }
            layer.weights[o * n_in..(o + 1) * n_in].copy_from_slice(row);
        }
        layer.bias.copy_from_slice(&ck.b);
    }
    mlp.validate().map_err(|m| err(m.into()))?;
    Ok(mlp)
}

pub fn params_from_checkpoint(ck: &Checkpoint) -> Result<RmParams, CliError> {
    let err = |msg: &str| CliError::Data(format!("checkpoint: {msg}"));
    if ck.layers.is_empty() || ck.dims.len() != ck.layers.len() {
        return Err(err("dims and layers must be nonempty and aligned"));
    }
    let finite = ck
        .layers
        .iter()
        .all(|l| l.w.iter().flatten().chain(l.b.iter()).all(|v| v.is_finite()));
    if !finite {
        return Err(err("non-finite parameter"));
    }
    match ck.kind.as_str() {
        "standard" => {
            if ck.beta != 0.0 || ck.latent_dim != 0 {
                return Err(err("standard checkpoints carry beta = 0 and latent_dim = 0"));
            }
            if ck.dims.last().unwrap()[1] != 1 {
                return Err(err("reward head must be one-dimensional"));
            }
            let mlp = mlp_from_checkpoint(&ck.dims, &ck.layers, "scorer")?;
            Ok(RmParams::Standard(StandardRmParams::new(mlp)))
        }
        "inforem" => {
            if ck.latent_dim == 0 {
                return Err(err("latent_dim must be >= 1"));
            }
            if !(ck.beta.is_finite() && ck.beta >= 0.0) {
                return Err(err("beta must be a finite nonnegative real"));
            }
            let breaks: Vec<usize> = (1..ck.dims.len())
                .filter(|&i| ck.dims[i][0] != ck.dims[i - 1][1])
                .collect();
            let [split] = breaks.as_slice() else {
                return Err(err("expected exactly one encoder/decoder boundary"));
            };
            let split = *split;
            if ck.dims[split - 1][1] != 2 * ck.latent_dim {
                return Err(err("encoder must end at 2 * latent_dim"));
            }
            if ck.dims[split][0] != ck.latent_dim {
                return Err(err("decoder must start at latent_dim"));
            }
            if ck.dims.last().unwrap()[1] != 1 {
                return Err(err("reward head must be one-dimensional"));
            }
            let encoder = mlp_from_checkpoint(&ck.dims[..split], &ck.layers[..split], "encoder")?;
            let decoder = mlp_from_checkpoint(&ck.dims[split..], &ck.layers[split..], "decoder")?;
            Ok(RmParams::InfoRm(InfoRmParams::new(encoder, decoder, ck.beta, ck.latent_dim)))
        }
        other => Err(err(&format!("unknown kind {other:?}"))),
    }
}

pub fn save_checkpoint(path: &Path, params: &RmParams) -> Result<(), CliError> {
    write_file(path, &(to_json(&checkpoint_from_params(params)) + "\n"))
}

pub fn load_checkpoint(path: &Path) -> Result<RmParams, CliError> {
    let text = read_file(path)?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    params_from_checkpoint(&ck)
}

// ---- world files ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldSection {
    weights: Vec<f64>,
    relevant_mask: Vec<bool>,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    mean: Vec<f64>,
    log_scale: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    gold: GoldSection,
    sft: PolicySection,
}

pub fn world_to_json(gold: &GoldRm, sft: &Policy) -> String {
    to_json(&WorldFile {
        gold: GoldSection {
            weights: gold.weights.clone(),
            relevant_mask: gold.relevant_mask.clone(),
            seed: gold.seed,
        },
        sft: PolicySection { mean: sft.mean.clone(), log_scale: sft.log_scale.clone() },
    }) + "\n"
}

pub fn world_from_json(path: &Path) -> Result<(GoldRm, Policy), CliError> {
    let text = read_file(path)?;
    let wf: WorldFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let err = |msg: &str| CliError::Data(format!("{}: {msg}", path.display()));
    let g = &wf.gold;
    if g.weights.len() != g.relevant_mask.len() || g.weights.is_empty() {
        return Err(err("gold weights and mask must be nonempty and aligned"));
    }
    if !g.relevant_mask.iter().any(|&m| m) {
        return Err(err("gold scorer needs at least one relevant dimension"));
    }
    let p = &wf.sft;
    if p.mean.len() != g.weights.len() || p.log_scale.len() != p.mean.len() {
        return Err(err("sft policy dimensions disagree with the gold scorer"));
    }
    let all = g.weights.iter().chain(p.mean.iter()).chain(p.log_scale.iter());
    if !all.clone().all(|v| v.is_finite()) {
        return Err(err("non-finite world parameter"));
    }
    Ok((
        GoldRm::new(g.weights.clone(), g.relevant_mask.clone(), g.seed),
        Policy::new(p.mean.clone(), p.log_scale.clone()),
    ))
}

// ---- preference-pair datasets ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    chosen: Vec<f64>,
    rejected: Vec<f64>,
    flipped: bool,
}

pub fn pairs_to_jsonl(pairs: &[PreferencePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let line = PairLine {
            chosen: p.chosen.clone(),
            rejected: p.rejected.clone(),
            flipped: p.flipped,
        };
        out.push_str(&to_json(&line));
        out.push('\n');
    }
    out
}

pub fn pairs_from_jsonl(path: &Path) -> Result<Vec<PreferencePair>, CliError> {
    let text = read_file(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pl: PairLine = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let err = |msg: &str| CliError::Data(format!("{}:{}: {msg}", path.display(), i + 1));
        if pl.chosen.is_empty() || pl.chosen.len() != pl.rejected.len() {
            return Err(err("pair members must be nonempty and share a dimension"));
        }
        if !pl.chosen.iter().chain(pl.rejected.iter()).all(|v| v.is_finite()) {
            return Err(err("non-finite feature"));
        }
        let mut pair = PreferencePair::new(pl.chosen, pl.rejected);
        pair.flipped = pl.flipped;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs", path.display())));
    }
    if pairs.iter().any(|p| p.feature_dim() != pairs[0].feature_dim()) {
        return Err(CliError::Data(format!("{}: inconsistent feature dimensions", path.display())));
    }
    Ok(pairs)
}

// ---- latent-cloud dumps ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloudLine {
    tag: String,
    vec: Vec<f64>,
}

pub fn cloud_to_jsonl(points: &[Vec<f64>], tag: &str) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&to_json(&CloudLine { tag: tag.into(), vec: p.clone() }));
        out.push('\n');
    }
    out
}

/// Reads the lines of a cloud dump whose tag matches `want`
/// (`"before"` or `"after"`); other valid tags are skipped, so a mixed
/// dump can serve as both inputs.
pub fn cloud_points_from_jsonl(path: &Path, want: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let text = read_file(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cl: CloudLine = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let err = |msg: String| CliError::Data(format!("{}:{}: {msg}", path.display(), i + 1));
        if cl.tag != "before" && cl.tag != "after" {
            return Err(err(format!("unknown tag {:?}", cl.tag)));
        }
        if cl.tag != want {
            continue;
        }
        if cl.vec.is_empty() || !cl.vec.iter().all(|v| v.is_finite()) {
            return Err(err("point must be nonempty and finite".into()));
        }
        points.push(cl.vec);
    }
    if points.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no points tagged {want:?}",
            path.display()
        )));
    }
    Ok(points)
}

// ---- run traces ----

pub const TRACE_HEADER: &str = "step,proxy_score,gold_score,policy_kl,csi";

pub fn trace_to_csv(trace: &RunTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let csi = r.csi.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{csi}",
            r.step,
            fmt_f64(r.proxy_score),
            fmt_f64(r.gold_score),
            fmt_f64(r.policy_kl)
        );
    }
    out
}

/// Parses a trace written by [`trace_to_csv`]. The stop step is not part
/// of the CSV; it lives in the run's metadata file.
pub fn trace_from_csv(path: &Path) -> Result<RunTrace, CliError> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == TRACE_HEADER => {}
        _ => return Err(CliError::Data(format!("{}: bad trace header", path.display()))),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Data(format!(
                "{}:{}: expected 5 fields, got {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        records.push(EvalRecord {
            step: parse_usize(fields[0], path, i + 1)?,
            proxy_score: parse_f64(fields[1], path, i + 1)?,
            gold_score: parse_f64(fields[2], path, i + 1)?,
            policy_kl: parse_f64(fields[3], path, i + 1)?,
            csi: if fields[4].trim().is_empty() {
                None
            } else {
                Some(parse_f64(fields[4], path, i + 1)?)
            },
        });
    }
    Ok(RunTrace { records, stopped_at: None })
}

// ---- training curves ----

pub const CURVE_HEADER: &str = "step,total,preference,bottleneck,accuracy";

pub fn curve_to_csv(curve: &[LossBreakdown]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (step, b) in curve.iter().enumerate() {
        let _ = writeln!(
            out,
            "{step},{},{},{},{}",
            fmt_f64(b.total),
            fmt_f64(b.preference_term),
            fmt_f64(b.bottleneck_term),
            fmt_f64(b.accuracy)
        );
    }
    out
}

pub fn curve_from_csv(path: &Path) -> Result<Vec<LossBreakdown>, CliError> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CURVE_HEADER => {}
        _ => return Err(CliError::Data(format!("{}: bad curve header", path.display()))),
    }
    let mut curve = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Data(format!("{}:{}: expected 5 fields", path.display(), i + 1)));
        }
        curve.push(LossBreakdown {
            total: parse_f64(fields[1], path, i + 1)?,
            preference_term: parse_f64(fields[2], path, i + 1)?,
            bottleneck_term: parse_f64(fields[3], path, i + 1)?,
            accuracy: parse_f64(fields[4], path, i + 1)?,
        });
    }
    Ok(curve)
}

// ---- run metadata ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub stopped_at: Option<usize>,
}

pub fn run_meta_from_json(path: &Path) -> Result<RunMeta, CliError> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
