//! Subcommand definitions and handlers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use relseq::datagen::{GeneratorKind, PatchSource};
use relseq::eval::{self, DescriptorKind};
use relseq::gradcheck::{self, GradcheckOptions};
use relseq::preprocess::{DEFAULT_EPS, DEFAULT_TARGET_FRACTION};
use relseq::training::parse_horizon_schedule;
use relseq::{Model, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{
    model_from_container, model_kind, model_shape, model_to_container, whitening_from_container,
    whitening_to_container,
};
use crate::container::{write_atomic, ArrayData, TensorContainer};
use crate::dataset::{generate, load_patches, Dataset, GenSpec, Split};
use crate::pgm;
use crate::pipeline;

#[derive(Parser, Debug)]
#[command(name = "relseq", version, about = "Gated autoencoders for image sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic sequence data set
    Gen(GenArgs),
    /// Fit a PCA whitening transform on a data set split
    Whiten(WhitenArgs),
    /// Run one training phase and write a checkpoint
    Train(TrainArgs),
    /// Roll a model forward from seed frames
    Rollout(RolloutArgs),
    /// Classify transformations from mapping descriptors
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Dump a container as JSON and, for frame arrays, PGM images
    Export(ExportArgs),
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| 0),
        Command::Whiten(a) => cmd_whiten(&a).map(|_| 0),
        Command::Train(a) => cmd_train(&a).map(|_| 0),
        Command::Rollout(a) => cmd_rollout(&a).map(|_| 0),
        Command::Eval(a) => cmd_eval(&a).map(|_| 0),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Export(a) => cmd_export(&a).map(|_| 0),
    }
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated counts: train,valid,test".into());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("bad count '{p}': {e}"))?;
    }
    Ok(out)
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let sizes = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad layer size '{p}'")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!sizes.is_empty() && sizes.len() <= 2 && sizes.iter().all(|&v| v > 0), "expected one or two positive sizes, got '{s}'");
    Ok(sizes)
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// const-shift, const-rot, acc-shift, acc-rot or balls
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// frames per sequence [default: 8, balls 10]
    #[arg(long)]
    pub frames: Option<usize>,
    /// patch side, or image side for balls [default: 13, balls 16]
    #[arg(long)]
    pub size: Option<usize>,
    /// train,valid,test counts
    #[arg(long, value_parser = parse_counts)]
    pub split: Option<[usize; 3]>,
    /// velocity bound (pixels or radians per frame)
    #[arg(long)]
    pub vel_range: Option<f64>,
    /// acceleration bound
    #[arg(long)]
    pub acc_range: Option<f64>,
    /// integer shift velocities
    #[arg(long)]
    pub integer: bool,
    #[arg(long)]
    pub n_balls: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub box_size: Option<f64>,
    #[arg(long)]
    pub substeps: Option<usize>,
    /// container with user-supplied patches instead of procedural ones
    #[arg(long)]
    pub patches: Option<PathBuf>,
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let kind = GeneratorKind::parse(&a.kind)?;
    let mut spec = GenSpec::new(kind, a.n, a.seed);
    spec.frames = a.frames.unwrap_or(spec.frames);
    spec.size = a.size.unwrap_or(spec.size);
    spec.split = a.split;
    spec.vel_range = a.vel_range;
    spec.acc_range = a.acc_range;
    spec.integer = a.integer;
    spec.n_balls = a.n_balls.unwrap_or(spec.n_balls);
    spec.radius = a.radius.unwrap_or(spec.radius);
    spec.box_size = a.box_size.unwrap_or(spec.box_size);
    spec.substeps = a.substeps.unwrap_or(spec.substeps);
    let patches = match &a.patches {
        Some(p) => load_patches(&TensorContainer::read(p)?, spec.size)?,
        None => PatchSource::Procedural,
    };
    let ds = generate(&spec, &patches)?;
    let mut c = ds.to_container()?;
    c.meta["command"] = json!("gen");
    c.meta["patch_source"] = json!(a.patches.as_ref().map(|p| p.display().to_string()));
    c.write(&a.out)
}

#[derive(Args, Debug)]
pub struct WhitenArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// fraction of variance to retain
    #[arg(long, default_value_t = DEFAULT_TARGET_FRACTION)]
    pub fraction: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// split whose frames are used for the fit
    #[arg(long, default_value = "train")]
    pub split: String,
}

pub fn cmd_whiten(a: &WhitenArgs) -> Result<()> {
    let data = TensorContainer::read(&a.data)?;
    let ds = Dataset::from_container(&data)?;
    let split = Split::parse(&a.split)?;
    let w = pipeline::whiten(&ds, split, a.fraction, a.eps)?;
    let meta = json!({
        "format": "whitening",
        "command": "whiten",
        "fraction": a.fraction,
        "eps": a.eps,
        "split": split,
        "kept": w.kept(),
        "pixels": w.pixels(),
        "retained_fraction": w.retained_fraction,
        "dataset": data.meta,
    });
    whitening_to_container(&w, meta)?.write(&a.out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    PretrainL1,
    PretrainL2,
    Finetune,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::PretrainL1 => "pretrain-l1",
            Phase::PretrainL2 => "pretrain-l2",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gae,
    Hgae,
}

/// Optional training knobs; unset fields fall back to the phase defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub horizon_schedule: Option<String>,
    pub l2: Option<f64>,
    pub seed: Option<u64>,
    pub determinism: Option<bool>,
    pub max_grad_norm: Option<f64>,
    pub init_std: Option<f64>,
    pub random_windows: Option<bool>,
}

/// JSON run description accepted by `train --config`; command-line flags
/// take precedence over its values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub phase: Option<Phase>,
    pub data: Option<PathBuf>,
    pub whitening: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub from_scratch: Option<bool>,
    pub factors: Option<Vec<usize>>,
    pub mappings: Option<Vec<usize>>,
    pub frames_used: Option<usize>,
    #[serde(default)]
    pub train: TrainOverrides,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid run config")
    }
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub phase: Option<Phase>,
    /// JSON run config; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub whitening: Option<PathBuf>,
    /// checkpoint of the previous phase
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON-lines report [default: <out>.report.jsonl]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// model for `finetune --from-scratch`
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// predictive training without a pretrained checkpoint
    #[arg(long)]
    pub from_scratch: bool,
    /// factors per layer, e.g. 64 or 128,128 [default: 64]
    #[arg(long)]
    pub factors: Option<String>,
    /// mappings per layer [default: 64]
    #[arg(long)]
    pub mappings: Option<String>,
    /// leading frames of each sequence used for pretraining pairs/triples
    #[arg(long)]
    pub frames_used: Option<usize>,
    /// [default: pretraining 100, finetune 900]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0.001; finetune from a checkpoint 0.0001]
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// e.g. "0:1,400:2" [default for finetune: 0:1,400:2]
    #[arg(long)]
    pub horizon_schedule: Option<String>,
    #[arg(long)]
    pub random_windows: bool,
    /// record wall-clock timings (reports then differ between runs)
    #[arg(long)]
    pub timings: bool,
}

struct ResolvedTrain {
    phase: Phase,
    data: PathBuf,
    whitening: PathBuf,
    init: Option<PathBuf>,
    out: PathBuf,
    report: PathBuf,
    model: ModelKind,
    from_scratch: bool,
    factors: Vec<usize>,
    mappings: Vec<usize>,
    frames_used: Option<usize>,
    cfg: TrainConfig,
}

fn resolve_train(a: &TrainArgs) -> Result<ResolvedTrain> {
    let rc = match &a.config {
        Some(p) => RunConfig::parse(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)?,
        None => RunConfig::default(),
    };
    let phase = a.phase.or(rc.phase).context("--phase is required")?;
    let data = a.data.clone().or(rc.data).context("--data is required")?;
    let whitening = a.whitening.clone().or(rc.whitening).context("--whitening is required")?;
    let out = a.out.clone().or(rc.out).context("--out is required")?;
    let report = a.report.clone().or(rc.report).unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".report.jsonl");
        PathBuf::from(s)
    });
    let from_scratch = a.from_scratch || rc.from_scratch.unwrap_or(false);
    let init = a.init.clone().or(rc.init);
    let t = &rc.train;
    let pretraining = phase != Phase::Finetune;
    let mut cfg = TrainConfig {
        epochs: if pretraining { 100 } else { 900 },
        learning_rate: if pretraining || from_scratch { 0.001 } else { 0.0001 },
        horizon_schedule: if pretraining { vec![(0, 1)] } else { vec![(0, 1), (400, 2)] },
        ..TrainConfig::default()
    };
    cfg.learning_rate = a.lr.or(t.learning_rate).unwrap_or(cfg.learning_rate);
    cfg.momentum = a.momentum.or(t.momentum).unwrap_or(cfg.momentum);
    cfg.epochs = a.epochs.or(t.epochs).unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.or(t.batch_size).unwrap_or(cfg.batch_size);
    cfg.l2 = a.l2.or(t.l2).unwrap_or(cfg.l2);
    cfg.seed = a.seed.or(t.seed).unwrap_or(cfg.seed);
    cfg.init_std = a.init_std.or(t.init_std).unwrap_or(cfg.init_std);
    cfg.max_grad_norm = a.max_grad_norm.or(t.max_grad_norm);
    cfg.random_windows = a.random_windows || t.random_windows.unwrap_or(false);
    cfg.determinism = !a.timings && t.determinism.unwrap_or(true);
    if let Some(s) = a.horizon_schedule.as_ref().or(t.horizon_schedule.as_ref()) {
        cfg.horizon_schedule = parse_horizon_schedule(s)?;
    }
    cfg.validate()?;
    Ok(ResolvedTrain {
        phase,
        data,
        whitening,
        init,
        out,
        report,
        model: a.model.or(rc.model).unwrap_or(ModelKind::Gae),
        from_scratch,
        factors: a.factors.as_deref().map(parse_sizes).transpose()?.or(rc.factors).unwrap_or_else(|| vec![64]),
        mappings: a.mappings.as_deref().map(parse_sizes).transpose()?.or(rc.mappings).unwrap_or_else(|| vec![64]),
        frames_used: a.frames_used.or(rc.frames_used),
        cfg,
    })
}

fn layer_size(sizes: &[usize], layer: usize) -> usize {
    sizes.get(layer).or(sizes.last()).copied().unwrap_or(64)
}

fn phases_of(meta: &Value) -> Vec<String> {
    meta["phases"]
        .as_array()
        .map(|v| v.iter().filter_map(|p| p.as_str().map(String::from)).collect())
        .unwrap_or_default()
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let r = resolve_train(a)?;
    let data = TensorContainer::read(&r.data)?;
    let ds = Dataset::from_container(&data)?;
    let wc = TensorContainer::read(&r.whitening)?;
    let w = whitening_from_container(&wc)?;
    ensure!(w.pixels() == ds.frame_len(), "whitening expects {} pixels, data has {}", w.pixels(), ds.frame_len());
    let prior = match &r.init {
        Some(p) => {
            let c = TensorContainer::read(p)?;
            Some((model_from_container(&c)?, c.meta))
        }
        None => None,
    };
    let frames_used = r.frames_used.unwrap_or(ds.num_frames()).min(ds.num_frames());
    let (model, report) = match r.phase {
        Phase::PretrainL1 => {
            ensure!(prior.is_none(), "pretrain-l1 starts from a fresh initialization; drop --init");
            let set = ds.sequence_set(Split::Train, frames_used, Some(&w))?;
            let (p, rep) = pipeline::pretrain_layer1(&set, frames_used, r.factors[0], r.mappings[0], &r.cfg)?;
            (Model::Gae(p), rep)
        }
        Phase::PretrainL2 => {
            let (m, meta) = prior.as_ref().context("pretrain-l2 needs --init <pretrain-l1 checkpoint>")?;
            let l1 = match m {
                Model::Gae(p) if phases_of(meta).last().map(String::as_str) == Some("pretrain-l1") => p,
                _ => bail!("pretrain-l2 needs a checkpoint whose last phase is pretrain-l1"),
            };
            let set = ds.sequence_set(Split::Train, frames_used, Some(&w))?;
            let (h, rep) = pipeline::pretrain_layer2(
                l1,
                &set,
                frames_used,
                layer_size(&r.factors, 1),
                layer_size(&r.mappings, 1),
                &r.cfg,
            )?;
            (Model::Hgae(h), rep)
        }
        Phase::Finetune => {
            let start = match (&prior, r.from_scratch) {
                (Some(_), true) => bail!("--from-scratch and --init are mutually exclusive"),
                (Some((m, meta)), false) => {
                    if matches!(m, Model::Hgae(_)) {
                        ensure!(
                            phases_of(meta).iter().any(|p| p == "pretrain-l2"),
                            "finetuning an HGAE needs a checkpoint that went through pretrain-l2"
                        );
                    }
                    m.clone()
                }
                (None, true) => pipeline::init_model(
                    r.model == ModelKind::Hgae,
                    w.kept(),
                    [r.factors[0], layer_size(&r.factors, 1)],
                    [r.mappings[0], layer_size(&r.mappings, 1)],
                    &r.cfg,
                )?,
                (None, false) => bail!("finetune needs --init <checkpoint> (or --from-scratch)"),
            };
            let len = if r.cfg.random_windows {
                ds.num_frames()
            } else {
                (start.seed_frames() + r.cfg.max_horizon()).min(ds.num_frames())
            };
            let set = ds.sequence_set(Split::Train, len, Some(&w))?;
            pipeline::finetune(start, &set, &r.cfg)?
        }
    };
    let mut phases = prior.as_ref().map(|(_, m)| phases_of(m)).unwrap_or_default();
    if r.from_scratch {
        phases.clear();
    }
    phases.push(r.phase.name().to_string());
    let mut history = prior
        .as_ref()
        .and_then(|(_, m)| m["history"].as_array().cloned())
        .unwrap_or_default();
    history.push(json!({
        "phase": r.phase.name(),
        "from_scratch": r.from_scratch,
        "train_config": r.cfg,
        "frames_used": frames_used,
        "factors": r.factors,
        "mappings": r.mappings,
        "data": r.data.display().to_string(),
        "dataset": data.meta,
        "whitening": wc.meta,
        "init": r.init.as_ref().map(|p| p.display().to_string()),
        "final_loss": report.losses().last(),
        "steps": report.steps,
    }));
    let meta = json!({
        "format": "checkpoint",
        "command": "train",
        "model": model_kind(&model),
        "shape": model_shape(&model),
        "phases": phases,
        "history": history,
    });
    let c = model_to_container(&model, meta)?;
    write_atomic(&r.report, report.to_json_lines().as_bytes())?;
    c.write(&r.out)
}

fn load_inputs(ckpt: &Path, data: &Path, whitening: &Path) -> Result<(Model, Value, Dataset, Value, relseq::preprocess::WhiteningTransform, Value)> {
    let cc = TensorContainer::read(ckpt)?;
    let model = model_from_container(&cc)?;
    let dc = TensorContainer::read(data)?;
    let ds = Dataset::from_container(&dc)?;
    let wc = TensorContainer::read(whitening)?;
    let w = whitening_from_container(&wc)?;
    ensure!(w.pixels() == ds.frame_len(), "whitening expects {} pixels, data has {}", w.pixels(), ds.frame_len());
    ensure!(w.kept() == model.frame_dim(), "model expects {} inputs, whitening yields {}", model.frame_dim(), w.kept());
    Ok((model, cc.meta, ds, dc.meta, w, wc.meta))
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub whitening: PathBuf,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// roll out only the first N sequences of the split
    #[arg(long)]
    pub count: Option<usize>,
    /// write one PGM image per frame into this directory
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
}

pub fn cmd_rollout(a: &RolloutArgs) -> Result<()> {
    let (model, cmeta, mut ds, dmeta, w, wmeta) = load_inputs(&a.ckpt, &a.data, &a.whitening)?;
    let split = Split::parse(&a.split)?;
    if let Some(n) = a.count {
        let keep: Vec<usize> = ds.indices(split).into_iter().take(n).collect();
        ds.samples = keep.iter().map(|&i| ds.samples[i].clone()).collect();
        ds.split = vec![split; keep.len()];
    }
    let seeds = model.seed_frames();
    let len = (seeds + a.steps).min(ds.num_frames());
    let set = ds.sequence_set(split, len, Some(&w))?;
    let (predicted, metrics) = pipeline::rollout_set(&model, &set, a.steps)?;
    let all: Vec<&relseq::Matrix> = set.frames()[..seeds].iter().chain(predicted.iter()).collect();
    let (n, t, d, k) = (set.num_sequences(), all.len(), w.pixels(), w.kept());
    let mut pixels = vec![0f32; n * t * d];
    let mut whitened = vec![0f32; n * t * k];
    for (s, frame) in all.iter().enumerate() {
        let px = w.invert(frame)?;
        for i in 0..n {
            for r in 0..d {
                pixels[(i * t + s) * d + r] = px.get(r, i) as f32;
            }
            for r in 0..k {
                whitened[(i * t + s) * k + r] = frame.get(r, i) as f32;
            }
        }
    }
    let mut c = TensorContainer::new(json!({
        "format": "rollout",
        "command": "rollout",
        "steps": a.steps,
        "seed_frames": seeds,
        "split": split,
        "count": a.count,
        "metrics": metrics,
        "pgm_normalization": "per-sequence min-max over seed and predicted frames, mapped to 0..255",
        "checkpoint": cmeta,
        "dataset": dmeta,
        "whitening": wmeta,
    }));
    c.push("frames", &[n, t, d], ArrayData::F32(pixels.clone()))?;
    c.push("whitened", &[n, t, k], ArrayData::F32(whitened))?;
    if let Some(dir) = &a.pgm_dir {
        pgm::write_sequences(dir, &pixels, n, t, d)?;
    }
    if let Some(m) = &metrics {
        println!("{}", serde_json::to_string(m)?);
    }
    c.write(&a.out)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub whitening: PathBuf,
    /// m1_first, m1_second, m1_concat, m2 or all
    #[arg(long, default_value = "all")]
    pub descriptor: String,
    /// classifier seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub logreg_epochs: Option<usize>,
    #[arg(long)]
    pub logreg_lr: Option<f64>,
    #[arg(long)]
    pub logreg_l2: Option<f64>,
    /// permute training labels with this seed (chance-level control)
    #[arg(long)]
    pub shuffle_labels: Option<u64>,
    /// metrics JSON file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (model, cmeta, ds, dmeta, w, wmeta) = load_inputs(&a.ckpt, &a.data, &a.whitening)?;
    let kinds: Vec<DescriptorKind> = if a.descriptor == "all" {
        DescriptorKind::ALL
            .into_iter()
            .filter(|k| *k != DescriptorKind::M2 || matches!(model, Model::Hgae(_)))
            .collect()
    } else {
        vec![DescriptorKind::parse(&a.descriptor)?]
    };
    let mut logreg = eval::default_logreg_config(a.seed);
    logreg.epochs = a.logreg_epochs.unwrap_or(logreg.epochs);
    logreg.learning_rate = a.logreg_lr.unwrap_or(logreg.learning_rate);
    logreg.l2 = a.logreg_l2.unwrap_or(logreg.l2);
    let metrics = pipeline::evaluate_descriptors(&model, &ds, &w, &kinds, &logreg, a.shuffle_labels)?;
    let mut lines = String::new();
    for m in &metrics {
        writeln!(lines, "{}", serde_json::to_string(m)?)?;
    }
    print!("{lines}");
    if let Some(out) = &a.out {
        let doc = json!({
            "metrics": metrics,
            "logreg_config": logreg,
            "shuffle_labels": a.shuffle_labels,
            "checkpoint": cmeta,
            "dataset": dmeta,
            "whitening": wmeta,
        });
        write_atomic(out, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// random instances per suite
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
    pub step: f64,
    /// negate analytic gradients before comparing (fault injection)
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let results = gradcheck::run_suites(&GradcheckOptions {
        instances: a.instances,
        seed: a.seed,
        step: a.step,
        tolerance: a.tolerance,
        flip_sign: a.inject_sign_flip,
    })?;
    for r in &results {
        println!(
            "{:<34} instances {:>3}  max rel. error {:.3e}  {}",
            r.name,
            r.instances,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        write_atomic(out, serde_json::to_string_pretty(&results)?.as_bytes())?;
    }
    Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// JSON dump of meta and arrays
    #[arg(long)]
    pub out: PathBuf,
    /// also write the `frames` array (n×T×d, square frames) as PGM images
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    let c = TensorContainer::read(&a.input)?;
    let arrays: Vec<Value> = c
        .arrays
        .iter()
        .map(|arr| {
            let values = match &arr.data {
                ArrayData::F32(v) => json!(v),
                ArrayData::F64(v) => json!(v),
                ArrayData::I64(v) => json!(v),
            };
            json!({"name": arr.name, "shape": arr.shape, "values": values})
        })
        .collect();
    let doc = json!({"meta": c.meta, "arrays": arrays});
    write_atomic(&a.out, serde_json::to_string(&doc)?.as_bytes())?;
    if let Some(dir) = &a.pgm_dir {
        let frames = c.require("frames")?;
        ensure!(frames.shape.len() == 3, "frames must be n×T×d");
        let values: Vec<f32> = frames.data.to_f64().iter().map(|&v| v as f32).collect();
        pgm::write_sequences(dir, &values, frames.shape[0], frames.shape[1], frames.shape[2])?;
    }
    Ok(())
}
