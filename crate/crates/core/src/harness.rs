//! Run configuration, the training loop, evaluation and model inspection.
//!
//! A run is fully described by a flat `key = value` config (see
//! [`RunConfig`]); identical config + seeds reproduce identical logs and
//! checkpoints. Training splits each step into three phases: parallel trunk
//! forwards per clip, one small head graph coupling the batch through the
//! classifier and the combined loss, then parallel trunk backwards seeded
//! with the head's embedding gradients, reduced in batch order.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::attention::FeatureMapParams;
use crate::backbone::{count_params, param_breakdown, Model, ModelConfig, ParamSet};
use crate::data::{
    read_checkpoint, read_feature_file, write_checkpoint, Checkpoint, Manifest, Split,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::losses::{combined_loss_nodes, LossConfig};
use crate::metrics::{auc_roc, ScoredSet};
use crate::optim::{adamw_step, cosine_lr, OptimHyper, OptimState};
use crate::tensor::Tensor;

/// Everything a run needs; serializable to a flat key = value file with every
/// key overridable from the command line.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub hyper: OptimHyper,
    pub epochs: u64,
    /// 0 derives epochs * batches_per_epoch (cosine schedule horizon).
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub data_seed: u64,
    pub feature_seed: u64,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    /// Evaluate every this many epochs (0 = never).
    pub eval_every: u64,
    /// Stop once eval AUC reaches this value (0 = never).
    pub stop_auc: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig {
                seed: 1,
                ..ModelConfig::fast()
            },
            loss: LossConfig::default(),
            hyper: OptimHyper::default(),
            epochs: 50,
            total_steps: 0,
            checkpoint_every: 100,
            data_seed: 2,
            feature_seed: 3,
            manifest: None,
            out_dir: None,
            eval_manifest: None,
            eval_every: 0,
            stop_auc: 0.0,
        }
    }
}

/// Config keys in canonical serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "enhancer_channels",
    "enhancer_depth",
    "attention_channels",
    "attention_depth",
    "random_features",
    "ffn_expansion",
    "input_shape",
    "margin",
    "lambda",
    "batch_half",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "epochs",
    "total_steps",
    "checkpoint_every",
    "model_seed",
    "data_seed",
    "feature_seed",
    "manifest",
    "out_dir",
    "eval_manifest",
    "eval_every",
    "stop_auc",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Apply one key/value pair (file line or CLI override).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => {
                let preset = match value {
                    "fast" => ModelConfig::fast(),
                    "base" => ModelConfig::base(),
                    other => {
                        return Err(Error::Config(format!(
                            "unknown preset {other:?}; expected fast or base"
                        )))
                    }
                };
                let seed = self.model.seed;
                self.model = ModelConfig { seed, ..preset };
            }
            "enhancer_channels" => self.model.enhancer_channels = parse_num(key, value)?,
            "enhancer_depth" => self.model.enhancer_depth = parse_num(key, value)?,
            "attention_channels" => self.model.attention_channels = parse_num(key, value)?,
            "attention_depth" => self.model.attention_depth = parse_num(key, value)?,
            "random_features" => self.model.random_features = parse_num(key, value)?,
            "ffn_expansion" => self.model.ffn_expansion = parse_num(key, value)?,
            "input_shape" => {
                let dims: Vec<usize> = value
                    .split('x')
                    .map(|d| parse_num::<usize>(key, d))
                    .collect::<Result<_>>()?;
                if dims.len() != 4 {
                    return Err(Error::Config(format!(
                        "input_shape must be CxTxHxW, got {value:?}"
                    )));
                }
                self.model.input_shape = [dims[0], dims[1], dims[2], dims[3]];
            }
            "margin" => self.loss.margin = parse_num(key, value)?,
            "lambda" => self.loss.lambda = parse_num(key, value)?,
            "batch_half" => self.loss.batch_half = parse_num(key, value)?,
            "lr" => self.hyper.lr_base = parse_num(key, value)?,
            "weight_decay" => self.hyper.weight_decay = parse_num(key, value)?,
            "beta1" => self.hyper.beta1 = parse_num(key, value)?,
            "beta2" => self.hyper.beta2 = parse_num(key, value)?,
            "adam_eps" => self.hyper.eps = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "total_steps" => self.total_steps = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "model_seed" => self.model.seed = parse_num(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "feature_seed" => self.feature_seed = parse_num(key, value)?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "eval_manifest" => self.eval_manifest = Some(PathBuf::from(value)),
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "stop_auc" => self.stop_auc = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over a base config. `#` starts a comment.
    pub fn parse_kv(text: &str, mut base: RunConfig) -> Result<RunConfig> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {raw:?} is not key = value")))?;
            base.apply(key.trim(), value.trim())?;
        }
        Ok(base)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text, RunConfig::default())
    }

    /// Serialize every concrete key (presets are already expanded).
    pub fn to_kv(&self) -> String {
        let mut s = self.to_kv_portable();
        if let Some(p) = &self.manifest {
            s.push_str(&format!("manifest = {}\n", p.display()));
        }
        if let Some(p) = &self.out_dir {
            s.push_str(&format!("out_dir = {}\n", p.display()));
        }
        if let Some(p) = &self.eval_manifest {
            s.push_str(&format!("eval_manifest = {}\n", p.display()));
        }
        s
    }

    /// Serialization without machine-local paths; this is what checkpoints
    /// embed, so runs differing only in directories produce identical files.
    pub fn to_kv_portable(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("enhancer_channels", m.enhancer_channels.to_string());
        kv("enhancer_depth", m.enhancer_depth.to_string());
        kv("attention_channels", m.attention_channels.to_string());
        kv("attention_depth", m.attention_depth.to_string());
        kv("random_features", m.random_features.to_string());
        kv("ffn_expansion", m.ffn_expansion.to_string());
        kv(
            "input_shape",
            format!(
                "{}x{}x{}x{}",
                m.input_shape[0], m.input_shape[1], m.input_shape[2], m.input_shape[3]
            ),
        );
        kv("margin", self.loss.margin.to_string());
        kv("lambda", self.loss.lambda.to_string());
        kv("batch_half", self.loss.batch_half.to_string());
        kv("lr", self.hyper.lr_base.to_string());
        kv("weight_decay", self.hyper.weight_decay.to_string());
        kv("beta1", self.hyper.beta1.to_string());
        kv("beta2", self.hyper.beta2.to_string());
        kv("adam_eps", self.hyper.eps.to_string());
        kv("epochs", self.epochs.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("model_seed", m.seed.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("feature_seed", self.feature_seed.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("stop_auc", self.stop_auc.to_string());
        s
    }
}

/// One scored clip of an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub label: u8,
    pub score: f32,
}

pub fn eval_csv(rows: &[ScoreRow]) -> String {
    let mut s = String::from("id,label,score\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.8e}\n", r.id, r.label, r.score));
    }
    s
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub epochs_run: u64,
    pub final_train_auc: f64,
    pub final_eval_auc: Option<f64>,
    pub stopped_early: bool,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub auc: f64,
    pub rows: Vec<ScoreRow>,
}

fn load_clip_tensors(manifest: &Manifest, expect: &[usize; 4]) -> Result<Vec<Tensor<f32>>> {
    let tensors: Vec<Tensor<f32>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let clip = read_feature_file(&e.path)?;
            if clip.tensor.shape() != expect {
                return Err(Error::Config(format!(
                    "clip {} has shape {:?}, model expects {:?}",
                    e.id,
                    clip.tensor.shape(),
                    expect
                )));
            }
            if !clip.tensor.all_finite() {
                return Err(Error::NonFinite(format!(
                    "clip {} contains NaN/Inf values",
                    e.id
                )));
            }
            Ok(clip.tensor)
        })
        .collect::<Result<_>>()?;
    Ok(tensors)
}

fn score_cached(
    model: &Model<f32>,
    manifest: &Manifest,
    tensors: &[Tensor<f32>],
) -> Result<Vec<ScoreRow>> {
    manifest
        .entries
        .par_iter()
        .zip(tensors.par_iter())
        .map(|(e, t)| {
            let (_, score) = model.forward(t)?;
            Ok(ScoreRow {
                id: e.id.clone(),
                label: e.label.as_byte(),
                score,
            })
        })
        .collect()
}

fn auc_of_rows(rows: &[ScoreRow]) -> Result<f64> {
    let set = ScoredSet::new(
        rows.iter().map(|r| r.score as f64).collect(),
        rows.iter().map(|r| r.label).collect(),
    )?;
    auc_roc(&set)
}

/// Embeddings for every clip of a manifest, in manifest order. Used by the
/// separation analyses around training.
pub fn embed_manifest(model: &Model<f32>, manifest: &Manifest) -> Result<Vec<(u8, Vec<f32>)>> {
    let tensors = load_clip_tensors(manifest, &model.config().input_shape)?;
    manifest
        .entries
        .par_iter()
        .zip(tensors.par_iter())
        .map(|(e, t)| {
            let (emb, _) = model.forward(t)?;
            Ok((e.label.as_byte(), emb.values))
        })
        .collect()
}

const FEATURE_MAP_TENSOR: &str = "feature_map.w_rand";

/// Assemble a checkpoint: config text, parameters, feature map, optimizer
/// moments and step counter.
pub fn checkpoint_from(
    model: &Model<f32>,
    opt: &OptimState<f32>,
    config_text: String,
) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
    for (name, t) in model.params.iter() {
        tensors.push((name.clone(), t.clone()));
    }
    tensors.push((FEATURE_MAP_TENSOR.into(), model.feature_map.w_rand.clone()));
    for (name, m) in model.params.names().iter().zip(&opt.m) {
        tensors.push((format!("opt.m.{name}"), m.clone()));
    }
    for (name, v) in model.params.names().iter().zip(&opt.v) {
        tensors.push((format!("opt.v.{name}"), v.clone()));
    }
    tensors.push((
        "opt.step".into(),
        Tensor::new(vec![1], vec![opt.step as f32]).expect("step tensor"),
    ));
    Checkpoint {
        config_text,
        tensors,
    }
}

/// Rebuild model (and optimizer state, when present) from a checkpoint.
pub fn model_from_checkpoint(
    ck: &Checkpoint,
) -> Result<(Model<f32>, RunConfig, Option<OptimState<f32>>)> {
    let cfg = RunConfig::parse_kv(&ck.config_text, RunConfig::default())?;
    let by_name: HashMap<&str, &Tensor<f32>> =
        ck.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let plan = param_breakdown(&cfg.model)?;
    let mut names = Vec::with_capacity(plan.len());
    let mut tensors = Vec::with_capacity(plan.len());
    for p in &plan {
        let t = by_name
            .get(p.name.as_str())
            .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {}", p.name)))?;
        names.push(p.name.clone());
        tensors.push((*t).clone());
    }
    let w_rand = by_name
        .get(FEATURE_MAP_TENSOR)
        .ok_or_else(|| Error::Config(format!("checkpoint is missing {FEATURE_MAP_TENSOR}")))?;
    let fm = FeatureMapParams {
        w_rand: (*w_rand).clone(),
        m: cfg.model.random_features,
        seed: cfg.feature_seed,
        orthogonal: true,
    };
    let params = ParamSet::from_named(names.clone(), tensors)?;
    let model = Model::from_parts(cfg.model.clone(), params, fm)?;

    let opt = if by_name.contains_key("opt.step") {
        let step = by_name["opt.step"].data()[0] as u64;
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for n in &names {
            let mk = format!("opt.m.{n}");
            let vk = format!("opt.v.{n}");
            match (by_name.get(mk.as_str()), by_name.get(vk.as_str())) {
                (Some(mt), Some(vt)) => {
                    m.push((*mt).clone());
                    v.push((*vt).clone());
                }
                _ => {
                    return Err(Error::Config(format!(
                        "checkpoint is missing moments for {n}"
                    )))
                }
            }
        }
        Some(OptimState::from_parts(step, m, v))
    } else {
        None
    };
    Ok((model, cfg, opt))
}

struct TrunkPass {
    graph: Graph<f32>,
    leaves: Vec<NodeId>,
    emb: NodeId,
}

/// Train per the config; returns the outcome with paths to the log and the
/// final checkpoint. A non-finite loss or post-update parameter aborts the
/// run with the last written checkpoint left intact.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.model.validate()?;
    cfg.loss.validate()?;
    if cfg.loss.batch_half < 2 {
        return Err(Error::Config(
            "batch_half must be at least 2 (the triplet term needs a second normal)".into(),
        ));
    }
    let manifest_path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("train requires a manifest path".into()))?;
    let out_dir = cfg
        .out_dir
        .as_ref()
        .ok_or_else(|| Error::Config("train requires an out_dir".into()))?;
    let manifest = Manifest::load(manifest_path, Split::Train)?;
    let clips = load_clip_tensors(&manifest, &cfg.model.input_shape)?;
    let plan = crate::data::BatchPlan::new(&manifest, cfg.loss.batch_half, cfg.data_seed)?;
    let batches_per_epoch = plan.batches_per_epoch() as u64;
    if batches_per_epoch == 0 {
        return Err(Error::Config(
            "manifest too small for a single batch at this batch_half".into(),
        ));
    }
    let total_steps = if cfg.total_steps > 0 {
        cfg.total_steps
    } else {
        cfg.epochs * batches_per_epoch
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    fs::write(out_dir.join("run.cfg"), cfg.to_kv()).map_err(|e| Error::io(out_dir, e))?;
    let resolved = cfg.to_kv_portable();
    let log_path = out_dir.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "step,lr,bce,triplet,combined").map_err(|e| Error::io(&log_path, e))?;

    let mut model = Model::<f32>::init(cfg.model.clone(), cfg.feature_seed)?;
    let mut opt = OptimState::new(&model.params);
    let n = cfg.loss.batch_half;
    let labels: Vec<f64> = std::iter::repeat(0.0)
        .take(n)
        .chain(std::iter::repeat(1.0).take(n))
        .collect();
    let idx_w = model.params.index_of("classifier.weight")?;
    let idx_b = model.params.index_of("classifier.bias")?;

    let mut eval_cache: Option<(Manifest, Vec<Tensor<f32>>)> = None;
    let mut step: u64 = 0;
    let mut epochs_run: u64 = 0;
    let mut stopped_early = false;
    let mut final_eval_auc = None;

    'epochs: for epoch in 0..cfg.epochs {
        for batch in plan.epoch_batches(epoch) {
            let lr = cosine_lr(step, total_steps, cfg.hyper.lr_base);

            // phase 1: independent trunk forwards
            let trunks: Vec<TrunkPass> = batch
                .par_iter()
                .map(|&ci| {
                    let mut graph = Graph::new();
                    let leaves = model.param_leaves(&mut graph);
                    let input = graph.constant(clips[ci].clone());
                    let emb = model.trunk_forward(&mut graph, &leaves, input)?;
                    Ok(TrunkPass { graph, leaves, emb })
                })
                .collect::<Result<_>>()?;

            // phase 2: batch-coupled head
            let mut hg = Graph::<f32>::new();
            let emb_leaves: Vec<NodeId> = trunks
                .iter()
                .map(|t| hg.param(t.graph.value(t.emb).clone()))
                .collect();
            let w = hg.param(model.params.get("classifier.weight")?.clone());
            let b = hg.param(model.params.get("classifier.bias")?.clone());
            let mut logit_rows = Vec::with_capacity(2 * n);
            for &e in &emb_leaves {
                let logit = model.head_logit(&mut hg, w, b, e)?;
                logit_rows.push(hg.reshape(logit, &[1])?);
            }
            let stacked = hg.concat_rows(&logit_rows)?;
            let flat = hg.reshape(stacked, &[2 * n])?;
            let scores = hg.sigmoid(flat);
            let normals = hg.concat_rows(&emb_leaves[..n])?;
            let abnormals = hg.concat_rows(&emb_leaves[n..])?;
            let loss =
                combined_loss_nodes(&mut hg, scores, &labels, normals, abnormals, &cfg.loss)?;
            if !loss.breakdown.combined.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at step {step}; last checkpoint retained"
                )));
            }
            let hgrads = hg.backward(loss.combined)?;

            // phase 3: trunk backwards seeded with embedding gradients
            let d = cfg.model.embedding_dim();
            let seeds: Vec<Tensor<f32>> = emb_leaves
                .iter()
                .map(|&e| {
                    hgrads
                        .get(e)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(&[d]))
                })
                .collect();
            let per_clip: Vec<Vec<Option<Tensor<f32>>>> = trunks
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(t, seed)| {
                    let grads = t.graph.backward_seeded(t.emb, seed.clone())?;
                    Ok(t.leaves.iter().map(|&l| grads.get(l).cloned()).collect())
                })
                .collect::<Result<_>>()?;

            let mut acc: Vec<Tensor<f32>> = model
                .params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for clip_grads in &per_clip {
                for (a, g) in acc.iter_mut().zip(clip_grads) {
                    if let Some(g) = g {
                        a.add_assign(g)?;
                    }
                }
            }
            if let Some(gw) = hgrads.get(w) {
                acc[idx_w].add_assign(gw)?;
            }
            if let Some(gb) = hgrads.get(b) {
                acc[idx_b].add_assign(gb)?;
            }
            drop(trunks);

            adamw_step(&mut model.params, &acc, &mut opt, &cfg.hyper, lr)?;
            if model.params.tensors().iter().any(|t| !t.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "parameters diverged at step {step}; last checkpoint retained"
                )));
            }

            writeln!(
                log,
                "{},{:.8e},{:.8e},{:.8e},{:.8e}",
                step, lr, loss.breakdown.bce, loss.breakdown.triplet, loss.breakdown.combined
            )
            .map_err(|e| Error::io(&log_path, e))?;
            step += 1;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                let ck = checkpoint_from(&model, &opt, resolved.clone());
                write_checkpoint(&ck, &out_dir.join(format!("checkpoint-{step}.stck")))?;
            }
        }
        epochs_run = epoch + 1;

        if cfg.eval_every > 0 && epochs_run % cfg.eval_every == 0 {
            if let Some(eval_path) = &cfg.eval_manifest {
                if eval_cache.is_none() {
                    let em = Manifest::load(eval_path, Split::Test)?;
                    let et = load_clip_tensors(&em, &cfg.model.input_shape)?;
                    eval_cache = Some((em, et));
                }
                let (em, et) = eval_cache.as_ref().unwrap();
                let rows = score_cached(&model, em, et)?;
                let auc = auc_of_rows(&rows)?;
                final_eval_auc = Some(auc);
                if cfg.stop_auc > 0.0 && auc >= cfg.stop_auc {
                    stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }

    let rows = score_cached(&model, &manifest, &clips)?;
    let final_train_auc = auc_of_rows(&rows)?;
    let ck = checkpoint_from(&model, &opt, resolved);
    let ck_path = out_dir.join("checkpoint.stck");
    write_checkpoint(&ck, &ck_path)?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        steps: step,
        epochs_run,
        final_train_auc,
        final_eval_auc,
        stopped_early,
        checkpoint: ck_path,
        log: log_path,
    })
}

/// Score a manifest with a checkpointed model; rows follow manifest order.
pub fn evaluate(checkpoint: &Path, manifest_path: &Path) -> Result<EvalOutcome> {
    let ck = read_checkpoint(checkpoint)?;
    let (model, cfg, _) = model_from_checkpoint(&ck)?;
    let manifest = Manifest::load(manifest_path, Split::Test)?;
    let tensors = load_clip_tensors(&manifest, &cfg.model.input_shape)?;
    let rows = score_cached(&model, &manifest, &tensors)?;
    let auc = auc_of_rows(&rows)?;
    Ok(EvalOutcome { auc, rows })
}

/// Score an ordered sequence of clip files from one video (per-clip scores,
/// no AUC).
pub fn score_clip_files(checkpoint: &Path, files: &[PathBuf]) -> Result<Vec<ScoreRow>> {
    let ck = read_checkpoint(checkpoint)?;
    let (model, cfg, _) = model_from_checkpoint(&ck)?;
    files
        .iter()
        .map(|path| {
            let clip = read_feature_file(path)?;
            if clip.tensor.shape() != cfg.model.input_shape {
                return Err(Error::Config(format!(
                    "clip {} has shape {:?}, model expects {:?}",
                    clip.id,
                    clip.tensor.shape(),
                    cfg.model.input_shape
                )));
            }
            let (_, score) = model.forward(&clip.tensor)?;
            Ok(ScoreRow {
                id: clip.id,
                label: clip.label.as_byte(),
                score,
            })
        })
        .collect()
}

/// Reference totals reported for the two published configurations.
pub const REFERENCE_TOTALS_LINE: &str = "reference totals for comparison: fast 17,441 / base 1.63M";

/// Human-readable per-layer parameter table with grand total and the
/// published reference totals alongside.
pub fn render_inspect(cfg: &ModelConfig, label: &str) -> Result<String> {
    let rows = param_breakdown(cfg)?;
    let total = count_params(cfg)?;
    let mut s = String::new();
    s.push_str(&format!("parameter breakdown ({label})\n"));
    s.push_str(&format!(
        "{:<44} {:>20} {:>12}\n",
        "layer", "shape", "count"
    ));
    for r in &rows {
        let shape = format!("{:?}", r.shape);
        s.push_str(&format!("{:<44} {:>20} {:>12}\n", r.name, shape, r.count));
    }
    s.push_str(&format!("total trainable parameters: {total}\n"));
    s.push_str(REFERENCE_TOTALS_LINE);
    s.push('\n');
    Ok(s)
}
