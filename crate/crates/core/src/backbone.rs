//! The anomaly-detection network.
//!
//! A stack of decoupled spatio-temporal feature-enhancer blocks (pre-LN
//! (2+1)D convolution + FFN, both with residual adds), followed by
//! spatio-temporal attention blocks running linear attention over the
//! T*H*W token sequence, mean pooling to a d-vector embedding, and an
//! affine+logistic anomaly score.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::attention::{draw_feature_map, performer_attention_nodes, FeatureMapParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::PoolMode;
use crate::real::Real;
use crate::seeding::{rng, salt};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
/// Spatial kernel size (pad 1 preserves H, W).
const SPATIAL_K: usize = 3;
/// Temporal kernel size (pad 1 preserves T).
const TEMPORAL_K: usize = 3;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub enhancer_channels: usize,
    pub enhancer_depth: usize,
    pub attention_channels: usize,
    pub attention_depth: usize,
    /// Random-feature count of the attention kernel approximation.
    pub random_features: usize,
    /// Expected input feature shape (C, T, H, W).
    pub input_shape: [usize; 4],
    /// FFN hidden width as a multiple of the block width.
    pub ffn_expansion: f64,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl ModelConfig {
    /// Wide preset: enhancer 192 / attention 128, both depth 3.
    pub fn base() -> Self {
        ModelConfig {
            enhancer_channels: 192,
            enhancer_depth: 3,
            attention_channels: 128,
            attention_depth: 3,
            random_features: 256,
            input_shape: [192, 16, 10, 10],
            ffn_expansion: 4.0,
            seed: 0,
        }
    }

    /// Small preset: both widths 32, both depths 1.
    pub fn fast() -> Self {
        ModelConfig {
            enhancer_channels: 32,
            enhancer_depth: 1,
            attention_channels: 32,
            attention_depth: 1,
            random_features: 256,
            input_shape: [192, 16, 10, 10],
            ffn_expansion: 4.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enhancer_channels == 0 || self.attention_channels == 0 {
            return Err(Error::Config("block widths must be positive".into()));
        }
        if self.random_features == 0 {
            return Err(Error::Config("random_features must be positive".into()));
        }
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "input shape must be positive: {:?}",
                self.input_shape
            )));
        }
        if !(self.ffn_expansion > 0.0) || !self.ffn_expansion.is_finite() {
            return Err(Error::Config(format!(
                "ffn_expansion must be positive, got {}",
                self.ffn_expansion
            )));
        }
        Ok(())
    }

    fn ffn_hidden(&self, width: usize) -> usize {
        ((width as f64 * self.ffn_expansion).round() as usize).max(1)
    }

    /// Channel width entering the attention stack.
    fn width_after_enhancers(&self) -> usize {
        if self.enhancer_depth > 0 {
            self.enhancer_channels
        } else {
            self.input_shape[0]
        }
    }

    /// Embedding length d = attention width.
    pub fn embedding_dim(&self) -> usize {
        self.attention_channels
    }

    pub fn tokens(&self) -> usize {
        self.input_shape[1] * self.input_shape[2] * self.input_shape[3]
    }
}

/// One named trainable tensor in the breakdown table.
#[derive(Debug, Clone)]
pub struct ParamCount {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

struct LayerSpec {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

fn layer_plan(cfg: &ModelConfig) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    let mut plan: Vec<LayerSpec> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, kind: ParamKind| {
        plan.push(LayerSpec { name, shape, kind });
    };
    let ce = cfg.enhancer_channels;
    let ca = cfg.attention_channels;
    let mut c_prev = cfg.input_shape[0];

    for i in 0..cfg.enhancer_depth {
        let p = format!("enhancer.{i}");
        push(format!("{p}.norm1.gamma"), vec![c_prev], ParamKind::Gamma);
        push(format!("{p}.norm1.beta"), vec![c_prev], ParamKind::Beta);
        push(
            format!("{p}.conv_spatial.weight"),
            vec![ce, c_prev, SPATIAL_K, SPATIAL_K],
            ParamKind::Weight,
        );
        push(format!("{p}.conv_spatial.bias"), vec![ce], ParamKind::Bias);
        push(
            format!("{p}.conv_temporal.weight"),
            vec![ce, ce, TEMPORAL_K],
            ParamKind::Weight,
        );
        push(format!("{p}.conv_temporal.bias"), vec![ce], ParamKind::Bias);
        if c_prev != ce {
            push(
                format!("{p}.residual_proj.weight"),
                vec![ce, c_prev, 1, 1],
                ParamKind::Weight,
            );
            push(format!("{p}.residual_proj.bias"), vec![ce], ParamKind::Bias);
        }
        let hidden = cfg.ffn_hidden(ce);
        push(format!("{p}.norm2.gamma"), vec![ce], ParamKind::Gamma);
        push(format!("{p}.norm2.beta"), vec![ce], ParamKind::Beta);
        push(
            format!("{p}.ffn.w1.weight"),
            vec![hidden, ce],
            ParamKind::Weight,
        );
        push(format!("{p}.ffn.w1.bias"), vec![hidden], ParamKind::Bias);
        push(
            format!("{p}.ffn.w2.weight"),
            vec![ce, hidden],
            ParamKind::Weight,
        );
        push(format!("{p}.ffn.w2.bias"), vec![ce], ParamKind::Bias);
        c_prev = ce;
    }

    if c_prev != ca {
        push(
            "bridge.proj.weight".into(),
            vec![ca, c_prev],
            ParamKind::Weight,
        );
        push("bridge.proj.bias".into(), vec![ca], ParamKind::Bias);
        c_prev = ca;
    }
    let _ = c_prev;

    for i in 0..cfg.attention_depth {
        let p = format!("attention.{i}");
        push(format!("{p}.norm1.gamma"), vec![ca], ParamKind::Gamma);
        push(format!("{p}.norm1.beta"), vec![ca], ParamKind::Beta);
        for proj in ["wq", "wk", "wv", "wo"] {
            push(
                format!("{p}.{proj}.weight"),
                vec![ca, ca],
                ParamKind::Weight,
            );
            push(format!("{p}.{proj}.bias"), vec![ca], ParamKind::Bias);
        }
        let hidden = cfg.ffn_hidden(ca);
        push(format!("{p}.norm2.gamma"), vec![ca], ParamKind::Gamma);
        push(format!("{p}.norm2.beta"), vec![ca], ParamKind::Beta);
        push(
            format!("{p}.ffn.w1.weight"),
            vec![hidden, ca],
            ParamKind::Weight,
        );
        push(format!("{p}.ffn.w1.bias"), vec![hidden], ParamKind::Bias);
        push(
            format!("{p}.ffn.w2.weight"),
            vec![ca, hidden],
            ParamKind::Weight,
        );
        push(format!("{p}.ffn.w2.bias"), vec![ca], ParamKind::Bias);
    }

    push("classifier.weight".into(), vec![1, ca], ParamKind::Weight);
    push("classifier.bias".into(), vec![1], ParamKind::Bias);
    Ok(plan)
}

/// Per-layer name/shape/count table; seed- and data-independent.
pub fn param_breakdown(cfg: &ModelConfig) -> Result<Vec<ParamCount>> {
    Ok(layer_plan(cfg)?
        .into_iter()
        .map(|s| ParamCount {
            count: s.shape.iter().product(),
            name: s.name,
            shape: s.shape,
        })
        .collect())
}

/// Total trainable scalars for a configuration.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_breakdown(cfg)?.iter().map(|p| p.count).sum())
}

/// Ordered, named trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamSet<E> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
}

impl<E: Real> ParamSet<E> {
    fn init(cfg: &ModelConfig) -> Result<Self> {
        let plan = layer_plan(cfg)?;
        let mut r = rng(cfg.seed, salt::PARAM_INIT);
        let mut names = Vec::with_capacity(plan.len());
        let mut tensors = Vec::with_capacity(plan.len());
        for spec in plan {
            let t = match spec.kind {
                ParamKind::Weight => {
                    let fan_in: usize = spec.shape[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&spec.shape, |_| {
                        E::from_f64(r.sample::<f64, _>(StandardNormal) * std)
                    })
                }
                ParamKind::Bias | ParamKind::Beta => Tensor::zeros(&spec.shape),
                ParamKind::Gamma => Tensor::full(&spec.shape, E::ONE),
            };
            names.push(spec.name);
            tensors.push(t);
        }
        Ok(ParamSet { names, tensors })
    }

    pub fn from_named(names: Vec<String>, tensors: Vec<Tensor<E>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Contract("names/tensors length mismatch".into()));
        }
        Ok(ParamSet { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        Ok(&self.tensors[self.index_of(name)?])
    }

    pub fn set(&mut self, name: &str, t: Tensor<E>) -> Result<()> {
        let i = self.index_of(name)?;
        if self.tensors[i].shape() != t.shape() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, got {:?}",
                self.tensors[i].shape(),
                t.shape()
            )));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.elems()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.names.iter().zip(self.tensors.iter())
    }
}

/// Final per-video representation of length d.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<E> {
    pub values: Vec<E>,
}

impl<E: Real> Embedding<E> {
    pub fn new(values: Vec<E>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding contains NaN/Inf".into()));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &Embedding<E>) -> E {
        let mut acc = E::ZERO;
        for (a, b) in self.values.iter().zip(&other.values) {
            let d = *a - *b;
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// The network: config, trainable parameters, and the fixed (non-trainable)
/// attention feature map drawn once per run from its own seed.
#[derive(Debug, Clone)]
pub struct Model<E> {
    cfg: ModelConfig,
    pub params: ParamSet<E>,
    pub feature_map: FeatureMapParams<E>,
}

impl<E: Real> Model<E> {
    pub fn init(cfg: ModelConfig, feature_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = ParamSet::init(&cfg)?;
        let feature_map = draw_feature_map(
            cfg.attention_channels,
            cfg.random_features,
            feature_seed,
            true,
        );
        Ok(Model {
            cfg,
            params,
            feature_map,
        })
    }

    /// Rebuild from checkpoint pieces; shapes are validated against the plan.
    pub fn from_parts(
        cfg: ModelConfig,
        params: ParamSet<E>,
        feature_map: FeatureMapParams<E>,
    ) -> Result<Self> {
        let plan = layer_plan(&cfg)?;
        if plan.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, config implies {}",
                params.len(),
                plan.len()
            )));
        }
        for (spec, (name, t)) in plan.iter().zip(params.iter()) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter {name} {:?} does not match plan entry {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        if feature_map.input_width() != cfg.attention_channels
            || feature_map.m != cfg.random_features
        {
            return Err(Error::Config(format!(
                "feature map ({} x {}) does not match config (m={}, C={})",
                feature_map.m,
                feature_map.input_width(),
                cfg.random_features,
                cfg.attention_channels
            )));
        }
        Ok(Model {
            cfg,
            params,
            feature_map,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Load every parameter as a grad-tracked leaf; returned ids align with
    /// `params` order.
    pub fn param_leaves(&self, g: &mut Graph<E>) -> Vec<NodeId> {
        self.params
            .tensors()
            .iter()
            .map(|t| g.param(t.clone()))
            .collect()
    }

    fn leaf(&self, leaves: &[NodeId], name: &str) -> Result<NodeId> {
        Ok(leaves[self.params.index_of(name)?])
    }

    /// (C, T, H, W) -> (L, C) token matrix.
    fn to_tokens(&self, g: &mut Graph<E>, x: NodeId) -> Result<NodeId> {
        let s = g.value(x).shape().to_vec();
        let l = s[1] * s[2] * s[3];
        let flat = g.reshape(x, &[s[0], l])?;
        g.transpose(flat)
    }

    fn from_tokens(&self, g: &mut Graph<E>, tok: NodeId, shape: &[usize]) -> Result<NodeId> {
        let back = g.transpose(tok)?;
        g.reshape(back, shape)
    }

    fn ffn(
        &self,
        g: &mut Graph<E>,
        prefix: &str,
        leaves: &[NodeId],
        tok: NodeId,
    ) -> Result<NodeId> {
        let gamma = self.leaf(leaves, &format!("{prefix}.norm2.gamma"))?;
        let beta = self.leaf(leaves, &format!("{prefix}.norm2.beta"))?;
        let w1 = self.leaf(leaves, &format!("{prefix}.ffn.w1.weight"))?;
        let b1 = self.leaf(leaves, &format!("{prefix}.ffn.w1.bias"))?;
        let w2 = self.leaf(leaves, &format!("{prefix}.ffn.w2.weight"))?;
        let b2 = self.leaf(leaves, &format!("{prefix}.ffn.w2.bias"))?;
        let n = g.layer_norm(tok, gamma, beta, 1, LN_EPS)?;
        let w1t = g.transpose(w1)?;
        let h = g.matmul(n, w1t)?;
        let h = g.add_bias_rows(h, b1)?;
        let h = g.gelu(h);
        let w2t = g.transpose(w2)?;
        let out = g.matmul(h, w2t)?;
        let out = g.add_bias_rows(out, b2)?;
        g.add(tok, out)
    }

    /// Pre-LN (2+1)D convolution with residual, then pre-LN FFN with residual.
    pub fn enhancer_block(
        &self,
        g: &mut Graph<E>,
        leaves: &[NodeId],
        index: usize,
        x: NodeId,
    ) -> Result<NodeId> {
        let p = format!("enhancer.{index}");
        let gamma = self.leaf(leaves, &format!("{p}.norm1.gamma"))?;
        let beta = self.leaf(leaves, &format!("{p}.norm1.beta"))?;
        let ws = self.leaf(leaves, &format!("{p}.conv_spatial.weight"))?;
        let bs = self.leaf(leaves, &format!("{p}.conv_spatial.bias"))?;
        let wt = self.leaf(leaves, &format!("{p}.conv_temporal.weight"))?;
        let bt = self.leaf(leaves, &format!("{p}.conv_temporal.bias"))?;

        let c_in = g.value(x).shape()[0];
        let c_out = g.value(ws).shape()[0];

        let n1 = g.layer_norm(x, gamma, beta, 0, LN_EPS)?;
        let cs = g.conv2d_spatial(n1, ws, bs, 1, SPATIAL_K / 2)?;
        let ct = g.conv1d_temporal(cs, wt, bt, TEMPORAL_K / 2)?;
        let residual = if c_in == c_out {
            x
        } else {
            let wp = self.leaf(leaves, &format!("{p}.residual_proj.weight"))?;
            let bp = self.leaf(leaves, &format!("{p}.residual_proj.bias"))?;
            g.conv2d_spatial(x, wp, bp, 1, 0)?
        };
        let merged = g.add(ct, residual)?;

        let shape = g.value(merged).shape().to_vec();
        let tok = self.to_tokens(g, merged)?;
        let tok = self.ffn(g, &p, leaves, tok)?;
        self.from_tokens(g, tok, &shape)
    }

    /// Pre-LN linear attention with residual, then pre-LN FFN with residual,
    /// operating on the (L, C) token matrix.
    pub fn attention_block(
        &self,
        g: &mut Graph<E>,
        leaves: &[NodeId],
        index: usize,
        tok: NodeId,
    ) -> Result<NodeId> {
        let p = format!("attention.{index}");
        let gamma = self.leaf(leaves, &format!("{p}.norm1.gamma"))?;
        let beta = self.leaf(leaves, &format!("{p}.norm1.beta"))?;
        let n1 = g.layer_norm(tok, gamma, beta, 1, LN_EPS)?;
        let proj = |g: &mut Graph<E>, which: &str, input: NodeId| -> Result<NodeId> {
            let w = self.leaf(leaves, &format!("{p}.{which}.weight"))?;
            let b = self.leaf(leaves, &format!("{p}.{which}.bias"))?;
            let wt = g.transpose(w)?;
            let y = g.matmul(input, wt)?;
            g.add_bias_rows(y, b)
        };
        let q = proj(g, "wq", n1)?;
        let k = proj(g, "wk", n1)?;
        let v = proj(g, "wv", n1)?;
        let att = performer_attention_nodes(g, q, k, v, &self.feature_map)?;
        let att = proj(g, "wo", att)?;
        let tok = g.add(tok, att)?;
        self.ffn(g, &p, leaves, tok)
    }

    /// Embedding trunk: enhancer stack, optional channel bridge, attention
    /// stack, mean pool over all tokens. Returns the (d,) embedding node.
    pub fn trunk_forward(
        &self,
        g: &mut Graph<E>,
        leaves: &[NodeId],
        input: NodeId,
    ) -> Result<NodeId> {
        let got = g.value(input).shape().to_vec();
        if got != self.cfg.input_shape {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match configured {:?}",
                got, self.cfg.input_shape
            )));
        }
        let mut x = input;
        for i in 0..self.cfg.enhancer_depth {
            x = self.enhancer_block(g, leaves, i, x)?;
        }
        let mut tok = self.to_tokens(g, x)?;
        if self.cfg.width_after_enhancers() != self.cfg.attention_channels {
            let w = self.leaf(leaves, "bridge.proj.weight")?;
            let b = self.leaf(leaves, "bridge.proj.bias")?;
            let wt = g.transpose(w)?;
            tok = g.matmul(tok, wt)?;
            tok = g.add_bias_rows(tok, b)?;
        }
        for i in 0..self.cfg.attention_depth {
            tok = self.attention_block(g, leaves, i, tok)?;
        }
        g.pool(tok, &[0], PoolMode::Mean)
    }

    /// Classifier head on an embedding node: logit = w . e + b. Returns the
    /// (1, 1) logit node; apply sigmoid for the score.
    pub fn head_logit(
        &self,
        g: &mut Graph<E>,
        w: NodeId,
        b: NodeId,
        embedding: NodeId,
    ) -> Result<NodeId> {
        let d = g.value(embedding).elems();
        let row = g.reshape(embedding, &[1, d])?;
        let wt = g.transpose(w)?;
        let logit = g.matmul(row, wt)?;
        g.add_bias_rows(logit, b)
    }

    /// Inference on one clip: embedding plus anomaly score in (0, 1).
    pub fn forward(&self, features: &Tensor<E>) -> Result<(Embedding<E>, E)> {
        let mut g = Graph::new();
        let leaves = self.param_leaves(&mut g);
        let input = g.constant(features.clone());
        let emb = self.trunk_forward(&mut g, &leaves, input)?;
        let w = self.leaf(&leaves, "classifier.weight")?;
        let b = self.leaf(&leaves, "classifier.bias")?;
        let logit = self.head_logit(&mut g, w, b, emb)?;
        let score = g.sigmoid(logit);
        let emb_v = Embedding::new(g.value(emb).data().to_vec())?;
        Ok((emb_v, g.value(score).item()?))
    }
}
