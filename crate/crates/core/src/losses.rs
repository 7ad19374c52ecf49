//! Training objective: triplet separation plus binary cross-entropy.
//!
//! The differentiable forms live on the graph ([`Graph::triplet_loss`],
//! [`Graph::bce_loss`]); this module adds the weighted combination and plain
//! value-level wrappers for callers outside a training step.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::tensor::Tensor;

/// Margin, triplet weight and batch half-size.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Maximum enforced normal-abnormal embedding distance M.
    pub margin: f64,
    /// Weight of the triplet term in the combined loss.
    pub lambda: f64,
    /// N: each batch holds N normal and N abnormal samples.
    pub batch_half: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 100.0,
            lambda: 1.0,
            batch_half: 16,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 || !self.margin.is_finite() {
            return Err(Error::Config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.batch_half == 0 {
            return Err(Error::Config("batch_half must be positive".into()));
        }
        Ok(())
    }
}

/// Per-component loss values of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<E> {
    pub bce: E,
    pub triplet: E,
    pub combined: E,
}

/// Graph nodes of the combined objective, plus the component values.
pub struct CombinedLossNodes<E> {
    pub bce: NodeId,
    pub triplet: NodeId,
    pub combined: NodeId,
    pub breakdown: LossBreakdown<E>,
}

/// combined = bce + lambda * triplet, built on the graph so gradients reach
/// both the classifier head and the embedding trunk. With lambda = 0 the
/// triplet value is still reported but contributes no gradient.
pub fn combined_loss_nodes<E: Real>(
    g: &mut Graph<E>,
    scores: NodeId,
    labels: &[f64],
    normals: NodeId,
    abnormals: NodeId,
    cfg: &LossConfig,
) -> Result<CombinedLossNodes<E>> {
    cfg.validate()?;
    let bce = g.bce_loss(scores, labels)?;
    let triplet = g.triplet_loss(normals, abnormals, cfg.margin)?;
    let weighted = g.scale(triplet, cfg.lambda);
    let combined = g.add(bce, weighted)?;
    let breakdown = LossBreakdown {
        bce: g.value(bce).item()?,
        triplet: g.value(triplet).item()?,
        combined: g.value(combined).item()?,
    };
    Ok(CombinedLossNodes {
        bce,
        triplet,
        combined,
        breakdown,
    })
}

/// Value-only triplet loss.
pub fn triplet_loss<E: Real>(normals: &Tensor<E>, abnormals: &Tensor<E>, margin: f64) -> Result<E> {
    let mut g = Graph::new();
    let n = g.constant(normals.clone());
    let a = g.constant(abnormals.clone());
    let node = g.triplet_loss(n, a, margin)?;
    g.value(node).item()
}

/// Value-only binary cross-entropy.
pub fn bce_loss<E: Real>(scores: &[E], labels: &[f64]) -> Result<E> {
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(vec![scores.len()], scores.to_vec())?);
    let node = g.bce_loss(s, labels)?;
    g.value(node).item()
}

/// Value-only combined loss.
pub fn combined_loss<E: Real>(
    scores: &[E],
    labels: &[f64],
    normals: &Tensor<E>,
    abnormals: &Tensor<E>,
    cfg: &LossConfig,
) -> Result<LossBreakdown<E>> {
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(vec![scores.len()], scores.to_vec())?);
    let n = g.constant(normals.clone());
    let a = g.constant(abnormals.clone());
    let nodes = combined_loss_nodes(&mut g, s, labels, n, a, cfg)?;
    Ok(nodes.breakdown)
}
