//! Shared test oracles: central finite differences and a logistic probe.
//!
//! Both are deliberately independent of the library's autodiff and training
//! paths: the FD checker uses only forward evaluations, and the probe is a
//! from-scratch gradient-descent logistic regression.

#![allow(dead_code)]

use vad_core::graph::{Graph, NodeId};
use vad_core::metrics::{auc_roc, ScoredSet};
use vad_core::tensor::Tensor;
use vad_core::Result;

pub struct FdReport {
    pub probes: usize,
    pub max_rel_err: f64,
}

/// Central finite differences (64-bit, step `h`) for a scalar-valued graph.
///
/// `build` constructs the graph from leaves (cloned from `inputs`, in order)
/// and returns the scalar loss node. Every element of every input is probed.
/// Relative error uses a 1e-3 denominator floor so near-zero gradients are
/// judged absolutely.
pub fn fd_check_scalar_loss(
    inputs: &[Tensor<f64>],
    h: f64,
    build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
) -> FdReport {
    // analytic gradients
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| g.param(t.clone().with_requires_grad(true)))
        .collect();
    let loss = build(&mut g, &ids).expect("fd build");
    assert!(g.value(loss).is_scalar(), "fd loss must be scalar");
    let grads = g.backward(loss).expect("fd backward");

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &ids).expect("fd eval build");
        g.value(loss).item().expect("fd eval scalar")
    };

    let mut probes = 0usize;
    let mut max_rel = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(ids[i]);
        for e in 0..input.elems() {
            let mut plus: Vec<Tensor<f64>> = inputs.to_vec();
            plus[i].data_mut()[e] += h;
            let mut minus: Vec<Tensor<f64>> = inputs.to_vec();
            minus[i].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.map(|t| t.data()[e]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / numeric.abs().max(a.abs()).max(1e-3);
            if rel > max_rel {
                max_rel = rel;
            }
            probes += 1;
        }
    }
    FdReport {
        probes,
        max_rel_err: max_rel,
    }
}

/// Deterministic tensor of uniform values in [-1, 1].
pub fn uniform_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut r = vad_core::seeding::rng(seed, 0xFD);
    Tensor::from_fn(shape, |_| r.random::<f64>() * 2.0 - 1.0)
}

/// Plain logistic-regression probe trained by gradient descent; returns the
/// AUC of its scores on the test set.
pub fn logistic_probe_auc(
    train_x: &[Vec<f64>],
    train_y: &[u8],
    test_x: &[Vec<f64>],
    test_y: &[u8],
    iters: usize,
    lr: f64,
    l2: f64,
) -> f64 {
    let dim = train_x[0].len();
    let n = train_x.len() as f64;
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    for _ in 0..iters {
        let mut gw = vec![0.0f64; dim];
        let mut gb = 0.0f64;
        for (x, &y) in train_x.iter().zip(train_y) {
            let z: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y as f64;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * (g / n + l2 * *wi);
        }
        b -= lr * gb / n;
    }
    let scores: Vec<f64> = test_x
        .iter()
        .map(|x| x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b)
        .collect();
    let set = ScoredSet::new(scores, test_y.to_vec()).expect("probe scored set");
    auc_roc(&set).expect("probe auc")
}

/// Per-slice features: spatial mean per channel, one C-vector per frame.
pub fn slice_features(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let s = t.shape();
    let (c, tt, hw) = (s[0], s[1], s[2] * s[3]);
    (0..tt)
        .map(|ti| {
            (0..c)
                .map(|ci| {
                    let base = ci * tt * hw + ti * hw;
                    t.data()[base..base + hw]
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>()
                        / hw as f64
                })
                .collect()
        })
        .collect()
}

/// Whole-clip features: the per-slice spatial means concatenated over T.
pub fn clip_features(t: &Tensor<f32>) -> Vec<f64> {
    slice_features(t).into_iter().flatten().collect()
}
