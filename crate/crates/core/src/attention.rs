//! Exact softmax attention and its linear-time kernel approximation.
//!
//! The exact path materializes the full L x L score matrix and serves as the
//! correctness oracle. The approximate path maps queries and keys through
//! positive random features so attention factorizes as
//! `phi(Q) (phi(K)^T V) / (phi(Q) (phi(K)^T 1))`, costing O(L * m * C) time
//! and O(L * (m + C)) memory with no L x L intermediate.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::matmul;
use crate::real::Real;
use crate::seeding::{rng, salt};
use crate::tensor::Tensor;

/// Query/key/value triple of shape (L, C) each.
#[derive(Debug, Clone)]
pub struct AttentionBundle<E> {
    pub q: Tensor<E>,
    pub k: Tensor<E>,
    pub v: Tensor<E>,
}

impl<E: Real> AttentionBundle<E> {
    pub fn new(q: Tensor<E>, k: Tensor<E>, v: Tensor<E>) -> Result<Self> {
        for (name, t) in [("q", &q), ("k", &k), ("v", &v)] {
            if t.rank() != 2 {
                return Err(Error::Shape(format!(
                    "attention {name} must be (L, C), got {:?}",
                    t.shape()
                )));
            }
        }
        if q.shape() != k.shape() || q.shape()[0] != v.shape()[0] {
            return Err(Error::Shape(format!(
                "attention shapes disagree: q {:?}, k {:?}, v {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        Ok(AttentionBundle { q, k, v })
    }

    pub fn len(&self) -> usize {
        self.q.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.q.shape()[1]
    }
}

/// Random projection realizing the softmax-kernel feature map.
#[derive(Debug, Clone)]
pub struct FeatureMapParams<E> {
    /// (m, C) projection directions.
    pub w_rand: Tensor<E>,
    /// Random-feature count; also the feature-map output width.
    pub m: usize,
    pub seed: u64,
    pub orthogonal: bool,
}

impl<E: Real> FeatureMapParams<E> {
    pub fn input_width(&self) -> usize {
        self.w_rand.shape()[1]
    }

    pub fn cast<F: Real>(&self) -> FeatureMapParams<F> {
        FeatureMapParams {
            w_rand: self.w_rand.cast(),
            m: self.m,
            seed: self.seed,
            orthogonal: self.orthogonal,
        }
    }
}

/// Draw projection rows: iid Gaussian, or blockwise-orthogonal rows with
/// norms redrawn from the chi(C) distribution of Gaussian vector lengths.
pub fn draw_feature_map<E: Real>(
    c: usize,
    m: usize,
    seed: u64,
    orthogonal: bool,
) -> FeatureMapParams<E> {
    assert!(c > 0 && m > 0, "feature map needs positive dimensions");
    let mut r = rng(seed, salt::FEATURE_MAP);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    if orthogonal {
        while rows.len() < m {
            let block = (m - rows.len()).min(c);
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(block);
            while basis.len() < block {
                let mut v: Vec<f64> = (0..c).map(|_| r.sample(StandardNormal)).collect();
                for b in &basis {
                    let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= dot * bi;
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    continue; // degenerate draw, retry
                }
                for vi in &mut v {
                    *vi /= norm;
                }
                basis.push(v);
            }
            for mut v in basis {
                let target: f64 = (0..c)
                    .map(|_| {
                        let z: f64 = r.sample(StandardNormal);
                        z * z
                    })
                    .sum::<f64>()
                    .sqrt();
                for vi in &mut v {
                    *vi *= target;
                }
                rows.push(v);
            }
        }
    } else {
        for _ in 0..m {
            rows.push((0..c).map(|_| r.sample(StandardNormal)).collect());
        }
    }
    let data: Vec<E> = rows.into_iter().flatten().map(E::from_f64).collect();
    FeatureMapParams {
        w_rand: Tensor::new(vec![m, c], data).expect("feature map shape"),
        m,
        seed,
        orthogonal,
    }
}

/// phi(x)_i = m^{-1/2} * exp(w_i . x - |x|^2 / 2), strictly positive.
///
/// Callers targeting `exp(QK^T / sqrt(C))` pre-scale both inputs by
/// C^{-1/4}; this function applies the raw map.
pub fn positive_feature_map<E: Real>(x: &Tensor<E>, p: &FeatureMapParams<E>) -> Result<Tensor<E>> {
    if x.rank() != 2 || x.shape()[1] != p.input_width() {
        return Err(Error::Shape(format!(
            "feature map expects (L, {}), got {:?}",
            p.input_width(),
            x.shape()
        )));
    }
    let l = x.shape()[0];
    let c = x.shape()[1];
    // projections: (L, m) = x . W^T
    let mut proj = Tensor::zeros(&[l, p.m]);
    E::gemm(
        l,
        c,
        p.m,
        E::ONE,
        x.data(),
        c as isize,
        1,
        p.w_rand.data(),
        1,
        c as isize,
        E::ZERO,
        proj.data_mut(),
        p.m as isize,
        1,
    );
    let inv_sqrt_m = E::from_f64(1.0 / (p.m as f64).sqrt());
    let xd = x.data();
    let m = p.m;
    let data = proj.data_mut();
    for row in 0..l {
        let mut sq = E::ZERO;
        for &v in &xd[row * c..(row + 1) * c] {
            sq += v * v;
        }
        let half_sq = sq * E::from_f64(0.5);
        for v in &mut data[row * m..(row + 1) * m] {
            *v = (*v - half_sq).exp() * inv_sqrt_m;
        }
    }
    Ok(proj)
}

/// Row-wise softmax(Q K^T / sqrt(C)) V. O(L^2) time and memory by design;
/// this is the oracle the approximation is judged against.
pub fn exact_attention<E: Real>(b: &AttentionBundle<E>) -> Result<Tensor<E>> {
    let l = b.len();
    let c = b.width();
    let scale = E::from_f64(1.0 / (c as f64).sqrt());
    // scores = Q K^T / sqrt(C): (L, L)
    let mut weights = Tensor::zeros(&[l, l]);
    E::gemm(
        l,
        c,
        l,
        scale,
        b.q.data(),
        c as isize,
        1,
        b.k.data(),
        1,
        c as isize,
        E::ZERO,
        weights.data_mut(),
        l as isize,
        1,
    );
    for row in weights.data_mut().chunks_mut(l) {
        let mut max = row[0];
        for &v in row.iter() {
            max = max.maximum(v);
        }
        let mut sum = E::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    matmul(&weights, &b.v)
}

const NORMALIZER_FLOOR: f64 = 1e-8;

/// Query rows are processed in blocks this size so the per-block feature
/// matrix stays cache resident at any L.
const QUERY_BLOCK: usize = 256;

/// Linear-attention forward: phi(Q) (phi(K)^T V) / D_hat without any L x L
/// intermediate. Exponents are shifted (per query row, globally for keys)
/// before exponentiation; the shifts cancel in the ratio.
pub fn performer_attention<E: Real>(
    b: &AttentionBundle<E>,
    p: &FeatureMapParams<E>,
) -> Result<Tensor<E>> {
    if b.width() != p.input_width() {
        return Err(Error::Shape(format!(
            "feature map width {} does not match attention width {}",
            p.input_width(),
            b.width()
        )));
    }
    let l = b.len();
    let c = b.width();
    let m = p.m;
    let pre = E::from_f64(1.0 / (c as f64).sqrt().sqrt());
    let inv_sqrt_m = E::from_f64(1.0 / (m as f64).sqrt());
    let half = E::from_f64(0.5);

    let half_sq = |x: &[E]| -> E {
        let mut sq = E::ZERO;
        for &v in x {
            let s = v * pre;
            sq += s * s;
        }
        sq * half
    };

    // keys: materialize exponents once, shift by the global max (uniform, so
    // it cancels between numerator and normalizer), fold phi(K)^T 1 into the
    // exponentiation pass
    let mut phi_k = Tensor::zeros(&[l, m]);
    E::gemm(
        l,
        c,
        m,
        pre,
        b.k.data(),
        c as isize,
        1,
        p.w_rand.data(),
        1,
        c as isize,
        E::ZERO,
        phi_k.data_mut(),
        m as isize,
        1,
    );
    let mut k_shift = E::from_f64(f64::NEG_INFINITY);
    for (row, kd) in phi_k.data_mut().chunks_mut(m).zip(b.k.data().chunks(c)) {
        let h = half_sq(kd);
        let mut mx = row[0] - h;
        for v in row.iter_mut() {
            *v = *v - h;
            mx = mx.maximum(*v);
        }
        k_shift = k_shift.maximum(mx);
    }
    let mut ksum = vec![E::ZERO; m];
    for row in phi_k.data_mut().chunks_mut(m) {
        for (v, acc) in row.iter_mut().zip(ksum.iter_mut()) {
            *v = (*v - k_shift).exp() * inv_sqrt_m;
            *acc += *v;
        }
    }

    // kv = phi(K)^T V: (m, C)
    let mut kv = Tensor::zeros(&[m, c]);
    E::gemm(
        m,
        l,
        c,
        E::ONE,
        phi_k.data(),
        1,
        m as isize,
        b.v.data(),
        c as isize,
        1,
        E::ZERO,
        kv.data_mut(),
        c as isize,
        1,
    );
    drop(phi_k);

    // queries: blocked so the (rows x m) feature slab stays in cache; the
    // per-row shift cancels exactly in num / den
    let mut out = Tensor::zeros(&[l, c]);
    let mut slab = vec![E::ZERO; QUERY_BLOCK.min(l) * m];
    let mut row0 = 0;
    while row0 < l {
        let rows = QUERY_BLOCK.min(l - row0);
        let block = &mut slab[..rows * m];
        E::gemm(
            rows,
            c,
            m,
            pre,
            &b.q.data()[row0 * c..],
            c as isize,
            1,
            p.w_rand.data(),
            1,
            c as isize,
            E::ZERO,
            block,
            m as isize,
            1,
        );
        let mut dens = vec![E::ZERO; rows];
        let mut shifts = vec![E::ZERO; rows];
        for (r, row) in block.chunks_mut(m).enumerate() {
            let h = half_sq(&b.q.data()[(row0 + r) * c..(row0 + r + 1) * c]);
            let mut mx = row[0] - h;
            for v in row.iter_mut() {
                *v = *v - h;
                mx = mx.maximum(*v);
            }
            let mut den = E::ZERO;
            for (v, &ks) in row.iter_mut().zip(&ksum) {
                *v = (*v - mx).exp() * inv_sqrt_m;
                den += *v * ks;
            }
            shifts[r] = mx;
            dens[r] = den;
        }
        E::gemm(
            rows,
            m,
            c,
            E::ONE,
            block,
            m as isize,
            1,
            kv.data(),
            c as isize,
            1,
            E::ZERO,
            &mut out.data_mut()[row0 * c..],
            c as isize,
            1,
        );
        for r in 0..rows {
            // undo the stabilizing shifts to test the true normalizer
            let true_den = dens[r].to_f64() * (shifts[r].to_f64() + k_shift.to_f64()).exp();
            if !(true_den > NORMALIZER_FLOOR) {
                return Err(Error::Underflow { row: row0 + r });
            }
            for v in &mut out.data_mut()[(row0 + r) * c..(row0 + r + 1) * c] {
                *v = *v / dens[r];
            }
        }
        row0 += rows;
    }
    Ok(out)
}

/// Graph-building variant of [`performer_attention`] for training. The
/// stabilizing shifts are detached constants; they cancel exactly in the
/// output, so the gradient is unaffected.
pub fn performer_attention_nodes<E: Real>(
    g: &mut Graph<E>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    p: &FeatureMapParams<E>,
) -> Result<NodeId> {
    let (l, c) = {
        let vq = g.value(q);
        if vq.rank() != 2 {
            return Err(Error::Shape(format!(
                "performer q must be (L, C), got {:?}",
                vq.shape()
            )));
        }
        (vq.shape()[0], vq.shape()[1])
    };
    if c != p.input_width() {
        return Err(Error::Shape(format!(
            "feature map width {} does not match attention width {c}",
            p.input_width()
        )));
    }
    let pre = 1.0 / (c as f64).sqrt().sqrt();
    let w_t = g.constant({
        // (C, m) so projections are a plain matmul
        let w = &p.w_rand;
        let m = p.m;
        let wd = w.data();
        Tensor::from_fn(&[c, m], |i| {
            let (ci, mi) = (i / m, i % m);
            wd[mi * c + ci]
        })
    });

    let feature_nodes =
        |g: &mut Graph<E>, x: NodeId, global_shift: bool| -> Result<(NodeId, Vec<E>)> {
            let xs = g.scale(x, pre);
            let proj = g.matmul(xs, w_t)?;
            let sq = g.row_sumsq(xs)?;
            let half_sq = g.scale(sq, 0.5);
            let expo = g.sub_col(proj, half_sq)?;
            // detached stabilizer: per-row max (queries) or global max (keys)
            let shifts: Vec<E> = {
                let vals = g.value(expo);
                if global_shift {
                    let mut mx = vals.data()[0];
                    for &v in vals.data() {
                        mx = mx.maximum(v);
                    }
                    vec![mx; l]
                } else {
                    vals.data()
                        .chunks(p.m)
                        .map(|row| {
                            let mut mx = row[0];
                            for &v in row {
                                mx = mx.maximum(v);
                            }
                            mx
                        })
                        .collect()
                }
            };
            let shift_col = g.constant(Tensor::new(vec![l, 1], shifts.clone())?);
            let shifted = g.sub_col(expo, shift_col)?;
            let e = g.exp(shifted);
            let phi = g.scale(e, 1.0 / (p.m as f64).sqrt());
            Ok((phi, shifts))
        };

    let (phi_q, q_shifts) = feature_nodes(g, q, false)?;
    let (phi_k, k_shifts) = feature_nodes(g, k, true)?;

    let phi_k_t = g.transpose(phi_k)?;
    let kv = g.matmul(phi_k_t, v)?;
    let ones = g.constant(Tensor::full(&[l, 1], E::ONE));
    let ksum = g.matmul(phi_k_t, ones)?;
    let num = g.matmul(phi_q, kv)?;
    let den = g.matmul(phi_q, ksum)?;
    {
        let dv = g.value(den);
        for row in 0..l {
            let true_den =
                dv.data()[row].to_f64() * (q_shifts[row].to_f64() + k_shifts[row].to_f64()).exp();
            if !(true_den > NORMALIZER_FLOOR) {
                return Err(Error::Underflow { row });
            }
        }
    }
    g.div_col(num, den)
}

/// One timing sample of the scaling probe.
#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub l: usize,
    pub exact_ns: u128,
    pub performer_ns: u128,
    pub m: usize,
    pub c: usize,
    pub rep: usize,
}

impl ProbeRow {
    pub const CSV_HEADER: &'static str = "L,exact_ns,performer_ns,m,C,rep";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.l, self.exact_ns, self.performer_ns, self.m, self.c, self.rep
        )
    }
}

/// Wall-clock scaling probe comparing the exact and approximate paths.
/// One warmup round per length is discarded; runs single-threaded.
pub fn attention_scaling_probe(
    l_values: &[usize],
    m: usize,
    c: usize,
    reps: usize,
) -> Vec<ProbeRow> {
    let mut rows = Vec::with_capacity(l_values.len() * reps);
    for &l in l_values {
        let mut r = rng(l as u64, salt::PROBE_INPUTS);
        let mut draw = |shape: &[usize]| {
            Tensor::<f32>::from_fn(shape, |_| {
                let z: f64 = r.sample(StandardNormal);
                z as f32
            })
        };
        let bundle = AttentionBundle::new(draw(&[l, c]), draw(&[l, c]), draw(&[l, c]))
            .expect("probe bundle");
        let fm = draw_feature_map::<f32>(c, m, 17, true);
        // warmup, discarded
        let _ = exact_attention(&bundle).expect("probe exact");
        let _ = performer_attention(&bundle, &fm).expect("probe performer");
        for rep in 0..reps {
            let t0 = Instant::now();
            let _ = exact_attention(&bundle).expect("probe exact");
            let exact_ns = t0.elapsed().as_nanos();
            let t1 = Instant::now();
            let _ = performer_attention(&bundle, &fm).expect("probe performer");
            let performer_ns = t1.elapsed().as_nanos();
            rows.push(ProbeRow {
                l,
                exact_ns,
                performer_ns,
                m,
                c,
                rep,
            });
        }
    }
    rows
}
