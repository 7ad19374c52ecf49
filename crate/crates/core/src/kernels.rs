//! Plain-tensor forward/backward kernels.
//!
//! The graph in [`crate::graph`] wires these into autodiff nodes; the pure
//! attention path reuses [`matmul`] directly. Convolutions lower to GEMM via
//! im2col-style gathers; the gather buffers are rebuilt during backward
//! instead of being saved on the tape.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

pub fn matmul<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, k) = rank2(a, "matmul lhs")?;
    let (k2, p) = rank2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[m, p]);
    E::gemm(
        m,
        k,
        p,
        E::ONE,
        a.data(),
        k as isize,
        1,
        b.data(),
        p as isize,
        1,
        E::ZERO,
        out.data_mut(),
        p as isize,
        1,
    );
    Ok(out)
}

/// grad wrt lhs: g . b^T
pub fn matmul_grad_lhs<E: Real>(g: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, p) = (g.shape()[0], g.shape()[1]);
    let k = b.shape()[0];
    let mut out = Tensor::zeros(&[m, k]);
    E::gemm(
        m,
        p,
        k,
        E::ONE,
        g.data(),
        p as isize,
        1,
        b.data(),
        1,
        p as isize,
        E::ZERO,
        out.data_mut(),
        k as isize,
        1,
    );
    out
}

/// grad wrt rhs: a^T . g
pub fn matmul_grad_rhs<E: Real>(a: &Tensor<E>, g: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let p = g.shape()[1];
    let mut out = Tensor::zeros(&[k, p]);
    E::gemm(
        k,
        m,
        p,
        E::ONE,
        a.data(),
        1,
        k as isize,
        g.data(),
        p as isize,
        1,
        E::ZERO,
        out.data_mut(),
        p as isize,
        1,
    );
    out
}

fn rank2<E: Real>(t: &Tensor<E>, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!(
            "{what} must be rank 2, got {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

// ---------------------------------------------------------------------------
// 2-D spatial convolution applied per temporal frame
// ---------------------------------------------------------------------------

pub struct Conv2dDims {
    pub c_in: usize,
    pub c_out: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub h_out: usize,
    pub w_out: usize,
}

pub fn conv2d_dims<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Conv2dDims> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects x rank 4 and weight rank 4, got {xs:?} and {ws:?}"
        )));
    }
    let (c_in, t, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, wc_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if wc_in != c_in || kh != kw {
        return Err(Error::Shape(format!(
            "conv2d weight {ws:?} incompatible with input {xs:?}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?}, expected [{c_out}]",
            bias.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be positive".into()));
    }
    let k = kh;
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::Shape(format!(
            "conv2d kernel {k} exceeds padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    let h_out = (h + 2 * pad - k) / stride + 1;
    let w_out = (w + 2 * pad - k) / stride + 1;
    Ok(Conv2dDims {
        c_in,
        c_out,
        t,
        h,
        w,
        k,
        h_out,
        w_out,
    })
}

/// Gather one frame into (c_in*k*k) x (h_out*w_out) patch matrix.
fn im2col_frame<E: Real>(
    x: &[E],
    d: &Conv2dDims,
    t: usize,
    stride: usize,
    pad: usize,
    p: &mut [E],
) {
    let sites = d.h_out * d.w_out;
    let frame_stride = d.t * d.h * d.w;
    for ci in 0..d.c_in {
        let base = ci * frame_stride + t * d.h * d.w;
        for dy in 0..d.k {
            for dx in 0..d.k {
                let row = (ci * d.k + dy) * d.k + dx;
                let prow = &mut p[row * sites..(row + 1) * sites];
                for oy in 0..d.h_out {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    let dst = &mut prow[oy * d.w_out..(oy + 1) * d.w_out];
                    if iy < 0 || iy >= d.h as isize {
                        dst.fill(E::ZERO);
                        continue;
                    }
                    let src_row = base + iy as usize * d.w;
                    for ox in 0..d.w_out {
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        dst[ox] = if ix < 0 || ix >= d.w as isize {
                            E::ZERO
                        } else {
                            x[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let d = conv2d_dims(x, weight, bias, stride, pad)?;
    let sites = d.h_out * d.w_out;
    let kk = d.c_in * d.k * d.k;
    let mut out = Tensor::zeros(&[d.c_out, d.t, d.h_out, d.w_out]);
    let mut patches = vec![E::ZERO; kk * sites];
    let out_frame_stride = (d.t * sites) as isize;
    for t in 0..d.t {
        im2col_frame(x.data(), &d, t, stride, pad, &mut patches);
        let c = &mut out.data_mut()[t * sites..];
        E::gemm(
            d.c_out,
            kk,
            sites,
            E::ONE,
            weight.data(),
            kk as isize,
            1,
            &patches,
            sites as isize,
            1,
            E::ZERO,
            c,
            out_frame_stride,
            1,
        );
    }
    let b = bias.data();
    let data = out.data_mut();
    for o in 0..d.c_out {
        for v in &mut data[o * d.t * sites..(o + 1) * d.t * sites] {
            *v += b[o];
        }
    }
    Ok(out)
}

/// Returns (grad_x, grad_weight, grad_bias).
pub fn conv2d_backward<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    pad: usize,
    gy: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let d = conv2d_dims(x, weight, bias, stride, pad)?;
    let sites = d.h_out * d.w_out;
    let kk = d.c_in * d.k * d.k;
    let gy_frame_stride = (d.t * sites) as isize;

    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(bias.shape());

    for o in 0..d.c_out {
        let mut acc = E::ZERO;
        for v in &gy.data()[o * d.t * sites..(o + 1) * d.t * sites] {
            acc += *v;
        }
        gb.data_mut()[o] = acc;
    }

    let mut patches = vec![E::ZERO; kk * sites];
    let mut gcols = vec![E::ZERO; kk * sites];
    let frame_stride = d.t * d.h * d.w;
    for t in 0..d.t {
        im2col_frame(x.data(), &d, t, stride, pad, &mut patches);
        // gw += gy_t . patches^T
        E::gemm(
            d.c_out,
            sites,
            kk,
            E::ONE,
            &gy.data()[t * sites..],
            gy_frame_stride,
            1,
            &patches,
            1,
            sites as isize,
            E::ONE,
            gw.data_mut(),
            kk as isize,
            1,
        );
        // gcols = weight^T . gy_t, then scatter back through the gather map
        E::gemm(
            kk,
            d.c_out,
            sites,
            E::ONE,
            weight.data(),
            1,
            kk as isize,
            &gy.data()[t * sites..],
            gy_frame_stride,
            1,
            E::ZERO,
            &mut gcols,
            sites as isize,
            1,
        );
        let gxd = gx.data_mut();
        for ci in 0..d.c_in {
            let base = ci * frame_stride + t * d.h * d.w;
            for dy in 0..d.k {
                for dx in 0..d.k {
                    let row = (ci * d.k + dy) * d.k + dx;
                    let grow = &gcols[row * sites..(row + 1) * sites];
                    for oy in 0..d.h_out {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let dst_row = base + iy as usize * d.w;
                        for ox in 0..d.w_out {
                            let ix = (ox * stride + dx) as isize - pad as isize;
                            if ix >= 0 && ix < d.w as isize {
                                gxd[dst_row + ix as usize] += grow[oy * d.w_out + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

// ---------------------------------------------------------------------------
// 1-D temporal convolution applied per spatial site
// ---------------------------------------------------------------------------

pub struct Conv1dDims {
    pub c_in: usize,
    pub c_out: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub t_out: usize,
}

pub fn conv1d_dims<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    pad: usize,
) -> Result<Conv1dDims> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 3 {
        return Err(Error::Shape(format!(
            "conv1d expects x rank 4 and weight rank 3, got {xs:?} and {ws:?}"
        )));
    }
    let (c_in, t, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, wc_in, k) = (ws[0], ws[1], ws[2]);
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv1d weight {ws:?} incompatible with input {xs:?}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv1d bias shape {:?}, expected [{c_out}]",
            bias.shape()
        )));
    }
    if t + 2 * pad < k {
        return Err(Error::Shape(format!(
            "conv1d kernel {k} exceeds padded length {}",
            t + 2 * pad
        )));
    }
    let t_out = t + 2 * pad - k + 1;
    Ok(Conv1dDims {
        c_in,
        c_out,
        t,
        h,
        w,
        k,
        t_out,
    })
}

/// Stack the k input frames feeding output frame `t_o` into (c_in*k) x (h*w).
fn slab_frame<E: Real>(x: &[E], d: &Conv1dDims, t_o: usize, pad: usize, s: &mut [E]) {
    let hw = d.h * d.w;
    for ci in 0..d.c_in {
        for dt in 0..d.k {
            let row = ci * d.k + dt;
            let dst = &mut s[row * hw..(row + 1) * hw];
            let it = (t_o + dt) as isize - pad as isize;
            if it < 0 || it >= d.t as isize {
                dst.fill(E::ZERO);
            } else {
                let src = ci * d.t * hw + it as usize * hw;
                dst.copy_from_slice(&x[src..src + hw]);
            }
        }
    }
}

pub fn conv1d_forward<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    pad: usize,
) -> Result<Tensor<E>> {
    let d = conv1d_dims(x, weight, bias, pad)?;
    let hw = d.h * d.w;
    let ck = d.c_in * d.k;
    let mut out = Tensor::zeros(&[d.c_out, d.t_out, d.h, d.w]);
    let mut slab = vec![E::ZERO; ck * hw];
    let out_stride = (d.t_out * hw) as isize;
    for t_o in 0..d.t_out {
        slab_frame(x.data(), &d, t_o, pad, &mut slab);
        E::gemm(
            d.c_out,
            ck,
            hw,
            E::ONE,
            weight.data(),
            ck as isize,
            1,
            &slab,
            hw as isize,
            1,
            E::ZERO,
            &mut out.data_mut()[t_o * hw..],
            out_stride,
            1,
        );
    }
    let b = bias.data();
    let data = out.data_mut();
    for o in 0..d.c_out {
        for v in &mut data[o * d.t_out * hw..(o + 1) * d.t_out * hw] {
            *v += b[o];
        }
    }
    Ok(out)
}

pub fn conv1d_backward<E: Real>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    pad: usize,
    gy: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let d = conv1d_dims(x, weight, bias, pad)?;
    let hw = d.h * d.w;
    let ck = d.c_in * d.k;
    let gy_stride = (d.t_out * hw) as isize;

    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(bias.shape());

    for o in 0..d.c_out {
        let mut acc = E::ZERO;
        for v in &gy.data()[o * d.t_out * hw..(o + 1) * d.t_out * hw] {
            acc += *v;
        }
        gb.data_mut()[o] = acc;
    }

    let mut slab = vec![E::ZERO; ck * hw];
    let mut gslab = vec![E::ZERO; ck * hw];
    for t_o in 0..d.t_out {
        slab_frame(x.data(), &d, t_o, pad, &mut slab);
        E::gemm(
            d.c_out,
            hw,
            ck,
            E::ONE,
            &gy.data()[t_o * hw..],
            gy_stride,
            1,
            &slab,
            1,
            hw as isize,
            E::ONE,
            gw.data_mut(),
            ck as isize,
            1,
        );
        E::gemm(
            ck,
            d.c_out,
            hw,
            E::ONE,
            weight.data(),
            1,
            ck as isize,
            &gy.data()[t_o * hw..],
            gy_stride,
            1,
            E::ZERO,
            &mut gslab,
            hw as isize,
            1,
        );
        let gxd = gx.data_mut();
        for ci in 0..d.c_in {
            for dt in 0..d.k {
                let it = (t_o + dt) as isize - pad as isize;
                if it < 0 || it >= d.t as isize {
                    continue;
                }
                let row = ci * d.k + dt;
                let src = &gslab[row * hw..(row + 1) * hw];
                let dst = ci * d.t * hw + it as usize * hw;
                for (a, b) in gxd[dst..dst + hw].iter_mut().zip(src) {
                    *a += *b;
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

// ---------------------------------------------------------------------------
// Layer normalization over an arbitrary axis
// ---------------------------------------------------------------------------

pub struct LayerNormOut<E> {
    pub y: Tensor<E>,
    /// (mean, inv_std) per normalized group, indexed by outer*inner + inner_idx.
    pub stats: Vec<(E, E)>,
}

fn ln_extents(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "layer_norm axis {axis} out of range for shape {shape:?}"
        )));
    }
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, n, inner))
}

pub fn layer_norm_forward<E: Real>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    axis: usize,
    eps: f64,
) -> Result<LayerNormOut<E>> {
    let (outer, n, inner) = ln_extents(x.shape(), axis)?;
    if gamma.shape() != [n] || beta.shape() != [n] {
        return Err(Error::Shape(format!(
            "layer_norm affine shapes {:?}/{:?}, expected [{n}] for axis {axis} of {:?}",
            gamma.shape(),
            beta.shape(),
            x.shape()
        )));
    }
    let eps = E::from_f64(eps);
    let inv_n = E::from_f64(1.0 / n as f64);
    let xd = x.data();
    let g = gamma.data();
    let b = beta.data();
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    let mut stats = vec![(E::ZERO, E::ZERO); outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut mean = E::ZERO;
            for j in 0..n {
                mean += xd[at(j)];
            }
            mean = mean * inv_n;
            let mut var = E::ZERO;
            for j in 0..n {
                let d = xd[at(j)] - mean;
                var += d * d;
            }
            var = var * inv_n;
            let inv_std = E::ONE / (var + eps).sqrt();
            stats[o * inner + i] = (mean, inv_std);
            for j in 0..n {
                let xh = (xd[at(j)] - mean) * inv_std;
                yd[at(j)] = g[j] * xh + b[j];
            }
        }
    }
    Ok(LayerNormOut { y, stats })
}

pub fn layer_norm_backward<E: Real>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    axis: usize,
    stats: &[(E, E)],
    gy: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (outer, n, inner) = ln_extents(x.shape(), axis)?;
    let inv_n = E::from_f64(1.0 / n as f64);
    let xd = x.data();
    let g = gamma.data();
    let gyd = gy.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut ggamma = Tensor::zeros(gamma.shape());
    let mut gbeta = Tensor::zeros(gamma.shape());
    let gxd = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let (mean, inv_std) = stats[o * inner + i];
            let mut m1 = E::ZERO;
            let mut m2 = E::ZERO;
            for j in 0..n {
                let xh = (xd[at(j)] - mean) * inv_std;
                let gxh = gyd[at(j)] * g[j];
                m1 += gxh;
                m2 += gxh * xh;
                ggamma.data_mut()[j] += gyd[at(j)] * xh;
                gbeta.data_mut()[j] += gyd[at(j)];
            }
            m1 = m1 * inv_n;
            m2 = m2 * inv_n;
            for j in 0..n {
                let xh = (xd[at(j)] - mean) * inv_std;
                let gxh = gyd[at(j)] * g[j];
                gxd[at(j)] = inv_std * (gxh - m1 - xh * m2);
            }
        }
    }
    Ok((gx, ggamma, gbeta))
}

// ---------------------------------------------------------------------------
// Axis reductions (mean / max pooling)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

pub struct PoolOut<E> {
    pub y: Tensor<E>,
    /// For max pooling: input flat index chosen per output cell (first winner).
    pub argmax: Vec<usize>,
    pub count: usize,
}

fn pool_plan(shape: &[usize], dims: &[usize]) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    if dims.is_empty() {
        return Err(Error::Shape(
            "pool requires at least one reduction axis".into(),
        ));
    }
    let mut seen = vec![false; shape.len()];
    for &d in dims {
        if d >= shape.len() {
            return Err(Error::Shape(format!(
                "pool axis {d} out of range for shape {shape:?}"
            )));
        }
        if seen[d] {
            return Err(Error::Shape(format!("pool axis {d} listed twice")));
        }
        seen[d] = true;
    }
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !seen[*i])
        .map(|(_, &s)| s)
        .collect();
    let count: usize = dims.iter().map(|&d| shape[d]).product();
    // out stride per kept input axis (0 for reduced axes)
    let mut out_strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        if !seen[i] {
            out_strides[i] = acc;
            acc *= shape[i];
        }
    }
    Ok((out_shape, out_strides, count))
}

fn out_index(shape: &[usize], out_strides: &[usize], mut flat: usize) -> usize {
    let mut idx = 0usize;
    for i in (0..shape.len()).rev() {
        let coord = flat % shape[i];
        flat /= shape[i];
        idx += coord * out_strides[i];
    }
    idx
}

pub fn pool_forward<E: Real>(x: &Tensor<E>, dims: &[usize], mode: PoolMode) -> Result<PoolOut<E>> {
    let (out_shape, out_strides, count) = pool_plan(x.shape(), dims)?;
    let out_elems: usize = out_shape.iter().product();
    let xd = x.data();
    match mode {
        PoolMode::Mean => {
            let mut y = Tensor::zeros(&out_shape);
            let yd = y.data_mut();
            for (flat, &v) in xd.iter().enumerate() {
                yd[out_index(x.shape(), &out_strides, flat)] += v;
            }
            let scale = E::from_f64(1.0 / count as f64);
            for v in yd.iter_mut() {
                *v = *v * scale;
            }
            Ok(PoolOut {
                y,
                argmax: Vec::new(),
                count,
            })
        }
        PoolMode::Max => {
            let mut best = vec![E::ZERO; out_elems];
            let mut arg = vec![usize::MAX; out_elems];
            for (flat, &v) in xd.iter().enumerate() {
                let oi = out_index(x.shape(), &out_strides, flat);
                if arg[oi] == usize::MAX || v > best[oi] {
                    best[oi] = v;
                    arg[oi] = flat;
                }
            }
            let y = Tensor::new(out_shape, best)?;
            Ok(PoolOut {
                y,
                argmax: arg,
                count,
            })
        }
    }
}

pub fn pool_backward<E: Real>(
    x_shape: &[usize],
    dims: &[usize],
    mode: PoolMode,
    argmax: &[usize],
    count: usize,
    gy: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (_, out_strides, _) = pool_plan(x_shape, dims)?;
    let mut gx = Tensor::zeros(x_shape);
    let gxd = gx.data_mut();
    match mode {
        PoolMode::Mean => {
            let scale = E::from_f64(1.0 / count as f64);
            for flat in 0..gxd.len() {
                gxd[flat] = gy.data()[out_index(x_shape, &out_strides, flat)] * scale;
            }
        }
        PoolMode::Max => {
            for (oi, &src) in argmax.iter().enumerate() {
                gxd[src] += gy.data()[oi];
            }
        }
    }
    Ok(gx)
}
