//! Layered model graphs: shape checking, forward passes and backpropagation.
//!
//! Activations are dense row-major tensors shaped `[batch, rows, time, maps]`
//! through the convolutional stages and `[batch, features]` after flattening.
//! Convolutions run as im2col + GEMM; the im2col column order is
//! `(kernel_row, kernel_tap, in_map)` so that patch gathers are contiguous
//! copies, and weights are repacked into that order on the fly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Activation, ConvSpec, Layer, LayerKind};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Forward pass mode. Dropout is active only in [`Mode::Train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// What the graph consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Binaural frames, fed as `[batch, 2, 320, 1]`.
    Frames,
    /// Flat feature vectors, fed as `[batch, n]`.
    Features(usize),
}

/// Per-layer cached state for backpropagation.
#[derive(Debug)]
pub(crate) enum Cache<T> {
    None,
    Conv {
        input: Tensor<T>,
        output: Tensor<T>,
    },
    Pool {
        in_shape: Vec<usize>,
        out_shape: Vec<usize>,
        argmax: Vec<u32>,
    },
    PeakNorm {
        input: Tensor<T>,
        /// Per-item normalisation divisor (after flooring).
        scales: Vec<T>,
        /// Per-item flat index of the max-magnitude element.
        argmax: Vec<usize>,
        /// True when the scale hit the floor (gradient treats it constant).
        floored: Vec<bool>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
        output: Tensor<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    Softmax,
    Split {
        in_shape: Vec<usize>,
        traces: Vec<Vec<Cache<T>>>,
        out_shapes: Vec<Vec<usize>>,
    },
}

const PEAK_NORM_FLOOR: f64 = 1e-12;
/// Cap on im2col buffer size (elements) per GEMM chunk.
const GEMM_CHUNK_ELEMS: usize = 4 << 20;

// ---------------------------------------------------------------------------
// Convolution internals
// ---------------------------------------------------------------------------

struct ConvDims {
    kr: usize,
    kl: usize,
    cin: usize,
    cout: usize,
    r_in: usize,
    r_out: usize,
    t: usize,
    pad: usize,
    /// im2col width = kr * kl * cin
    k: usize,
}

fn conv_dims(spec: &ConvSpec, in_shape: &[usize]) -> Result<ConvDims> {
    if in_shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            expected: "4-D activation [batch, rows, time, maps]".into(),
            actual: format!("{in_shape:?}"),
            context: "conv input".into(),
        });
    }
    let (r_in, t, cin) = (in_shape[1], in_shape[2], in_shape[3]);
    if cin != spec.in_maps {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input maps", spec.in_maps),
            actual: format!("{cin}"),
            context: "conv input maps".into(),
        });
    }
    if spec.kernel_rows > r_in {
        return Err(Error::ShapeMismatch {
            expected: format!(">= {} rows", spec.kernel_rows),
            actual: format!("{r_in}"),
            context: "conv rows".into(),
        });
    }
    let r_out = r_in - spec.kernel_rows + 1;
    Ok(ConvDims {
        kr: spec.kernel_rows,
        kl: spec.kernel_len,
        cin,
        cout: spec.out_maps,
        r_in,
        r_out,
        t,
        pad: (spec.kernel_len - 1) / 2,
        k: spec.kernel_rows * spec.kernel_len * cin,
    })
}

/// Repack logical weights `[cout, kr*cin, kl]` into a `[K, cout]` GEMM matrix
/// with K ordered as `(dr, dt, ci)`.
fn repack_weights<T: Scalar>(w: &Tensor<T>, d: &ConvDims) -> Vec<T> {
    let mut wg = vec![T::zero(); d.k * d.cout];
    let wd = w.data();
    for co in 0..d.cout {
        for dr in 0..d.kr {
            for ci in 0..d.cin {
                let src = (co * d.kr * d.cin + dr * d.cin + ci) * d.kl;
                for dt in 0..d.kl {
                    let k = (dr * d.kl + dt) * d.cin + ci;
                    wg[k * d.cout + co] = wd[src + dt];
                }
            }
        }
    }
    wg
}

/// Scatter a `[K, cout]` GEMM-layout gradient back into the logical layout,
/// accumulating into `dw`.
fn unpack_weight_grad<T: Scalar>(wg: &[T], d: &ConvDims, dw: &mut Tensor<T>) {
    let dwd = dw.data_mut();
    for co in 0..d.cout {
        for dr in 0..d.kr {
            for ci in 0..d.cin {
                let dst = (co * d.kr * d.cin + dr * d.cin + ci) * d.kl;
                for dt in 0..d.kl {
                    let k = (dr * d.kl + dt) * d.cin + ci;
                    dwd[dst + dt] = dwd[dst + dt] + wg[k * d.cout + co];
                }
            }
        }
    }
}

/// Gather input patches for items `b0..b1` into `a` (row-major `[Mc, K]`).
fn im2col<T: Scalar>(input: &Tensor<T>, d: &ConvDims, b0: usize, b1: usize, a: &mut [T]) {
    let data = input.data();
    let item = d.r_in * d.t * d.cin;
    let row_stride = d.t * d.cin;
    let mut m = 0usize;
    for b in b0..b1 {
        for ro in 0..d.r_out {
            for t in 0..d.t {
                let dst_row = &mut a[m * d.k..(m + 1) * d.k];
                m += 1;
                for dr in 0..d.kr {
                    let src_base = b * item + (ro + dr) * row_stride;
                    let dst_base = dr * d.kl * d.cin;
                    // valid tap range for this output position
                    let lo = d.pad.saturating_sub(t);
                    let hi = (d.t + d.pad - t).min(d.kl);
                    if lo > 0 {
                        dst_row[dst_base..dst_base + lo * d.cin]
                            .iter_mut()
                            .for_each(|v| *v = T::zero());
                    }
                    if hi < d.kl {
                        dst_row[dst_base + hi * d.cin..dst_base + d.kl * d.cin]
                            .iter_mut()
                            .for_each(|v| *v = T::zero());
                    }
                    if lo < hi {
                        let src_t0 = t + lo - d.pad;
                        let n = (hi - lo) * d.cin;
                        let src = &data[src_base + src_t0 * d.cin..][..n];
                        dst_row[dst_base + lo * d.cin..][..n].copy_from_slice(src);
                    }
                }
            }
        }
    }
}

/// Scatter-add im2col-layout gradients back onto the input grid.
fn col2im_add<T: Scalar>(da: &[T], d: &ConvDims, b0: usize, b1: usize, dx: &mut Tensor<T>) {
    let data = dx.data_mut();
    let item = d.r_in * d.t * d.cin;
    let row_stride = d.t * d.cin;
    let mut m = 0usize;
    for b in b0..b1 {
        for ro in 0..d.r_out {
            for t in 0..d.t {
                let src_row = &da[m * d.k..(m + 1) * d.k];
                m += 1;
                for dr in 0..d.kr {
                    let dst_base = b * item + (ro + dr) * row_stride;
                    let src_base = dr * d.kl * d.cin;
                    let lo = d.pad.saturating_sub(t);
                    let hi = (d.t + d.pad - t).min(d.kl);
                    if lo < hi {
                        let dst_t0 = t + lo - d.pad;
                        let n = (hi - lo) * d.cin;
                        let dst = &mut data[dst_base + dst_t0 * d.cin..][..n];
                        let src = &src_row[src_base + lo * d.cin..][..n];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv = *dv + *sv;
                        }
                    }
                }
            }
        }
    }
}

fn chunk_items(d: &ConvDims, batch: usize) -> usize {
    let per_item = d.r_out * d.t * d.k;
    (GEMM_CHUNK_ELEMS / per_item.max(1)).clamp(1, batch.max(1))
}

fn conv_forward<T: Scalar>(layer: &Layer<T>, spec: &ConvSpec, input: &Tensor<T>) -> Result<Tensor<T>> {
    let d = conv_dims(spec, input.shape())?;
    let batch = input.shape()[0];
    let mut out = Tensor::zeros(&[batch, d.r_out, d.t, d.cout]);
    let wg = repack_weights(&layer.weights, &d);
    let chunk = chunk_items(&d, batch);
    let mut a = vec![T::zero(); chunk * d.r_out * d.t * d.k];
    let mut b0 = 0;
    while b0 < batch {
        let b1 = (b0 + chunk).min(batch);
        let mc = (b1 - b0) * d.r_out * d.t;
        im2col(input, &d, b0, b1, &mut a[..mc * d.k]);
        let out_off = b0 * d.r_out * d.t * d.cout;
        unsafe {
            T::gemm(
                mc,
                d.k,
                d.cout,
                T::one(),
                a.as_ptr(),
                d.k as isize,
                1,
                wg.as_ptr(),
                d.cout as isize,
                1,
                T::zero(),
                out.data_mut()[out_off..].as_mut_ptr(),
                d.cout as isize,
                1,
            );
        }
        b0 = b1;
    }
    // bias + activation
    let bias = layer.bias.data();
    for row in out.data_mut().chunks_exact_mut(d.cout) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
        spec.activation.apply_inplace(row);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    layer: &Layer<T>,
    spec: &ConvSpec,
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
    grads: &mut [Tensor<T>],
    need_param_grad: bool,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    if !need_param_grad && !need_input_grad {
        return Ok(None);
    }
    let d = conv_dims(spec, input.shape())?;
    let batch = input.shape()[0];

    // gradient through the activation
    let mut dpre = grad_out.clone();
    for (g, &o) in dpre.data_mut().iter_mut().zip(output.data()) {
        *g = *g * spec.activation.derivative_from_output(o);
    }

    if need_param_grad {
        let db = &mut grads[layer.b_slot];
        let dbd = db.data_mut();
        for row in dpre.data().chunks_exact(d.cout) {
            for (acc, &g) in dbd.iter_mut().zip(row) {
                *acc = *acc + g;
            }
        }
    }

    let wg = if need_input_grad {
        repack_weights(&layer.weights, &d)
    } else {
        Vec::new()
    };
    let mut dwg = if need_param_grad {
        vec![T::zero(); d.k * d.cout]
    } else {
        Vec::new()
    };
    let mut dx = if need_input_grad {
        Some(Tensor::zeros(input.shape()))
    } else {
        None
    };

    let chunk = chunk_items(&d, batch);
    let mut a = vec![T::zero(); chunk * d.r_out * d.t * d.k];
    let mut da = if need_input_grad {
        vec![T::zero(); chunk * d.r_out * d.t * d.k]
    } else {
        Vec::new()
    };
    let mut b0 = 0;
    while b0 < batch {
        let b1 = (b0 + chunk).min(batch);
        let mc = (b1 - b0) * d.r_out * d.t;
        let g_off = b0 * d.r_out * d.t * d.cout;
        let gp = dpre.data()[g_off..].as_ptr();
        if need_param_grad {
            im2col(input, &d, b0, b1, &mut a[..mc * d.k]);
            // dWg += A^T . dpre
            unsafe {
                T::gemm(
                    d.k,
                    mc,
                    d.cout,
                    T::one(),
                    a.as_ptr(),
                    1,
                    d.k as isize,
                    gp,
                    d.cout as isize,
                    1,
                    T::one(),
                    dwg.as_mut_ptr(),
                    d.cout as isize,
                    1,
                );
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dA = dpre . Wg^T
            unsafe {
                T::gemm(
                    mc,
                    d.cout,
                    d.k,
                    T::one(),
                    gp,
                    d.cout as isize,
                    1,
                    wg.as_ptr(),
                    1,
                    d.cout as isize,
                    T::zero(),
                    da.as_mut_ptr(),
                    d.k as isize,
                    1,
                );
            }
            col2im_add(&da[..mc * d.k], &d, b0, b1, dx);
        }
        b0 = b1;
    }
    if need_param_grad {
        unpack_weight_grad(&dwg, &d, &mut grads[layer.w_slot]);
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// Other layer kernels
// ---------------------------------------------------------------------------

fn pool_forward<T: Scalar>(
    width: usize,
    input: &Tensor<T>,
    collect: bool,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            expected: "4-D activation".into(),
            actual: format!("{shape:?}"),
            context: "max_pool input".into(),
        });
    }
    let (batch, r, t, c) = (shape[0], shape[1], shape[2], shape[3]);
    let t2 = t / width;
    if t2 == 0 {
        return Err(Error::Config(format!(
            "max_pool width {width} larger than time axis {t}"
        )));
    }
    let mut out = Tensor::zeros(&[batch, r, t2, c]);
    let mut argmax = if collect {
        vec![0u32; batch * r * t2 * c]
    } else {
        Vec::new()
    };
    let data = input.data();
    let od = out.data_mut();
    for br in 0..batch * r {
        let in_base = br * t * c;
        let out_base = br * t2 * c;
        for t_out in 0..t2 {
            let o = &mut od[out_base + t_out * c..out_base + (t_out + 1) * c];
            let t0 = t_out * width;
            o.copy_from_slice(&data[in_base + t0 * c..in_base + t0 * c + c]);
            if collect {
                argmax[out_base + t_out * c..out_base + (t_out + 1) * c]
                    .iter_mut()
                    .for_each(|v| *v = t0 as u32);
            }
            for w in 1..width {
                let src = &data[in_base + (t0 + w) * c..in_base + (t0 + w) * c + c];
                for ci in 0..c {
                    if src[ci] > o[ci] {
                        o[ci] = src[ci];
                        if collect {
                            argmax[out_base + t_out * c + ci] = (t0 + w) as u32;
                        }
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

fn pool_backward<T: Scalar>(
    in_shape: &[usize],
    out_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let (t, c) = (in_shape[2], in_shape[3]);
    let (t2, _) = (out_shape[2], out_shape[3]);
    let dxd = dx.data_mut();
    let god = grad_out.data();
    for br in 0..in_shape[0] * in_shape[1] {
        let in_base = br * t * c;
        let out_base = br * t2 * c;
        for j in 0..t2 * c {
            let ci = j % c;
            let src_t = argmax[out_base + j] as usize;
            let dst = in_base + src_t * c + ci;
            dxd[dst] = dxd[dst] + god[out_base + j];
        }
    }
    dx
}

fn softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_exact_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
}

// ---------------------------------------------------------------------------
// Recursive forward / backward over a layer stack
// ---------------------------------------------------------------------------

fn forward_layers<T: Scalar>(
    layers: &[Layer<T>],
    input: Tensor<T>,
    mode: Mode,
    rng: &mut Option<&mut ChaCha8Rng>,
    trace: &mut Vec<Cache<T>>,
    collect: bool,
) -> Result<Tensor<T>> {
    let mut x = input;
    for layer in layers {
        let (out, cache) = match &layer.kind {
            LayerKind::Conv(spec) => {
                let out = conv_forward(layer, spec, &x)?;
                let cache = if collect {
                    Cache::Conv {
                        input: x,
                        output: out.clone(),
                    }
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::MaxPool { width } => {
                let (out, argmax) = pool_forward(*width, &x, collect)?;
                let cache = if collect {
                    Cache::Pool {
                        in_shape: x.shape().to_vec(),
                        out_shape: out.shape().to_vec(),
                        argmax,
                    }
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::PeakNorm => {
                let shape = x.shape().to_vec();
                if shape.len() != 4 {
                    return Err(Error::ShapeMismatch {
                        expected: "4-D activation".into(),
                        actual: format!("{shape:?}"),
                        context: "peak_normalise input".into(),
                    });
                }
                let batch = shape[0];
                let item = x.len() / batch.max(1);
                let mut out = x.clone();
                let mut scales = Vec::with_capacity(batch);
                let mut argmax = Vec::with_capacity(batch);
                let mut floored = Vec::with_capacity(batch);
                for b in 0..batch {
                    let seg = &mut out.data_mut()[b * item..(b + 1) * item];
                    let (mut mi, mut mv) = (0usize, T::zero());
                    for (i, v) in seg.iter().enumerate() {
                        let a = v.abs();
                        if a > mv {
                            mv = a;
                            mi = i;
                        }
                    }
                    let floor = T::from_f64(PEAK_NORM_FLOOR);
                    let hit_floor = mv < floor;
                    let s = if hit_floor { floor } else { mv };
                    let inv = T::one() / s;
                    seg.iter_mut().for_each(|v| *v = *v * inv);
                    scales.push(s);
                    argmax.push(b * item + mi);
                    floored.push(hit_floor);
                }
                let cache = if collect {
                    Cache::PeakNorm {
                        input: x,
                        scales,
                        argmax,
                        floored,
                    }
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::BandSplit { stacks } => {
                let shape = x.shape().to_vec();
                if shape.len() != 4 || shape[3] != stacks.len() {
                    return Err(Error::ShapeMismatch {
                        expected: format!("4-D activation with {} maps", stacks.len()),
                        actual: format!("{shape:?}"),
                        context: "band split input".into(),
                    });
                }
                let (batch, r, t, c) = (shape[0], shape[1], shape[2], shape[3]);
                let mut band_outs = Vec::with_capacity(c);
                let mut traces = Vec::with_capacity(c);
                let mut out_shapes = Vec::with_capacity(c);
                for (band, stack) in stacks.iter().enumerate() {
                    let mut sub = Tensor::zeros(&[batch, r, t, 1]);
                    {
                        let sd = sub.data_mut();
                        let xd = x.data();
                        for (i, v) in sd.iter_mut().enumerate() {
                            *v = xd[i * c + band];
                        }
                    }
                    let mut sub_trace = Vec::new();
                    let y = forward_layers(stack, sub, mode, rng, &mut sub_trace, collect)?;
                    if y.shape().len() != 4 {
                        return Err(Error::Config(
                            "band stack must end with a 4-D activation".into(),
                        ));
                    }
                    out_shapes.push(y.shape().to_vec());
                    traces.push(sub_trace);
                    let feat = y.len() / batch.max(1);
                    band_outs.push((y, feat));
                }
                let total: usize = band_outs.iter().map(|(_, f)| f).sum();
                let mut out = Tensor::zeros(&[batch, total]);
                let od = out.data_mut();
                let mut offset = 0usize;
                for (y, feat) in &band_outs {
                    let yd = y.data();
                    for b in 0..batch {
                        od[b * total + offset..b * total + offset + feat]
                            .copy_from_slice(&yd[b * feat..(b + 1) * feat]);
                    }
                    offset += feat;
                }
                let cache = if collect {
                    Cache::Split {
                        in_shape: shape,
                        traces,
                        out_shapes,
                    }
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::Flatten => {
                let in_shape = x.shape().to_vec();
                let batch = in_shape[0];
                let feat = x.len() / batch.max(1);
                let out = x.reshaped(&[batch, feat])?;
                (out, if collect { Cache::Flatten { in_shape } } else { Cache::None })
            }
            LayerKind::Dense { inputs, outputs, activation } => {
                let shape = x.shape();
                if shape.len() != 2 || shape[1] != *inputs {
                    return Err(Error::ShapeMismatch {
                        expected: format!("[batch, {inputs}]"),
                        actual: format!("{shape:?}"),
                        context: "dense input".into(),
                    });
                }
                let batch = shape[0];
                let mut out = Tensor::zeros(&[batch, *outputs]);
                unsafe {
                    T::gemm(
                        batch,
                        *inputs,
                        *outputs,
                        T::one(),
                        x.data().as_ptr(),
                        *inputs as isize,
                        1,
                        layer.weights.data().as_ptr(),
                        1,
                        *inputs as isize,
                        T::zero(),
                        out.data_mut().as_mut_ptr(),
                        *outputs as isize,
                        1,
                    );
                }
                let bias = layer.bias.data();
                for row in out.data_mut().chunks_exact_mut(*outputs) {
                    for (v, &b) in row.iter_mut().zip(bias) {
                        *v = *v + b;
                    }
                    activation.apply_inplace(row);
                }
                let cache = if collect {
                    Cache::Dense {
                        input: x,
                        output: out.clone(),
                    }
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerKind::Dropout { rate } => match mode {
                Mode::Infer => (x, Cache::Dropout { mask: None }),
                Mode::Train => {
                    let rng = rng.as_deref_mut().ok_or_else(|| {
                        Error::Config("train-mode forward pass requires an RNG for dropout".into())
                    })?;
                    let keep_scale = T::from_f64(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| {
                            if rng.random::<f64>() < *rate {
                                T::zero()
                            } else {
                                keep_scale
                            }
                        })
                        .collect();
                    let mut out = x;
                    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
                        *v = *v * m;
                    }
                    (out, Cache::Dropout { mask: if collect { Some(mask) } else { None } })
                }
            },
            LayerKind::Softmax => {
                let cols = *x
                    .shape()
                    .last()
                    .ok_or_else(|| Error::Config("softmax on empty tensor".into()))?;
                let mut out = x;
                softmax_rows(out.data_mut(), cols);
                (out, Cache::Softmax)
            }
        };
        x = out;
        if collect {
            trace.push(cache);
        }
    }
    Ok(x)
}

fn backward_layers<T: Scalar>(
    layers: &[Layer<T>],
    trace: &[Cache<T>],
    grad_out: Tensor<T>,
    grads: &mut [Tensor<T>],
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    // below[i]: does anything under layer i still need gradients?
    let mut below = vec![need_input_grad; layers.len()];
    for i in 1..layers.len() {
        below[i] = below[i - 1] || layers[i - 1].any_trainable();
    }

    let mut g = grad_out;
    for (i, layer) in layers.iter().enumerate().rev() {
        let need_below = below[i];
        let need_params = layer.trainable && layer.has_params();
        let next = match (&layer.kind, &trace[i]) {
            (LayerKind::Conv(spec), Cache::Conv { input, output }) => {
                match conv_backward(layer, spec, input, output, &g, grads, need_params, need_below)? {
                    Some(dx) => dx,
                    None => {
                        if need_below {
                            unreachable!("conv_backward returns input grads when requested")
                        }
                        return Ok(None);
                    }
                }
            }
            (LayerKind::MaxPool { .. }, Cache::Pool { in_shape, out_shape, argmax }) => {
                if !need_below {
                    return Ok(None);
                }
                pool_backward(in_shape, out_shape, argmax, &g)
            }
            (LayerKind::PeakNorm, Cache::PeakNorm { input, scales, argmax, floored }) => {
                if !need_below {
                    return Ok(None);
                }
                let batch = input.shape()[0];
                let item = input.len() / batch.max(1);
                let mut dx = Tensor::zeros(input.shape());
                let xd = input.data();
                let gd = g.data();
                let dd = dx.data_mut();
                for b in 0..batch {
                    let s = scales[b];
                    let inv = T::one() / s;
                    let seg = b * item..(b + 1) * item;
                    let mut weighted = T::zero();
                    for i in seg.clone() {
                        // sum_j g_j * out_j, with out = x / s
                        weighted = weighted + gd[i] * xd[i] * inv;
                        dd[i] = gd[i] * inv;
                    }
                    if !floored[b] {
                        let m = argmax[b];
                        let sign = if xd[m] >= T::zero() { T::one() } else { -T::one() };
                        dd[m] = dd[m] - sign * inv * weighted;
                    }
                }
                dx
            }
            (LayerKind::BandSplit { stacks }, Cache::Split { in_shape, traces, out_shapes }) => {
                let batch = in_shape[0];
                let c = in_shape[3];
                let total = g.len() / batch.max(1);
                let mut dx = if need_below {
                    Some(Tensor::zeros(in_shape))
                } else {
                    None
                };
                let mut offset = 0usize;
                let mut stop = true;
                for (band, stack) in stacks.iter().enumerate() {
                    let feat: usize = out_shapes[band].iter().product::<usize>() / batch.max(1);
                    let mut sub_g = Tensor::zeros(&out_shapes[band]);
                    {
                        let sd = sub_g.data_mut();
                        let gd = g.data();
                        for b in 0..batch {
                            sd[b * feat..(b + 1) * feat].copy_from_slice(
                                &gd[b * total + offset..b * total + offset + feat],
                            );
                        }
                    }
                    offset += feat;
                    let sub_dx =
                        backward_layers(stack, &traces[band], sub_g, grads, need_below)?;
                    if let (Some(dx), Some(sub_dx)) = (dx.as_mut(), sub_dx) {
                        stop = false;
                        let dd = dx.data_mut();
                        let sd = sub_dx.data();
                        for (i, &v) in sd.iter().enumerate() {
                            dd[i * c + band] = dd[i * c + band] + v;
                        }
                    }
                }
                match dx {
                    Some(dx) if !stop => dx,
                    _ => return Ok(None),
                }
            }
            (LayerKind::Flatten, Cache::Flatten { in_shape }) => {
                if !need_below {
                    return Ok(None);
                }
                g.reshaped(in_shape)?
            }
            (LayerKind::Dense { inputs, outputs, activation }, Cache::Dense { input, output }) => {
                let batch = input.shape()[0];
                let mut dpre = g;
                for (gv, &o) in dpre.data_mut().iter_mut().zip(output.data()) {
                    *gv = *gv * activation.derivative_from_output(o);
                }
                if need_params {
                    let db = grads[layer.b_slot].data_mut();
                    for row in dpre.data().chunks_exact(*outputs) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    // dW += dpre^T . X
                    unsafe {
                        T::gemm(
                            *outputs,
                            batch,
                            *inputs,
                            T::one(),
                            dpre.data().as_ptr(),
                            1,
                            *outputs as isize,
                            input.data().as_ptr(),
                            *inputs as isize,
                            1,
                            T::one(),
                            grads[layer.w_slot].data_mut().as_mut_ptr(),
                            *inputs as isize,
                            1,
                        );
                    }
                }
                if !need_below {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(input.shape());
                unsafe {
                    T::gemm(
                        batch,
                        *outputs,
                        *inputs,
                        T::one(),
                        dpre.data().as_ptr(),
                        *outputs as isize,
                        1,
                        layer.weights.data().as_ptr(),
                        *inputs as isize,
                        1,
                        T::zero(),
                        dx.data_mut().as_mut_ptr(),
                        *inputs as isize,
                        1,
                    );
                }
                dx
            }
            (LayerKind::Dropout { .. }, Cache::Dropout { mask }) => {
                if !need_below {
                    return Ok(None);
                }
                let mut dx = g;
                if let Some(mask) = mask {
                    for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *v = *v * m;
                    }
                }
                dx
            }
            (LayerKind::Softmax, _) => {
                return Err(Error::Config(
                    "softmax backward is fused into the cross-entropy loss".into(),
                ))
            }
            _ => {
                return Err(Error::Config(format!(
                    "trace/layer mismatch at layer {i}"
                )))
            }
        };
        g = next;
    }
    Ok(Some(g))
}

// ---------------------------------------------------------------------------
// Static shape inference
// ---------------------------------------------------------------------------

fn infer_shapes<T: Scalar>(layers: &[Layer<T>], mut shape: Vec<usize>) -> Result<Vec<usize>> {
    for (i, layer) in layers.iter().enumerate() {
        shape = match &layer.kind {
            LayerKind::Conv(spec) => {
                let d = conv_dims(spec, &shape).map_err(|e| {
                    Error::Config(format!("layer {i} ({}): {e}", layer.kind_name()))
                })?;
                vec![shape[0], d.r_out, d.t, d.cout]
            }
            LayerKind::MaxPool { width } => {
                if shape.len() != 4 || shape[2] / width == 0 {
                    return Err(Error::Config(format!(
                        "layer {i}: max_pool width {width} incompatible with {shape:?}"
                    )));
                }
                vec![shape[0], shape[1], shape[2] / width, shape[3]]
            }
            LayerKind::PeakNorm => {
                if shape.len() != 4 {
                    return Err(Error::Config(format!(
                        "layer {i}: peak_normalise needs a 4-D activation, got {shape:?}"
                    )));
                }
                shape
            }
            LayerKind::BandSplit { stacks } => {
                if shape.len() != 4 || shape[3] != stacks.len() {
                    return Err(Error::Config(format!(
                        "layer {i}: band split over {} stacks incompatible with {shape:?}",
                        stacks.len()
                    )));
                }
                let mut total = 0usize;
                for stack in stacks {
                    let sub = infer_shapes(stack, vec![shape[0], shape[1], shape[2], 1])?;
                    total += sub.iter().skip(1).product::<usize>();
                }
                vec![shape[0], total]
            }
            LayerKind::Flatten => {
                vec![shape[0], shape.iter().skip(1).product()]
            }
            LayerKind::Dense { inputs, outputs, .. } => {
                if shape.len() != 2 || shape[1] != *inputs {
                    return Err(Error::Config(format!(
                        "layer {i}: dense expects [batch, {inputs}], got {shape:?}"
                    )));
                }
                vec![shape[0], *outputs]
            }
            LayerKind::Dropout { .. } => shape,
            LayerKind::Softmax => shape,
        };
    }
    Ok(shape)
}

// ---------------------------------------------------------------------------
// ModelGraph
// ---------------------------------------------------------------------------

/// Metadata for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    pub slot: usize,
    pub trainable: bool,
}

/// An ordered stack of layers ending in a softmax classifier.
#[derive(Debug, Clone)]
pub struct ModelGraph<T> {
    layers: Vec<Layer<T>>,
    input_kind: InputKind,
    num_slots: usize,
    output_dim: usize,
}

fn assign_slots<T: Scalar>(layers: &mut [Layer<T>], next: &mut usize) {
    for layer in layers {
        if layer.has_params() {
            layer.w_slot = *next;
            layer.b_slot = *next + 1;
            *next += 2;
        }
        if let LayerKind::BandSplit { stacks } = &mut layer.kind {
            for stack in stacks {
                assign_slots(stack, next);
            }
        }
    }
}

fn visit_params<'a, T: Scalar>(
    layers: &'a [Layer<T>],
    prefix: &str,
    f: &mut dyn FnMut(ParamMeta, &'a Tensor<T>),
) {
    for (i, layer) in layers.iter().enumerate() {
        if layer.has_params() {
            f(
                ParamMeta {
                    name: format!("{prefix}layer{i}.weight"),
                    slot: layer.w_slot,
                    trainable: layer.trainable,
                },
                &layer.weights,
            );
            f(
                ParamMeta {
                    name: format!("{prefix}layer{i}.bias"),
                    slot: layer.b_slot,
                    trainable: layer.trainable,
                },
                &layer.bias,
            );
        }
        if let LayerKind::BandSplit { stacks } = &layer.kind {
            for (b, stack) in stacks.iter().enumerate() {
                visit_params(stack, &format!("{prefix}layer{i}.band{b}."), f);
            }
        }
    }
}

fn visit_params_mut<T: Scalar>(
    layers: &mut [Layer<T>],
    prefix: &str,
    f: &mut dyn FnMut(ParamMeta, &mut Tensor<T>),
) {
    for (i, layer) in layers.iter_mut().enumerate() {
        if layer.has_params() {
            f(
                ParamMeta {
                    name: format!("{prefix}layer{i}.weight"),
                    slot: layer.w_slot,
                    trainable: layer.trainable,
                },
                &mut layer.weights,
            );
            f(
                ParamMeta {
                    name: format!("{prefix}layer{i}.bias"),
                    slot: layer.b_slot,
                    trainable: layer.trainable,
                },
                &mut layer.bias,
            );
        }
        if let LayerKind::BandSplit { stacks } = &mut layer.kind {
            for (b, stack) in stacks.iter_mut().enumerate() {
                visit_params_mut(stack, &format!("{prefix}layer{i}.band{b}."), f);
            }
        }
    }
}

impl<T: Scalar> ModelGraph<T> {
    /// Build and statically shape-check a graph.
    pub fn new(input_kind: InputKind, mut layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config("graph needs at least dense + softmax".into()));
        }
        if !matches!(layers.last().map(|l| &l.kind), Some(LayerKind::Softmax)) {
            return Err(Error::Config("last layer must be softmax".into()));
        }
        match layers[layers.len() - 2].kind {
            LayerKind::Dense { activation: Activation::Linear, .. } => {}
            _ => {
                return Err(Error::Config(
                    "softmax must be fed by a linear dense layer".into(),
                ))
            }
        }
        let mut next = 0usize;
        assign_slots(&mut layers, &mut next);
        let in_shape = match input_kind {
            InputKind::Frames => vec![1, 2, crate::audio::FRAME_LEN, 1],
            InputKind::Features(n) => vec![1, n],
        };
        let out_shape = infer_shapes(&layers, in_shape)?;
        let output_dim = out_shape[1];
        Ok(Self {
            layers,
            input_kind,
            num_slots: next,
            output_dim,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_kind(&self) -> InputKind {
        self.input_kind
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let ok = match self.input_kind {
            InputKind::Frames => {
                input.shape().len() == 4
                    && input.shape()[1..] == [2, crate::audio::FRAME_LEN, 1]
            }
            InputKind::Features(n) => input.shape().len() == 2 && input.shape()[1] == n,
        };
        if !ok {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} input", self.input_kind),
                actual: format!("{:?}", input.shape()),
                context: "model input".into(),
            });
        }
        if !input.all_finite() {
            return Err(Error::InvalidInput("non-finite model input".into()));
        }
        Ok(())
    }

    /// Forward pass; returns per-item softmax posteriors `[batch, classes]`.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut trace = Vec::new();
        forward_layers(&self.layers, input.clone(), mode, &mut rng, &mut trace, false)
    }

    /// Logits (pre-softmax) in inference mode; used for stable loss reporting.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut rng = None;
        let mut trace = Vec::new();
        forward_layers(
            &self.layers[..self.layers.len() - 1],
            input.clone(),
            Mode::Infer,
            &mut rng,
            &mut trace,
            false,
        )
    }

    /// Mean cross-entropy of the model on `(input, labels)` without dropout.
    pub fn cross_entropy(&self, input: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        let logits = self.logits(input)?;
        let (loss, _) = ce_loss_and_dlogits(&logits, labels, self.output_dim, false)?;
        Ok(loss)
    }

    /// Training-mode forward + backward; returns the mean cross-entropy loss
    /// and one gradient tensor per parameter slot (zeros for frozen layers).
    pub fn loss_and_grads(
        &self,
        input: &Tensor<T>,
        labels: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        self.check_input(input)?;
        if labels.len() != input.shape()[0] {
            return Err(Error::InvalidInput(format!(
                "{} labels for batch of {}",
                labels.len(),
                input.shape()[0]
            )));
        }
        let mut trace = Vec::new();
        let mut rng_opt = Some(rng);
        let n = self.layers.len();
        let logits = forward_layers(
            &self.layers[..n - 1],
            input.clone(),
            Mode::Train,
            &mut rng_opt,
            &mut trace,
            true,
        )?;
        if !logits.all_finite() {
            return Err(Error::Numerical("non-finite logits in forward pass".into()));
        }
        let (loss, dlogits) = ce_loss_and_dlogits(&logits, labels, self.output_dim, true)?;
        let mut grads = self.alloc_grad_slots();
        backward_layers(&self.layers[..n - 1], &trace, dlogits.unwrap(), &mut grads, false)?;
        Ok((loss, grads))
    }

    /// Zeroed gradient tensors, one per parameter slot.
    pub fn alloc_grad_slots(&self) -> Vec<Tensor<T>> {
        let mut shapes: Vec<Vec<usize>> = vec![Vec::new(); self.num_slots];
        visit_params(&self.layers, "", &mut |meta, t| {
            shapes[meta.slot] = t.shape().to_vec();
        });
        shapes.iter().map(|s| Tensor::zeros(s)).collect()
    }

    pub fn for_each_param(&self, f: &mut dyn FnMut(ParamMeta, &Tensor<T>)) {
        visit_params(&self.layers, "", f);
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(ParamMeta, &mut Tensor<T>)) {
        visit_params_mut(&mut self.layers, "", f);
    }

    /// Flat snapshot of all parameter tensors in slot order.
    pub fn param_snapshot(&self) -> Vec<Tensor<T>> {
        let mut out: Vec<Option<Tensor<T>>> = vec![None; self.num_slots];
        self.for_each_param(&mut |meta, t| out[meta.slot] = Some(t.clone()));
        out.into_iter().map(|t| t.unwrap()).collect()
    }

    /// Restore parameters from a snapshot taken with [`Self::param_snapshot`].
    pub fn restore_snapshot(&mut self, snapshot: &[Tensor<T>]) -> Result<()> {
        if snapshot.len() != self.num_slots {
            return Err(Error::Config("snapshot slot count mismatch".into()));
        }
        let mut err = None;
        self.for_each_param_mut(&mut |meta, t| {
            let src = &snapshot[meta.slot];
            if src.shape() != t.shape() {
                err = Some(meta.name.clone());
            } else {
                t.data_mut().copy_from_slice(src.data());
            }
        });
        match err {
            Some(name) => Err(Error::Config(format!("snapshot shape mismatch at {name}"))),
            None => Ok(()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            input_kind: self.input_kind,
            num_slots: self.num_slots,
            output_dim: self.output_dim,
        }
    }
}

/// Numerically stable mean cross-entropy from logits; optionally the gradient
/// of the mean loss with respect to the logits.
fn ce_loss_and_dlogits<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    classes: usize,
    want_grad: bool,
) -> Result<(f64, Option<Tensor<T>>)> {
    let batch = logits.shape()[0];
    if labels.len() != batch {
        return Err(Error::InvalidInput("label/batch length mismatch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range 0..{classes}"
        )));
    }
    let mut grad = if want_grad {
        Some(Tensor::zeros(logits.shape()))
    } else {
        None
    };
    let mut loss = 0.0f64;
    let inv_b = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v.to_f64()));
        let sum_exp: f64 = row.iter().map(|&v| (v.to_f64() - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[label].to_f64();
        if let Some(g) = grad.as_mut() {
            let gd = &mut g.data_mut()[b * classes..(b + 1) * classes];
            for (j, gv) in gd.iter_mut().enumerate() {
                let p = (row[j].to_f64() - lse).exp();
                let delta = if j == label { 1.0 } else { 0.0 };
                *gv = T::from_f64((p - delta) * inv_b);
            }
        }
    }
    Ok((loss * inv_b, grad))
}
