//! Batched forward and reverse passes of the residual network.
//!
//! A batch of `B` points is processed as a stacked matrix with `S * B` rows:
//! rows `s*B .. (s+1)*B` hold stream `s`. With `S = 4` the streams are the
//! value and its derivatives `d/dt`, `d/dk`, `d2/dk2` with respect to the
//! network inputs; with `S = 1` only values are propagated. Biases touch the
//! value stream only, so every linear map acts on derivatives as a plain
//! matrix product.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::params::{AffineSlot, LinearSlot, NetParams};
use super::softplus;
use crate::error::{Error, Result};

pub(crate) const VALUE: usize = 1;
pub(crate) const JET: usize = 4;

struct BlockTape {
    input: Array2<f64>,
    act_in: Array2<f64>,
    first_lin: Option<Array2<f64>>,
    first_out: Array2<f64>,
    act_mid: Array2<f64>,
    second_lin: Option<Array2<f64>>,
}

/// Intermediate values kept by a forward pass for the reverse pass.
pub(crate) struct MlpTape {
    batch: usize,
    streams: usize,
    points: Vec<[f64; 2]>,
    blocks: Vec<BlockTape>,
    last: Array2<f64>,
    act_last: Array2<f64>,
}

impl MlpTape {
    pub(crate) fn batch(&self) -> usize {
        self.batch
    }
}

fn weights<'a>(values: &'a [f64], slot: &LinearSlot) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((slot.outputs, slot.inputs), &values[slot.weight_range()]).expect("layout")
}

fn lift_forward(values: &[f64], slot: &LinearSlot, points: &[[f64; 2]], streams: usize) -> Array2<f64> {
    let b = points.len();
    let w = slot.outputs;
    let mut x = Array2::<f64>::zeros((streams * b, w));
    let wt = weights(values, slot);
    let bias = &values[slot.bias_range()];
    let data = x.as_slice_mut().expect("contiguous");
    for (row, p) in points.iter().enumerate() {
        let out = &mut data[row * w..(row + 1) * w];
        for j in 0..w {
            out[j] = wt[[j, 0]] * p[0] + wt[[j, 1]] * p[1] + bias[j];
        }
    }
    if streams == JET {
        // d/dt picks column 1, d/dk picks column 0, second derivative is zero
        for row in 0..b {
            for j in 0..w {
                data[(b + row) * w + j] = wt[[j, 1]];
                data[(2 * b + row) * w + j] = wt[[j, 0]];
            }
        }
    }
    x
}

fn lift_backward(slot: &LinearSlot, points: &[[f64; 2]], xbar: &Array2<f64>, streams: usize, grad: &mut [f64]) {
    let b = points.len();
    let w = slot.outputs;
    let xb = xbar.as_slice().expect("contiguous");
    let (gw, gb) = grad[slot.weight..slot.bias + slot.outputs].split_at_mut(slot.inputs * slot.outputs);
    for (row, p) in points.iter().enumerate() {
        let v = &xb[row * w..(row + 1) * w];
        for j in 0..w {
            gw[2 * j] += v[j] * p[0];
            gw[2 * j + 1] += v[j] * p[1];
            gb[j] += v[j];
        }
    }
    if streams == JET {
        for row in 0..b {
            let vt = &xb[(b + row) * w..(b + row + 1) * w];
            let vk = &xb[(2 * b + row) * w..(2 * b + row + 1) * w];
            for j in 0..w {
                gw[2 * j] += vk[j];
                gw[2 * j + 1] += vt[j];
            }
        }
    }
}

fn linear_forward(values: &[f64], slot: &LinearSlot, x: &Array2<f64>, batch: usize) -> Array2<f64> {
    let mut y = Array2::<f64>::zeros((x.nrows(), slot.outputs));
    general_mat_mul(1.0, x, &weights(values, slot).t(), 0.0, &mut y);
    let bias = &values[slot.bias_range()];
    let o = slot.outputs;
    let data = y.as_slice_mut().expect("contiguous");
    for row in data[..batch * o].chunks_exact_mut(o) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    y
}

fn linear_backward(
    values: &[f64],
    slot: &LinearSlot,
    x: &Array2<f64>,
    ybar: &Array2<f64>,
    batch: usize,
    grad: &mut [f64],
) -> Array2<f64> {
    {
        let gw_slice = &mut grad[slot.weight_range()];
        let mut gw = ArrayViewMut2::from_shape((slot.outputs, slot.inputs), gw_slice).expect("layout");
        general_mat_mul(1.0, &ybar.t(), x, 1.0, &mut gw);
    }
    let o = slot.outputs;
    let gb = &mut grad[slot.bias_range()];
    for row in ybar.as_slice().expect("contiguous")[..batch * o].chunks_exact(o) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut xbar = Array2::<f64>::zeros((ybar.nrows(), slot.inputs));
    general_mat_mul(1.0, ybar, &weights(values, slot), 0.0, &mut xbar);
    xbar
}

fn affine_forward(values: &[f64], slot: &AffineSlot, y: &Array2<f64>, batch: usize) -> Array2<f64> {
    let scale = &values[slot.scale..slot.scale + slot.len];
    let shift = &values[slot.shift..slot.shift + slot.len];
    let w = slot.len;
    let mut z = y.clone();
    let data = z.as_slice_mut().expect("contiguous");
    for (r, row) in data.chunks_exact_mut(w).enumerate() {
        for j in 0..w {
            row[j] *= scale[j];
            if r < batch {
                row[j] += shift[j];
            }
        }
    }
    z
}

fn affine_backward(
    values: &[f64],
    slot: &AffineSlot,
    y: &Array2<f64>,
    zbar: &Array2<f64>,
    batch: usize,
    grad: &mut [f64],
) -> Array2<f64> {
    let w = slot.len;
    let scale = &values[slot.scale..slot.scale + w];
    let mut ybar = zbar.clone();
    let yd = y.as_slice().expect("contiguous");
    let zd = zbar.as_slice().expect("contiguous");
    for (r, (yrow, zrow)) in yd.chunks_exact(w).zip(zd.chunks_exact(w)).enumerate() {
        for j in 0..w {
            grad[slot.scale + j] += zrow[j] * yrow[j];
            if r < batch {
                grad[slot.shift + j] += zrow[j];
            }
        }
    }
    for row in ybar.as_slice_mut().expect("contiguous").chunks_exact_mut(w) {
        for j in 0..w {
            row[j] *= scale[j];
        }
    }
    ybar
}

/// `tanh` applied to a stacked jet.
///
/// With `a = tanh z`, `s1 = 1 - a^2`, `s2 = -2 a s1`:
/// `a_t = s1 z_t`, `a_k = s1 z_k`, `a_kk = s1 z_kk + s2 z_k^2`.
fn tanh_forward(z: &Array2<f64>, batch: usize, streams: usize) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros(z.raw_dim());
    let zd = z.as_slice().expect("contiguous");
    let ad = a.as_slice_mut().expect("contiguous");
    let n = batch * z.ncols();
    for i in 0..n {
        ad[i] = zd[i].tanh();
    }
    if streams == JET {
        let (av, rest) = ad.split_at_mut(n);
        let (at, rest) = rest.split_at_mut(n);
        let (ak, akk) = rest.split_at_mut(n);
        let zt = &zd[n..2 * n];
        let zk = &zd[2 * n..3 * n];
        let zkk = &zd[3 * n..4 * n];
        for i in 0..n {
            let s1 = 1.0 - av[i] * av[i];
            let s2 = -2.0 * av[i] * s1;
            at[i] = s1 * zt[i];
            ak[i] = s1 * zk[i];
            akk[i] = s1 * zkk[i] + s2 * zk[i] * zk[i];
        }
    }
    a
}

/// Reverse pass of [`tanh_forward`]; `a` is its output.
fn tanh_backward(z: &Array2<f64>, a: &Array2<f64>, abar: &Array2<f64>, batch: usize, streams: usize) -> Array2<f64> {
    let mut zbar = Array2::<f64>::zeros(z.raw_dim());
    let n = batch * z.ncols();
    let zd = z.as_slice().expect("contiguous");
    let ad = a.as_slice().expect("contiguous");
    let gd = abar.as_slice().expect("contiguous");
    let out = zbar.as_slice_mut().expect("contiguous");
    if streams == VALUE {
        for i in 0..n {
            out[i] = gd[i] * (1.0 - ad[i] * ad[i]);
        }
        return zbar;
    }
    let (zt, zk, zkk) = (&zd[n..2 * n], &zd[2 * n..3 * n], &zd[3 * n..4 * n]);
    let (g, gt, gk, gkk) = (&gd[..n], &gd[n..2 * n], &gd[2 * n..3 * n], &gd[3 * n..4 * n]);
    let (ov, rest) = out.split_at_mut(n);
    let (ot, rest) = rest.split_at_mut(n);
    let (ok, okk) = rest.split_at_mut(n);
    for i in 0..n {
        let av = ad[i];
        let s1 = 1.0 - av * av;
        let s2 = -2.0 * av * s1;
        let s3 = -2.0 * s1 * s1 + 4.0 * av * av * s1;
        ot[i] = s1 * gt[i];
        ok[i] = s1 * gk[i] + 2.0 * s2 * zk[i] * gkk[i];
        okk[i] = s1 * gkk[i];
        ov[i] = s1 * g[i] + s2 * (zt[i] * gt[i] + zk[i] * gk[i] + zkk[i] * gkk[i]) + s3 * zk[i] * zk[i] * gkk[i];
    }
    zbar
}

/// Runs the network on a batch, returning the pre-softplus output stacked by
/// stream (`streams * points.len()` entries) and, if requested, the tape.
pub(crate) fn forward(
    params: &NetParams,
    points: &[[f64; 2]],
    streams: usize,
    keep_tape: bool,
) -> (Vec<f64>, Option<MlpTape>) {
    debug_assert!(streams == VALUE || streams == JET);
    let layout = params.layout();
    let values = &params.values[..];
    let batch = points.len();
    let mut x = lift_forward(values, &layout.lift, points, streams);
    let mut blocks = Vec::with_capacity(if keep_tape { layout.blocks.len() } else { 0 });
    for slots in &layout.blocks {
        let act_in = tanh_forward(&x, batch, streams);
        let y1 = linear_forward(values, &slots.first, &act_in, batch);
        let (first_lin, first_out) = match &slots.first_norm {
            Some(norm) => {
                let z = affine_forward(values, norm, &y1, batch);
                (Some(y1), z)
            }
            None => (None, y1),
        };
        let act_mid = tanh_forward(&first_out, batch, streams);
        let y2 = linear_forward(values, &slots.second, &act_mid, batch);
        let (second_lin, second_out) = match &slots.second_norm {
            Some(norm) => {
                let z = affine_forward(values, norm, &y2, batch);
                (Some(y2), z)
            }
            None => (None, y2),
        };
        let next = &x + &second_out;
        if keep_tape {
            blocks.push(BlockTape {
                input: x,
                act_in,
                first_lin,
                first_out,
                act_mid,
                second_lin,
            });
        }
        x = next;
    }
    let act_last = tanh_forward(&x, batch, streams);
    let out = linear_forward(values, &layout.head, &act_last, batch);
    let out = out.into_raw_vec_and_offset().0;
    let tape = keep_tape.then(|| MlpTape {
        batch,
        streams,
        points: points.to_vec(),
        blocks,
        last: x,
        act_last,
    });
    (out, tape)
}

/// Accumulates into `grad` the parameter gradient given the adjoint of the
/// stacked pre-softplus output.
pub(crate) fn backward(params: &NetParams, tape: &MlpTape, out_bar: &[f64], grad: &mut [f64]) {
    let layout = params.layout();
    let values = &params.values[..];
    let (batch, streams) = (tape.batch, tape.streams);
    assert_eq!(out_bar.len(), batch * streams);
    assert_eq!(grad.len(), values.len());
    let obar = Array2::from_shape_vec((batch * streams, 1), out_bar.to_vec()).expect("shape");
    let abar = linear_backward(values, &layout.head, &tape.act_last, &obar, batch, grad);
    let mut xbar = tanh_backward(&tape.last, &tape.act_last, &abar, batch, streams);
    for (slots, bt) in layout.blocks.iter().zip(&tape.blocks).rev() {
        // residual: the block output adjoint flows to both branches
        let second_bar = match (&slots.second_norm, &bt.second_lin) {
            (Some(norm), Some(y2)) => affine_backward(values, norm, y2, &xbar, batch, grad),
            _ => xbar.clone(),
        };
        let mid_bar = linear_backward(values, &slots.second, &bt.act_mid, &second_bar, batch, grad);
        let first_out_bar = tanh_backward(&bt.first_out, &bt.act_mid, &mid_bar, batch, streams);
        let first_bar = match (&slots.first_norm, &bt.first_lin) {
            (Some(norm), Some(y1)) => affine_backward(values, norm, y1, &first_out_bar, batch, grad),
            _ => first_out_bar,
        };
        let act_in_bar = linear_backward(values, &slots.first, &bt.act_in, &first_bar, batch, grad);
        xbar += &tanh_backward(&bt.input, &bt.act_in, &act_in_bar, batch, streams);
    }
    lift_backward(&layout.lift, &tape.points, &xbar, streams, grad);
}

/// Network output `softplus(head)` at a single point.
pub fn net_forward(params: &NetParams, k: f64, t: f64) -> Result<f64> {
    if !params.is_finite() {
        return Err(Error::NonFiniteParams);
    }
    let (out, _) = forward(params, &[[k, t]], VALUE, false);
    Ok(softplus(out[0]))
}
