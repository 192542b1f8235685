//! Forward and backward passes.
//!
//! The backward pass is hand-derived per layer; `train::grad_check` verifies
//! every parameter against central finite differences.

use crate::error::{Error, Result};
use crate::mat::Mat;

use super::{Activation, HeadKind, NetworkSpec, NetworkState, TcnSpec};

fn act_value(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Gelu => {
            // tanh form; the derivative below differentiates this exact formula
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let u = c * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        }
    }
}

fn act_deriv(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let u = c * (x + 0.044715 * x * x * x);
            let t = u.tanh();
            let du = c * (1.0 + 3.0 * 0.044715 * x * x);
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        }
    }
}

fn apply_act(a: Activation, m: &Mat) -> Mat {
    m.map(|x| act_value(a, x))
}

/// `x (B x in) * w (in x out)` where `w` is a flat row-major block.
fn x_matmul_w(x: &Mat, w: &[f64], in_dim: usize, out_dim: usize) -> Mat {
    debug_assert_eq!(x.cols(), in_dim);
    debug_assert_eq!(w.len(), in_dim * out_dim);
    let mut out = Mat::zeros(x.rows(), out_dim);
    for t in 0..x.rows() {
        let xr = x.row(t);
        let or = out.row_mut(t);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * out_dim..(i + 1) * out_dim];
            for (o, wv) in or.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    out
}

/// `dz (B x out) * w^T -> (B x in)`.
fn dz_matmul_wt(dz: &Mat, w: &[f64], in_dim: usize, out_dim: usize) -> Mat {
    debug_assert_eq!(dz.cols(), out_dim);
    let mut out = Mat::zeros(dz.rows(), in_dim);
    for t in 0..dz.rows() {
        let dzr = dz.row(t);
        let or = out.row_mut(t);
        for (i, ov) in or.iter_mut().enumerate() {
            let wrow = &w[i * out_dim..(i + 1) * out_dim];
            let mut acc = 0.0;
            for (d, wv) in dzr.iter().zip(wrow) {
                acc += d * wv;
            }
            *ov = acc;
        }
    }
    out
}

/// Accumulates `x^T * dz` into a flat (in x out) gradient block.
fn acc_xt_dz(x: &Mat, dz: &Mat, grad: &mut [f64]) {
    let (in_dim, out_dim) = (x.cols(), dz.cols());
    debug_assert_eq!(grad.len(), in_dim * out_dim);
    for t in 0..x.rows() {
        let xr = x.row(t);
        let dzr = dz.row(t);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let g = &mut grad[i * out_dim..(i + 1) * out_dim];
            for (gv, dv) in g.iter_mut().zip(dzr) {
                *gv += xi * dv;
            }
        }
    }
}

fn acc_col_sums(dz: &Mat, grad: &mut [f64]) {
    for t in 0..dz.rows() {
        for (g, d) in grad.iter_mut().zip(dz.row(t)) {
            *g += d;
        }
    }
}

/// Centered dilated 1-D convolution over a (T x in) sequence. `w` holds
/// `kernel_size` row-major (in x out) blocks, tap-major; frames outside the
/// sequence contribute zero.
fn conv1d_centered(
    x: &Mat,
    w: &[f64],
    bias: &[f64],
    out_ch: usize,
    kernel_size: usize,
    dilation: usize,
) -> Mat {
    let (frames, in_ch) = (x.rows(), x.cols());
    let half = (kernel_size / 2) as isize;
    let mut out = Mat::zeros(frames, out_ch);
    for t in 0..frames {
        let or = out.row_mut(t);
        or.copy_from_slice(bias);
        for j in 0..kernel_size {
            let src = t as isize + (j as isize - half) * dilation as isize;
            if src < 0 || src >= frames as isize {
                continue;
            }
            let xr = x.row(src as usize);
            let tap = &w[j * in_ch * out_ch..(j + 1) * in_ch * out_ch];
            for (i, &xi) in xr.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &tap[i * out_ch..(i + 1) * out_ch];
                for (o, wv) in or.iter_mut().zip(wrow) {
                    *o += xi * wv;
                }
            }
        }
    }
    out
}

pub(crate) struct TcnLayerCache {
    input: Mat,
    pre: Mat,
}

/// Everything the backward pass needs from a forward pass.
pub(crate) struct Cache {
    tcn: Vec<TcnLayerCache>,
    dense_inputs: Vec<Mat>,
    dense_pre: Vec<Mat>,
    pub(crate) logits: Mat,
}

pub(crate) fn forward_cached(spec: &NetworkSpec, params: &[f64], batch: &Mat) -> Result<Cache> {
    if batch.cols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "batch has {} columns, spec expects {}",
            batch.cols(),
            spec.input_dim
        )));
    }
    let layout = spec.layout();
    let block = |name: &str| -> &[f64] {
        let s = layout.find(name).expect("layout block");
        &params[s.offset..s.offset + s.rows * s.cols]
    };

    let mut tcn_caches = Vec::new();
    let mut h = batch.clone();
    if let Some(t) = &spec.temporal_head {
        let mut in_ch = spec.input_dim;
        for l in 0..t.num_layers {
            let out_ch = t.channels[l];
            let pre = conv1d_centered(
                &h,
                block(&format!("tcn{l}.w")),
                block(&format!("tcn{l}.b")),
                out_ch,
                t.kernel_size,
                t.dilations[l],
            );
            let mut next = apply_act(spec.activation, &pre);
            if in_ch == out_ch {
                for r in 0..next.rows() {
                    for (n, x) in next.row_mut(r).iter_mut().zip(h.row(r)) {
                        *n += x;
                    }
                }
            } else {
                let skip = x_matmul_w(&h, block(&format!("tcn{l}.proj")), in_ch, out_ch);
                for r in 0..next.rows() {
                    for (n, x) in next.row_mut(r).iter_mut().zip(skip.row(r)) {
                        *n += x;
                    }
                }
            }
            tcn_caches.push(TcnLayerCache { input: h, pre });
            h = next;
            in_ch = out_ch;
        }
    }

    let dims = spec.dense_dims();
    let mut dense_inputs = vec![h];
    let mut dense_pre = Vec::new();
    let num_dense = dims.len() - 1;
    let mut logits = None;
    for i in 0..num_dense {
        let mut z = x_matmul_w(
            dense_inputs.last().unwrap(),
            block(&format!("dense{i}.w")),
            dims[i],
            dims[i + 1],
        );
        z.add_row_vec(block(&format!("dense{i}.b")));
        if i + 1 < num_dense {
            let a = apply_act(spec.activation, &z);
            dense_pre.push(z);
            dense_inputs.push(a);
        } else {
            logits = Some(z);
        }
    }

    Ok(Cache {
        tcn: tcn_caches,
        dense_inputs,
        dense_pre,
        logits: logits.expect("at least one dense layer"),
    })
}

/// Backpropagates `dlogits` through the cached forward pass, returning the
/// gradient of every flat parameter.
pub(crate) fn backward(spec: &NetworkSpec, params: &[f64], cache: &Cache, dlogits: &Mat) -> Vec<f64> {
    let layout = spec.layout();
    let mut grad = vec![0.0; layout.total];
    let block = |name: &str| -> (usize, usize, usize) {
        let s = layout.find(name).expect("layout block");
        (s.offset, s.rows, s.cols)
    };

    let dims = spec.dense_dims();
    let num_dense = dims.len() - 1;
    let mut d = dlogits.clone();
    for i in (0..num_dense).rev() {
        let (w_off, w_rows, w_cols) = block(&format!("dense{i}.w"));
        let (b_off, _, b_cols) = block(&format!("dense{i}.b"));
        acc_xt_dz(&cache.dense_inputs[i], &d, &mut grad[w_off..w_off + w_rows * w_cols]);
        acc_col_sums(&d, &mut grad[b_off..b_off + b_cols]);
        if i > 0 {
            let da = dz_matmul_wt(&d, &params[w_off..w_off + w_rows * w_cols], dims[i], dims[i + 1]);
            let pre = &cache.dense_pre[i - 1];
            let mut dz = da;
            for r in 0..dz.rows() {
                let pr = pre.row(r).to_vec();
                for (dv, p) in dz.row_mut(r).iter_mut().zip(pr) {
                    *dv *= act_deriv(spec.activation, p);
                }
            }
            d = dz;
        } else if spec.temporal_head.is_some() {
            d = dz_matmul_wt(&d, &params[w_off..w_off + w_rows * w_cols], dims[0], dims[1]);
        }
    }

    let Some(t) = &spec.temporal_head else {
        return grad;
    };

    // `d` is now the gradient w.r.t. the last temporal layer's output
    let mut dh = d;
    for l in (0..t.num_layers).rev() {
        let cacheb = &cache.tcn[l];
        let in_ch = cacheb.input.cols();
        let out_ch = t.channels[l];
        let dil = t.dilations[l];
        let k = t.kernel_size;
        let half = (k / 2) as isize;
        let frames = cacheb.input.rows();

        // activation branch
        let mut dc = dh.clone();
        for r in 0..frames {
            let pr = cacheb.pre.row(r).to_vec();
            for (dv, p) in dc.row_mut(r).iter_mut().zip(pr) {
                *dv *= act_deriv(spec.activation, p);
            }
        }

        let (w_off, w_rows, w_cols) = block(&format!("tcn{l}.w"));
        let (b_off, _, b_cols) = block(&format!("tcn{l}.b"));
        acc_col_sums(&dc, &mut grad[b_off..b_off + b_cols]);

        let w = &params[w_off..w_off + w_rows * w_cols];
        let mut dx = Mat::zeros(frames, in_ch);
        for t_idx in 0..frames {
            let dcr = dc.row(t_idx);
            for j in 0..k {
                let src = t_idx as isize + (j as isize - half) * dil as isize;
                if src < 0 || src >= frames as isize {
                    continue;
                }
                let src = src as usize;
                let tap_off = w_off + j * in_ch * out_ch;
                let tap = &w[j * in_ch * out_ch..(j + 1) * in_ch * out_ch];
                let xr = cacheb.input.row(src);
                // dW_j += x[src]^T outer dc[t]; dx[src] += dc[t] * W_j^T
                for i in 0..in_ch {
                    let xi = xr[i];
                    let wrow = &tap[i * out_ch..(i + 1) * out_ch];
                    let gslice = &mut grad[tap_off + i * out_ch..tap_off + (i + 1) * out_ch];
                    let mut acc = 0.0;
                    for (o, (gv, wv)) in gslice.iter_mut().zip(wrow).enumerate() {
                        *gv += xi * dcr[o];
                        acc += dcr[o] * wv;
                    }
                    dx.row_mut(src)[i] += acc;
                }
            }
        }

        // skip branch
        if in_ch == out_ch {
            for r in 0..frames {
                let dhr = dh.row(r).to_vec();
                for (dv, g) in dx.row_mut(r).iter_mut().zip(dhr) {
                    *dv += g;
                }
            }
        } else {
            let (p_off, p_rows, p_cols) = block(&format!("tcn{l}.proj"));
            acc_xt_dz(&cacheb.input, &dh, &mut grad[p_off..p_off + p_rows * p_cols]);
            let dskip = dz_matmul_wt(&dh, &params[p_off..p_off + p_rows * p_cols], in_ch, out_ch);
            for r in 0..frames {
                let sr = dskip.row(r).to_vec();
                for (dv, g) in dx.row_mut(r).iter_mut().zip(sr) {
                    *dv += g;
                }
            }
        }
        dh = dx;
    }

    grad
}

/// Maps logits through the head nonlinearity: softmax rows, elementwise
/// sigmoid, or identity for the linear head.
pub fn head_outputs(head: HeadKind, logits: &Mat) -> Mat {
    match head {
        HeadKind::Softmax => {
            let mut out = logits.clone();
            for r in 0..out.rows() {
                softmax_row_in_place(out.row_mut(r));
            }
            out
        }
        HeadKind::Sigmoid => logits.map(sigmoid),
        HeadKind::Linear => logits.clone(),
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Output of [`forward`]: raw logits plus head-mapped values.
pub struct ForwardOutput {
    pub logits: Mat,
    pub head: Mat,
}

/// Runs the network on a batch (frame tasks) or a frame sequence
/// (temporal head). Rows are frames either way.
pub fn forward(state: &NetworkState, batch: &Mat) -> Result<ForwardOutput> {
    let cache = forward_cached(&state.spec, &state.params, batch)?;
    if !cache.logits.all_finite() {
        return Err(Error::Value("non-finite logits".into()));
    }
    let head = head_outputs(state.spec.head, &cache.logits);
    Ok(ForwardOutput {
        logits: cache.logits,
        head,
    })
}

/// Convenience used by tests and presets: a default 5-layer TCN with small
/// channel width for desk-scale experiments.
pub fn small_tcn(width: usize) -> TcnSpec {
    TcnSpec::with_channels(width)
}

/// Runs the network over one video's features and wraps the head outputs
/// as a score stream on the same timeline. Softmax and sigmoid heads yield
/// probability streams; the linear head yields unbounded logit-kind scores
/// (clamping to the continuous range happens at decode time).
pub fn predict_scores(
    state: &NetworkState,
    stream: &crate::datamodel::FeatureStream,
) -> Result<crate::datamodel::ScoreStream> {
    let out = forward(state, &stream.features)?;
    let kind = match state.spec.head {
        HeadKind::Softmax | HeadKind::Sigmoid => crate::datamodel::ScoreKind::Probability,
        HeadKind::Linear => crate::datamodel::ScoreKind::Logit,
    };
    crate::datamodel::ScoreStream::new(
        stream.video_id.clone(),
        stream.frame_ids.clone(),
        out.head,
        kind,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec, NetworkState};

    #[test]
    fn zero_weight_softmax_is_uniform() {
        let spec = NetworkSpec::expr_preset(4, 8);
        let mut state = NetworkState::init(spec, 0).unwrap();
        state.params.iter_mut().for_each(|p| *p = 0.0);
        let x = Mat::from_rows(&[vec![0.3, -1.0, 2.0, 0.5]]).unwrap();
        let out = forward(&state, &x).unwrap();
        for v in out.head.row(0) {
            assert!((v - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_linear_layer_is_identity() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_dims: vec![],
            output_dim: 3,
            activation: Activation::Relu,
            head: HeadKind::Linear,
            temporal_head: None,
        };
        let mut state = NetworkState::init(spec, 0).unwrap();
        state.params.iter_mut().for_each(|p| *p = 0.0);
        let w = state.block_mut("dense0.w").unwrap();
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = Mat::from_rows(&[vec![0.5, -1.5, 2.0], vec![0.0, 3.0, -0.25]]).unwrap();
        let out = forward(&state, &x).unwrap();
        assert_eq!(out.head, x);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = NetworkSpec::expr_preset(6, 5);
        let state = NetworkState::init(spec, 11).unwrap();
        let x = Mat::from_rows(&vec![vec![1.0, -2.0, 0.0, 5.0, -1.0, 0.25]; 4]).unwrap();
        let out = forward(&state, &x).unwrap();
        for r in 0..out.head.rows() {
            let s: f64 = out.head.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        // center tap = identity, side taps = 0 -> convolution passes the
        // sequence through unchanged
        let in_ch = 3;
        let x = Mat::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 0.5, 0.0],
            vec![4.0, -2.0, 1.5],
            vec![0.0, 1.0, -1.0],
        ])
        .unwrap();
        let mut w = vec![0.0; 3 * in_ch * in_ch];
        for i in 0..in_ch {
            w[(in_ch + i) * in_ch + i] = 1.0; // tap j=1 (center)
        }
        let out = conv1d_centered(&x, &w, &vec![0.0; in_ch], in_ch, 3, 2);
        assert_eq!(out, x);
    }

    #[test]
    fn zero_conv_tcn_reduces_to_projection() {
        // with all conv weights and biases zero, the residual path is the
        // only signal: output == input * proj(first layer) * head weights
        let tcn = TcnSpec {
            num_layers: 5,
            kernel_size: 3,
            channels: vec![4; 5],
            dilations: vec![1, 2, 4, 8, 16],
        };
        let spec = NetworkSpec::vd_preset(3, tcn);
        let mut state = NetworkState::init(spec, 5).unwrap();
        for l in 0..5 {
            state.block_mut(&format!("tcn{l}.w")).unwrap().iter_mut().for_each(|p| *p = 0.0);
            state.block_mut(&format!("tcn{l}.b")).unwrap().iter_mut().for_each(|p| *p = 0.0);
        }
        let x = Mat::from_rows(&[vec![1.0, -1.0, 2.0], vec![0.5, 0.25, -0.5]]).unwrap();
        let out = forward(&state, &x).unwrap();

        // independent computation of the pure projection path
        let (pshape, proj) = state.block("tcn0.proj").map(|(s, p)| (s.clone(), p.to_vec())).unwrap();
        let (wshape, wout) = state.block("dense0.w").map(|(s, p)| (s.clone(), p.to_vec())).unwrap();
        let (_, bout) = state.block("dense0.b").map(|(s, p)| (s.clone(), p.to_vec())).unwrap();
        let mut expect = x.matmul(&Mat::from_vec(pshape.rows, pshape.cols, proj).unwrap());
        expect = expect.matmul(&Mat::from_vec(wshape.rows, wshape.cols, wout).unwrap());
        expect.add_row_vec(&bout);
        for r in 0..2 {
            for c in 0..2 {
                assert!((out.logits.get(r, c) - expect.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tcn_output_length_matches_input_length() {
        let spec = NetworkSpec::vd_preset(2, TcnSpec::with_channels(3));
        let state = NetworkState::init(spec, 1).unwrap();
        for len in [1usize, 2, 7, 31, 64, 100] {
            let x = Mat::from_rows(&vec![vec![0.5, -0.5]; len]).unwrap();
            let out = forward(&state, &x).unwrap();
            assert_eq!(out.logits.rows(), len);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let spec = NetworkSpec::expr_preset(4, 3);
        let state = NetworkState::init(spec, 0).unwrap();
        let x = Mat::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(forward(&state, &x), Err(Error::Shape(_))));
    }
}
