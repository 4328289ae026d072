//! Raw array kernels behind the tape ops.
//!
//! Convolutions are im2col + gemm, parallelized over the batch axis. All
//! batch-parallel reductions collect per-sample partials and sum them in
//! index order, so results are bit-reproducible regardless of thread
//! scheduling.

use ndarray::{linalg::general_mat_mul, Array2, Array4, ArrayView3, ArrayView4, Axis, Zip};
use ndarray::parallel::prelude::*;

use super::Scalar;

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Lay out conv patches of one image as a (C*KH*KW, OH*OW) matrix.
fn im2col<T: Scalar>(
    x: &ArrayView3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<T> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut col = Array2::<T>::zeros((c * kh * kw, oh * ow));
    let cs = col.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        let plane = &xs[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = iy as usize * w;
                    let out_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cs[out_row + ox] = plane[in_row + ix as usize];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add a column matrix back to image layout (adjoint of `im2col`).
fn col2im<T: Scalar>(
    col: &Array2<T>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array3<T> {
    let mut x = ndarray::Array3::<T>::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = col.as_slice().expect("standard layout");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = ci * h * w + iy as usize * w;
                    let out_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        xs[in_row + ix as usize] = xs[in_row + ix as usize] + cs[out_row + ox];
                    }
                }
            }
        }
    }
    x
}

/// Convolution forward: x (B,C,H,W) * w (O,C,KH,KW) -> (B,O,OH,OW).
pub fn conv2d<T: Scalar>(
    x: &ArrayView4<T>,
    w: &ArrayView4<T>,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (b, c, h, wd) = x.dim();
    let (o, cw, kh, kw) = w.dim();
    assert_eq!(c, cw, "conv2d channel mismatch");
    let oh = conv_out_len(h, kh, stride, pad);
    let ow = conv_out_len(wd, kw, stride, pad);
    let w_owned = w.as_standard_layout();
    let w_mat = w_owned
        .view()
        .into_shape_with_order((o, c * kh * kw))
        .expect("weight reshape");
    let mut out = Array4::<T>::zeros((b, o, oh, ow));
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(x.axis_iter(Axis(0)))
        .par_for_each(|mut out_i, x_i| {
            let col = im2col(&x_i, kh, kw, stride, pad, oh, ow);
            let mut res = Array2::<T>::zeros((o, oh * ow));
            general_mat_mul(T::one(), &w_mat, &col, T::zero(), &mut res);
            out_i.assign(
                &res.into_shape_with_order((o, oh, ow))
                    .expect("output reshape"),
            );
        });
    out
}

/// Gradient of a convolution w.r.t. its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &ArrayView4<T>,
    w: &ArrayView4<T>,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
) -> Array4<T> {
    let (b, o, oh, ow) = grad_out.dim();
    let (ow_, c, kh, kw) = w.dim();
    assert_eq!(o, ow_, "conv2d grad channel mismatch");
    let w_owned = w.as_standard_layout();
    let w_mat = w_owned
        .view()
        .into_shape_with_order((o, c * kh * kw))
        .expect("weight reshape");
    let mut grad_x = Array4::<T>::zeros((b, c, in_h, in_w));
    Zip::from(grad_x.axis_iter_mut(Axis(0)))
        .and(grad_out.axis_iter(Axis(0)))
        .par_for_each(|mut gx_i, go_i| {
            let go = go_i.as_standard_layout();
            let go_mat = go
                .view()
                .into_shape_with_order((o, oh * ow))
                .expect("grad reshape");
            let mut col = Array2::<T>::zeros((c * kh * kw, oh * ow));
            general_mat_mul(T::one(), &w_mat.t(), &go_mat, T::zero(), &mut col);
            gx_i.assign(&col2im(&col, c, in_h, in_w, kh, kw, stride, pad, oh, ow));
        });
    grad_x
}

/// Gradient of a convolution w.r.t. its weights.
pub fn conv2d_grad_weight<T: Scalar>(
    x: &ArrayView4<T>,
    grad_out: &ArrayView4<T>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Array4<T> {
    let (b, c, _h, _wd) = x.dim();
    let (_, o, oh, ow) = grad_out.dim();
    let partials: Vec<Array2<T>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let x_i = x.index_axis(Axis(0), i);
            let go_i = grad_out.index_axis(Axis(0), i);
            let col = im2col(&x_i, kh, kw, stride, pad, oh, ow);
            let go = go_i.as_standard_layout();
            let go_mat = go
                .view()
                .into_shape_with_order((o, oh * ow))
                .expect("grad reshape");
            let mut gw = Array2::<T>::zeros((o, c * kh * kw));
            general_mat_mul(T::one(), &go_mat, &col.t(), T::zero(), &mut gw);
            gw
        })
        .collect();
    let mut acc = Array2::<T>::zeros((o, c * kh * kw));
    for p in partials {
        acc = acc + &p;
    }
    acc.into_shape_with_order((o, c, kh, kw))
        .expect("weight grad reshape")
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &ArrayView4<T>) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    let mut out = Array4::<T>::zeros((b, c, 2 * h, 2 * w));
    Zip::indexed(&mut out).for_each(|(bi, ci, y, xx), v| {
        *v = x[[bi, ci, y / 2, xx / 2]];
    });
    out
}

/// Adjoint of nearest 2x upsampling: sum each 2x2 block.
pub fn upsample2_grad<T: Scalar>(grad_out: &ArrayView4<T>) -> Array4<T> {
    let (b, c, h2, w2) = grad_out.dim();
    let mut gx = Array4::<T>::zeros((b, c, h2 / 2, w2 / 2));
    Zip::indexed(grad_out).for_each(|(bi, ci, y, xx), &g| {
        gx[[bi, ci, y / 2, xx / 2]] = gx[[bi, ci, y / 2, xx / 2]] + g;
    });
    gx
}

/// Non-overlapping k x k average pooling.
pub fn avg_pool<T: Scalar>(x: &ArrayView4<T>, k: usize) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    assert!(h % k == 0 && w % k == 0, "avg_pool needs divisible dims");
    let (oh, ow) = (h / k, w / k);
    let norm = T::lit(1.0 / (k * k) as f64);
    let mut out = Array4::<T>::zeros((b, c, oh, ow));
    Zip::indexed(&mut out).for_each(|(bi, ci, y, xx), v| {
        let mut s = T::zero();
        for dy in 0..k {
            for dx in 0..k {
                s = s + x[[bi, ci, y * k + dy, xx * k + dx]];
            }
        }
        *v = s * norm;
    });
    out
}

/// Adjoint of average pooling: spread gradients uniformly over each window.
pub fn avg_pool_grad<T: Scalar>(grad_out: &ArrayView4<T>, k: usize) -> Array4<T> {
    let (b, c, oh, ow) = grad_out.dim();
    let norm = T::lit(1.0 / (k * k) as f64);
    let mut gx = Array4::<T>::zeros((b, c, oh * k, ow * k));
    Zip::indexed(&mut gx).for_each(|(bi, ci, y, xx), v| {
        *v = grad_out[[bi, ci, y / k, xx / k]] * norm;
    });
    gx
}

/// 2x2 max pooling with stride 2. Returns the pooled map and the flat input
/// index of each selected element (first max wins on ties).
pub fn max_pool2<T: Scalar>(x: &ArrayView4<T>) -> (Array4<T>, Vec<u32>) {
    let (b, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even dims");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::<T>::zeros((b, c, oh, ow));
    let mut argmax = vec![0u32; b * c * oh * ow];
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = x[[bi, ci, 2 * y, 2 * xx]];
                    let mut best_idx = ((bi * c + ci) * h + 2 * y) * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let v = x[[bi, ci, 2 * y + dy, 2 * xx + dx]];
                        if v > best {
                            best = v;
                            best_idx = ((bi * c + ci) * h + 2 * y + dy) * w + 2 * xx + dx;
                        }
                    }
                    out[[bi, ci, y, xx]] = best;
                    argmax[((bi * c + ci) * oh + y) * ow + xx] = best_idx as u32;
                }
            }
        }
    }
    (out, argmax)
}

/// Adjoint of 2x2 max pooling: route gradients to the recorded argmax.
pub fn max_pool2_grad<T: Scalar>(
    grad_out: &ArrayView4<T>,
    argmax: &[u32],
    in_dim: (usize, usize, usize, usize),
) -> Array4<T> {
    let mut gx = Array4::<T>::zeros(in_dim);
    let gxs = gx.as_slice_mut().expect("standard layout");
    for (g, &idx) in grad_out.iter().zip(argmax) {
        gxs[idx as usize] = gxs[idx as usize] + *g;
    }
    gx
}
