//! Raw NCHW convolution kernels behind the autodiff ops.
//!
//! The heavy lifting is an im2col transform plus one matrix multiply per
//! sample. Three primitives cover forward and both adjoints:
//! `conv2d`, its input-adjoint `conv_transpose2d` and its weight-adjoint
//! `conv_wgrad`. They are mutual adjoints, which is what makes higher-order
//! differentiation of convolutions close under the same three ops.

use ndarray::{Array2, Array4, ArrayView3, ArrayView4};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output side for a valid strided convolution; errors unless the geometry
/// divides exactly (no silently dropped rows).
pub fn conv_out_side(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Dimension(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::Dimension(format!(
            "conv geometry does not divide: input {input}, kernel {kernel}, stride {stride}, pad {pad}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output side of the transposed convolution: `(in - 1)·stride - 2·pad + kernel`.
pub fn conv_transpose_out_side(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let grown = (input - 1) * stride + kernel;
    if grown < 2 * pad {
        return Err(Error::Dimension(format!(
            "transposed conv geometry invalid: input {input}, kernel {kernel}, stride {stride}, pad {pad}"
        )));
    }
    Ok(grown - 2 * pad)
}

fn zero_pad<F: Scalar>(x: &ArrayView3<'_, F>, pad: usize) -> ndarray::Array3<F> {
    let (c, h, w) = x.dim();
    let mut out = ndarray::Array3::<F>::zeros((c, h + 2 * pad, w + 2 * pad));
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[[ci, y + pad, xx + pad]] = x[[ci, y, xx]];
            }
        }
    }
    out
}

/// Unfolds a padded sample into a `[C·kh·kw, oh·ow]` matrix.
fn im2col<F: Scalar>(
    padded: &ndarray::Array3<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array2<F> {
    let (c, _, wp) = padded.dim();
    let mut cols = Array2::<F>::zeros((c * kh * kw, oh * ow));
    let src = padded.as_slice().expect("padded is standard layout");
    let dst = cols.as_slice_mut().expect("cols is standard layout");
    let plane = padded.dim().1 * wp;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let src_base = ci * plane + (oy * stride + ky) * wp + kx;
                    let dst_base = row * oh * ow + oy * ow;
                    if stride == 1 {
                        dst[dst_base..dst_base + ow]
                            .copy_from_slice(&src[src_base..src_base + ow]);
                    } else {
                        for ox in 0..ow {
                            dst[dst_base + ox] = src[src_base + ox * stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a `[C·kh·kw, oh·ow]` matrix back into a padded sample by
/// scatter-add; the exact adjoint of [`im2col`].
fn col2im<F: Scalar>(
    cols: &Array2<F>,
    c: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array3<F> {
    let mut out = ndarray::Array3::<F>::zeros((c, hp, wp));
    let src = cols.as_slice().expect("cols standard layout");
    let dst = out.as_slice_mut().expect("out standard layout");
    let plane = hp * wp;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let dst_base = ci * plane + (oy * stride + ky) * wp + kx;
                    let src_base = row * oh * ow + oy * ow;
                    for ox in 0..ow {
                        dst[dst_base + ox * stride] += src[src_base + ox];
                    }
                }
            }
        }
    }
    out
}

/// `x: [N, Ci, H, W]`, `w: [Co, Ci, kh, kw]` → `[N, Co, OH, OW]`.
pub fn conv2d<F: Scalar>(
    x: &ArrayView4<'_, F>,
    w: &ArrayView4<'_, F>,
    stride: usize,
    pad: usize,
) -> Result<Array4<F>> {
    let (n, ci, h, wd) = x.dim();
    let (co, ciw, kh, kw) = w.dim();
    if ci != ciw {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {ci} vs weight {ciw}"
        )));
    }
    let oh = conv_out_side(h, kh, stride, pad)?;
    let ow = conv_out_side(wd, kw, stride, pad)?;
    let wmat = w
        .to_shape((co, ci * kh * kw))
        .expect("weight reshape")
        .to_owned();
    let mut out = Array4::<F>::zeros((n, co, oh, ow));
    for ni in 0..n {
        let padded = zero_pad(&x.index_axis(ndarray::Axis(0), ni), pad);
        let cols = im2col(&padded, kh, kw, stride, oh, ow);
        let res = wmat.dot(&cols);
        out.index_axis_mut(ndarray::Axis(0), ni)
            .assign(&res.to_shape((co, oh, ow)).expect("output reshape"));
    }
    Ok(out)
}

/// `y: [N, Co, OH, OW]`, `w: [Co, Ci, kh, kw]` → `[N, Ci, H, W]`; the adjoint
/// of [`conv2d`] with the same stride and padding.
pub fn conv_transpose2d<F: Scalar>(
    y: &ArrayView4<'_, F>,
    w: &ArrayView4<'_, F>,
    stride: usize,
    pad: usize,
) -> Result<Array4<F>> {
    let (n, co, oh, ow) = y.dim();
    let (cow, ci, kh, kw) = w.dim();
    if co != cow {
        return Err(Error::Dimension(format!(
            "conv_transpose2d channel mismatch: input {co} vs weight {cow}"
        )));
    }
    let h = conv_transpose_out_side(oh, kh, stride, pad)?;
    let wd = conv_transpose_out_side(ow, kw, stride, pad)?;
    let hp = h + 2 * pad;
    let wp = wd + 2 * pad;
    let wmat_t = w
        .to_shape((co, ci * kh * kw))
        .expect("weight reshape")
        .t()
        .to_owned();
    let mut out = Array4::<F>::zeros((n, ci, h, wd));
    for ni in 0..n {
        let ymat = y
            .index_axis(ndarray::Axis(0), ni)
            .to_shape((co, oh * ow))
            .expect("y reshape")
            .to_owned();
        let cols = wmat_t.dot(&ymat);
        let padded = col2im(&cols, ci, hp, wp, kh, kw, stride, oh, ow);
        let mut dst = out.index_axis_mut(ndarray::Axis(0), ni);
        for c in 0..ci {
            for yy in 0..h {
                for xx in 0..wd {
                    dst[[c, yy, xx]] = padded[[c, yy + pad, xx + pad]];
                }
            }
        }
    }
    Ok(out)
}

/// Weight gradient of [`conv2d`]: `x: [N, Ci, H, W]`, `gy: [N, Co, OH, OW]`
/// → `[Co, Ci, kh, kw]`.
pub fn conv_wgrad<F: Scalar>(
    x: &ArrayView4<'_, F>,
    gy: &ArrayView4<'_, F>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Result<Array4<F>> {
    let (n, ci, h, wd) = x.dim();
    let (ng, co, oh, ow) = gy.dim();
    if n != ng {
        return Err(Error::Dimension("conv_wgrad batch mismatch".into()));
    }
    if conv_out_side(h, kh, stride, pad)? != oh || conv_out_side(wd, kw, stride, pad)? != ow {
        return Err(Error::Dimension("conv_wgrad spatial geometry mismatch".into()));
    }
    let mut acc = Array2::<F>::zeros((co, ci * kh * kw));
    for ni in 0..n {
        let padded = zero_pad(&x.index_axis(ndarray::Axis(0), ni), pad);
        let cols = im2col(&padded, kh, kw, stride, oh, ow);
        let gmat = gy
            .index_axis(ndarray::Axis(0), ni)
            .to_shape((co, oh * ow))
            .expect("gy reshape")
            .to_owned();
        acc = acc + gmat.dot(&cols.t());
    }
    Ok(acc
        .to_shape((co, ci, kh, kw))
        .expect("weight-shaped result")
        .to_owned())
}

/// Reflect padding (no edge repetition) of the spatial axes.
pub fn pad_reflect<F: Scalar>(x: &ArrayView4<'_, F>, pad: usize) -> Result<Array4<F>> {
    let (n, c, h, w) = x.dim();
    if pad >= h || pad >= w {
        return Err(Error::Dimension(format!(
            "reflect pad {pad} too large for {h}x{w}"
        )));
    }
    let reflect = |i: isize, len: isize| -> usize {
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= len {
                i = 2 * (len - 1) - i;
            } else {
                return i as usize;
            }
        }
    };
    let mut out = Array4::<F>::zeros((n, c, h + 2 * pad, w + 2 * pad));
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h + 2 * pad {
                let sy = reflect(y as isize - pad as isize, h as isize);
                for xx in 0..w + 2 * pad {
                    let sx = reflect(xx as isize - pad as isize, w as isize);
                    out[[ni, ci, y, xx]] = x[[ni, ci, sy, sx]];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`pad_reflect`]: folds gradient contributions of mirrored
/// positions back onto their sources.
pub fn pad_reflect_adjoint<F: Scalar>(g: &ArrayView4<'_, F>, pad: usize) -> Result<Array4<F>> {
    let (n, c, hp, wp) = g.dim();
    if hp <= 2 * pad || wp <= 2 * pad {
        return Err(Error::Dimension("padded input smaller than padding".into()));
    }
    let h = hp - 2 * pad;
    let w = wp - 2 * pad;
    let reflect = |i: isize, len: isize| -> usize {
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= len {
                i = 2 * (len - 1) - i;
            } else {
                return i as usize;
            }
        }
    };
    let mut out = Array4::<F>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..hp {
                let sy = reflect(y as isize - pad as isize, h as isize);
                for xx in 0..wp {
                    let sx = reflect(xx as isize - pad as isize, w as isize);
                    out[[ni, ci, sy, sx]] += g[[ni, ci, y, xx]];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.gen::<f64>() - 0.5)
    }

    /// Direct nested-loop convolution oracle.
    fn conv_oracle(
        x: &Array4<f64>,
        w: &Array4<f64>,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (n, ci, h, wd) = x.dim();
        let (co, _, kh, kw) = w.dim();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Array4::<f64>::zeros((n, co, oh, ow));
        for ni in 0..n {
            for c in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd
                                    {
                                        acc += x[[ni, ic, iy as usize, ix as usize]]
                                            * w[[c, ic, ky, kx]];
                                    }
                                }
                            }
                        }
                        out[[ni, c, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        for &(stride, pad, k) in &[(1usize, 0usize, 3usize), (1, 1, 3), (2, 1, 4)] {
            let x = randn4((2, 3, 8, 8), 1);
            let w = randn4((4, 3, k, k), 2);
            let got = conv2d(&x.view(), &w.view(), stride, pad).unwrap();
            let expect = conv_oracle(&x, &w, stride, pad);
            let diff = (&got - &expect).iter().fold(0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "stride {stride} pad {pad}: {diff}");
        }
    }

    #[test]
    fn conv2d_rejects_nondividing_geometry() {
        let x = randn4((1, 1, 7, 7), 3);
        let w = randn4((1, 1, 4, 4), 4);
        assert!(conv2d(&x.view(), &w.view(), 2, 1).is_err());
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x, w), y> == <x, convT(y, w)> for random tensors.
        let (stride, pad) = (2usize, 1usize);
        let x = randn4((1, 2, 8, 8), 5);
        let w = randn4((3, 2, 4, 4), 6);
        let cx = conv2d(&x.view(), &w.view(), stride, pad).unwrap();
        let y = randn4(cx.dim(), 7);
        let ty = conv_transpose2d(&y.view(), &w.view(), stride, pad).unwrap();
        let lhs: f64 = (&cx * &y).sum();
        let rhs: f64 = (&x * &ty).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn wgrad_is_adjoint_in_the_weights() {
        // <conv(x, w), y> == <w, wgrad(x, y)>.
        let (stride, pad) = (1usize, 1usize);
        let x = randn4((2, 2, 6, 6), 8);
        let w = randn4((3, 2, 3, 3), 9);
        let cx = conv2d(&x.view(), &w.view(), stride, pad).unwrap();
        let y = randn4(cx.dim(), 10);
        let gw = conv_wgrad(&x.view(), &y.view(), stride, pad, 3, 3).unwrap();
        let lhs: f64 = (&cx * &y).sum();
        let rhs: f64 = (&w * &gw).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn reflect_pad_and_adjoint_pair() {
        let x = randn4((1, 1, 5, 5), 11);
        let p = pad_reflect(&x.view(), 2).unwrap();
        assert_eq!(p.dim(), (1, 1, 9, 9));
        // Mirror check: row -1 maps to row 1.
        assert_eq!(p[[0, 0, 1, 2]], x[[0, 0, 1, 0]]);
        // Adjoint identity <pad(x), y> == <x, adj(y)>.
        let y = randn4(p.dim(), 12);
        let a = pad_reflect_adjoint(&y.view(), 2).unwrap();
        let lhs: f64 = (&p * &y).sum();
        let rhs: f64 = (&x * &a).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
