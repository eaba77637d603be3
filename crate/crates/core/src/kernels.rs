//! Reference f32 kernels with zero "same" padding, plus their gradients.
//!
//! Sums are accumulated in f64 and rounded to f32 on store. Output spatial
//! size is `ceil(in / stride)`; tap `(ky, kx)` of output `(oy, ox)` reads input
//! `(oy·stride + ky − 1, ox·stride + kx − 1)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

#[inline]
pub fn relu6(x: f32) -> f32 {
    x.clamp(0.0, 6.0)
}

pub fn relu6_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = relu6(*v));
}

fn check_bias(bias: &[f32], out_channels: usize) -> Result<()> {
    if !bias.is_empty() && bias.len() != out_channels {
        bail!(Dimension, "bias has {} entries for {} output channels", bias.len(), out_channels);
    }
    Ok(())
}

#[inline]
fn bias_at(bias: &[f32], c: usize) -> f64 {
    bias.get(c).copied().unwrap_or(0.0) as f64
}

/// Clipped tap ranges: for output coordinate `o`, the kernel offsets `k`
/// whose input coordinate `o·s + k − 1` lies in `[0, n)`.
#[inline]
fn tap_range(o: usize, stride: usize, n: usize) -> (usize, usize) {
    let base = (o * stride) as isize - 1;
    let lo = (-base).max(0) as usize;
    let hi = ((n as isize - base).min(3)).max(0) as usize;
    (lo, hi)
}

/// Full 3×3 cross-correlation, weights `[out][in][3][3]`. Empty `bias` means zero.
pub fn conv3x3(input: &Tensor, weights: &[f32], bias: &[f32], out_channels: usize, stride: usize) -> Result<Tensor> {
    let cin = input.channels;
    if weights.len() != out_channels * cin * 9 {
        bail!(Dimension, "conv3x3 weights: {} values for {}x{}x3x3", weights.len(), out_channels, cin);
    }
    check_bias(bias, out_channels)?;
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = Tensor::zeros(out_channels, oh, ow);
    let mut acc = vec![0f64; oh * ow];
    for co in 0..out_channels {
        acc.iter_mut().for_each(|a| *a = bias_at(bias, co));
        for ci in 0..cin {
            let plane = input.channel(ci);
            let k = &weights[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for oy in 0..oh {
                let (ky0, ky1) = tap_range(oy, stride, h);
                for ox in 0..ow {
                    let (kx0, kx1) = tap_range(ox, stride, w);
                    let mut s = 0f64;
                    for ky in ky0..ky1 {
                        let iy = oy * stride + ky - 1;
                        for kx in kx0..kx1 {
                            let ix = ox * stride + kx - 1;
                            s += k[ky * 3 + kx] as f64 * plane[iy * w + ix] as f64;
                        }
                    }
                    acc[oy * ow + ox] += s;
                }
            }
        }
        for (o, a) in out.channel_mut(co).iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Ok(out)
}

/// Per-channel 3×3 cross-correlation, weights `[channel][3][3]`.
pub fn depthwise3x3(input: &Tensor, weights: &[f32], bias: &[f32], stride: usize) -> Result<Tensor> {
    let c = input.channels;
    if weights.len() != c * 9 {
        bail!(Dimension, "depthwise weights: {} values for {} channels", weights.len(), c);
    }
    check_bias(bias, c)?;
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let plane = input.channel(ch);
        let k = &weights[ch * 9..ch * 9 + 9];
        let b = bias_at(bias, ch);
        let dst = out.channel_mut(ch);
        for oy in 0..oh {
            let (ky0, ky1) = tap_range(oy, stride, h);
            for ox in 0..ow {
                let (kx0, kx1) = tap_range(ox, stride, w);
                let mut s = b;
                for ky in ky0..ky1 {
                    let iy = oy * stride + ky - 1;
                    for kx in kx0..kx1 {
                        s += k[ky * 3 + kx] as f64 * plane[iy * w + ox * stride + kx - 1] as f64;
                    }
                }
                dst[oy * ow + ox] = s as f32;
            }
        }
    }
    Ok(out)
}

/// Per-pixel matrix multiply, weights `[out][in]`.
pub fn pointwise1x1(input: &Tensor, weights: &[f32], bias: &[f32], out_channels: usize) -> Result<Tensor> {
    let cin = input.channels;
    if weights.len() != out_channels * cin {
        bail!(Dimension, "pointwise weights: {} values for {}x{}", weights.len(), out_channels, cin);
    }
    check_bias(bias, out_channels)?;
    let n = input.plane_len();
    let mut out = Tensor::zeros(out_channels, input.height, input.width);
    let mut acc = vec![0f64; n];
    for co in 0..out_channels {
        acc.iter_mut().for_each(|a| *a = bias_at(bias, co));
        let row = &weights[co * cin..(co + 1) * cin];
        for (ci, &wv) in row.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let wv = wv as f64;
            for (a, &x) in acc.iter_mut().zip(input.channel(ci)) {
                *a += wv * x as f64;
            }
        }
        for (o, a) in out.channel_mut(co).iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Ok(out)
}

/// Gradients of [`conv3x3`]. Weight and bias gradients are added into the
/// f64 accumulators; the input gradient is returned when requested.
pub fn conv3x3_backward(
    input: &Tensor,
    weights: &[f32],
    stride: usize,
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
    want_grad_in: bool,
) -> Option<Tensor> {
    let cin = input.channels;
    let cout = grad_out.channels;
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (grad_out.height, grad_out.width);
    if let Some(gb) = grad_b {
        for co in 0..cout {
            gb[co] += grad_out.channel(co).iter().map(|&g| g as f64).sum::<f64>();
        }
    }
    let mut gin = vec![0f64; if want_grad_in { input.len() } else { 0 }];
    for co in 0..cout {
        let go = grad_out.channel(co);
        for ci in 0..cin {
            let plane = input.channel(ci);
            let kidx = (co * cin + ci) * 9;
            let mut gk = [0f64; 9];
            for oy in 0..oh {
                let (ky0, ky1) = tap_range(oy, stride, h);
                for ox in 0..ow {
                    let g = go[oy * ow + ox] as f64;
                    if g == 0.0 {
                        continue;
                    }
                    let (kx0, kx1) = tap_range(ox, stride, w);
                    for ky in ky0..ky1 {
                        let iy = oy * stride + ky - 1;
                        for kx in kx0..kx1 {
                            let ix = ox * stride + kx - 1;
                            gk[ky * 3 + kx] += g * plane[iy * w + ix] as f64;
                            if want_grad_in {
                                gin[(ci * h + iy) * w + ix] += g * weights[kidx + ky * 3 + kx] as f64;
                            }
                        }
                    }
                }
            }
            for t in 0..9 {
                grad_w[kidx + t] += gk[t];
            }
        }
    }
    want_grad_in.then(|| Tensor {
        channels: cin,
        height: h,
        width: w,
        data: gin.into_iter().map(|v| v as f32).collect(),
    })
}

/// Gradients of [`depthwise3x3`].
pub fn depthwise3x3_backward(
    input: &Tensor,
    weights: &[f32],
    stride: usize,
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
    want_grad_in: bool,
) -> Option<Tensor> {
    let c = input.channels;
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (grad_out.height, grad_out.width);
    if let Some(gb) = grad_b {
        for ch in 0..c {
            gb[ch] += grad_out.channel(ch).iter().map(|&g| g as f64).sum::<f64>();
        }
    }
    let mut gin = vec![0f64; if want_grad_in { input.len() } else { 0 }];
    for ch in 0..c {
        let plane = input.channel(ch);
        let go = grad_out.channel(ch);
        let k = &weights[ch * 9..ch * 9 + 9];
        let mut gk = [0f64; 9];
        for oy in 0..oh {
            let (ky0, ky1) = tap_range(oy, stride, h);
            for ox in 0..ow {
                let g = go[oy * ow + ox] as f64;
                if g == 0.0 {
                    continue;
                }
                let (kx0, kx1) = tap_range(ox, stride, w);
                for ky in ky0..ky1 {
                    let iy = oy * stride + ky - 1;
                    for kx in kx0..kx1 {
                        let ix = ox * stride + kx - 1;
                        gk[ky * 3 + kx] += g * plane[iy * w + ix] as f64;
                        if want_grad_in {
                            gin[(ch * h + iy) * w + ix] += g * k[ky * 3 + kx] as f64;
                        }
                    }
                }
            }
        }
        for t in 0..9 {
            grad_w[ch * 9 + t] += gk[t];
        }
    }
    want_grad_in.then(|| Tensor {
        channels: c,
        height: h,
        width: w,
        data: gin.into_iter().map(|v| v as f32).collect(),
    })
}

/// Gradients of [`pointwise1x1`].
pub fn pointwise1x1_backward(
    input: &Tensor,
    weights: &[f32],
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
    want_grad_in: bool,
) -> Option<Tensor> {
    let cin = input.channels;
    let cout = grad_out.channels;
    let n = input.plane_len();
    if let Some(gb) = grad_b {
        for co in 0..cout {
            gb[co] += grad_out.channel(co).iter().map(|&g| g as f64).sum::<f64>();
        }
    }
    for co in 0..cout {
        let go = grad_out.channel(co);
        for ci in 0..cin {
            let x = input.channel(ci);
            let mut s = 0f64;
            for p in 0..n {
                s += go[p] as f64 * x[p] as f64;
            }
            grad_w[co * cin + ci] += s;
        }
    }
    if !want_grad_in {
        return None;
    }
    let mut gin = Tensor::zeros(cin, input.height, input.width);
    let mut acc: Vec<f64> = vec![0.0; n];
    for ci in 0..cin {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for co in 0..cout {
            let wv = weights[co * cin + ci] as f64;
            if wv == 0.0 {
                continue;
            }
            for (a, &g) in acc.iter_mut().zip(grad_out.channel(co)) {
                *a += wv * g as f64;
            }
        }
        for (o, a) in gin.channel_mut(ci).iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Some(gin)
}

/// Zero the gradient where the pre-activation fell outside (0, 6).
pub fn relu6_backward(pre_activation: &Tensor, grad: &mut Tensor) {
    for (g, &x) in grad.data.iter_mut().zip(&pre_activation.data) {
        if !(x > 0.0 && x < 6.0) {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu6_clamps() {
        assert_eq!(relu6(-1.0), 0.0);
        assert_eq!(relu6(7.0), 6.0);
        assert_eq!(relu6(3.5), 3.5);
    }

    #[test]
    fn identity_kernels_pass_input_through() {
        let input = Tensor::from_vec(2, 3, 4, (0..24).map(|v| v as f32 * 0.5 - 3.0).collect()).unwrap();
        let mut k = vec![0.0; 2 * 2 * 9];
        k[4] = 1.0;
        k[(1 * 2 + 1) * 9 + 4] = 1.0;
        assert_eq!(conv3x3(&input, &k, &[], 2, 1).unwrap(), input);
        let mut dk = vec![0.0; 18];
        dk[4] = 1.0;
        dk[13] = 1.0;
        assert_eq!(depthwise3x3(&input, &dk, &[], 1).unwrap(), input);
        assert_eq!(pointwise1x1(&input, &[1.0, 0.0, 0.0, 1.0], &[], 2).unwrap(), input);
    }

    #[test]
    fn box_filter_on_constant_image() {
        let v = 1.5;
        let input = Tensor::from_vec(1, 4, 5, vec![v; 20]).unwrap();
        let out = conv3x3(&input, &[1.0; 9], &[], 1, 1).unwrap();
        assert_eq!(out.at(0, 1, 1), 9.0 * v);
        assert_eq!(out.at(0, 0, 2), 6.0 * v);
        assert_eq!(out.at(0, 0, 0), 4.0 * v);
        assert_eq!(out.at(0, 3, 4), 4.0 * v);
    }

    #[test]
    fn stride_two_output_size() {
        let input = Tensor::zeros(1, 24, 32);
        let out = depthwise3x3(&input, &[0.0; 9], &[], 2).unwrap();
        assert_eq!(out.shape(), (1, 12, 16));
        let odd = conv3x3(&Tensor::zeros(1, 5, 5), &[0.0; 9], &[], 1, 2).unwrap();
        assert_eq!(odd.shape(), (1, 3, 3));
    }

    #[test]
    fn shape_errors() {
        let input = Tensor::zeros(2, 3, 3);
        assert!(conv3x3(&input, &[0.0; 9], &[], 1, 1).is_err());
        assert!(depthwise3x3(&input, &[0.0; 9], &[], 1).is_err());
        assert!(pointwise1x1(&input, &[0.0; 3], &[], 1).is_err());
        assert!(pointwise1x1(&input, &[0.0; 2], &[1.0, 2.0], 1).is_err());
    }
}
