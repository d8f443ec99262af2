//! Layer kernels on channel-major feature maps: convolution through
//! im2col + GEMM, SiLU, nearest upsampling and the sinusoidal timestep
//! embedding. Each forward has a matching backward.

/// Channel-major `C x H x W` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Feature {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `C = beta·C + op(A)·op(B)` with `op(A)` of shape `m x k`, `op(B)` of
/// shape `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the strides checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }
}

/// Unfolds `x` into a `(cin·k·k) x (oh·ow)` patch matrix.
pub fn im2col(x: &Feature, g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = g.out_dims(x.h, x.w);
    let k = g.kernel;
    let p = oh * ow;
    let mut cols = vec![0.0; g.cin * k * k * p];
    for ci in 0..g.cin {
        let plane = &x.data[ci * x.h * x.w..(ci + 1) * x.h * x.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < x.w as isize {
                            *o = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(cols: &[f64], g: &ConvGeom, h: usize, w: usize) -> Feature {
    let (oh, ow) = g.out_dims(h, w);
    let k = g.kernel;
    let p = oh * ow;
    let mut out = Feature::zeros(g.cin, h, w);
    for ci in 0..g.cin {
        let plane = &mut out.data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution; returns the output and the patch matrix needed by
/// [`conv2d_backward`].
pub fn conv2d_forward(x: &Feature, g: &ConvGeom, weight: &[f64], bias: Option<&[f64]>) -> (Feature, Vec<f64>) {
    assert_eq!(x.c, g.cin, "conv input channels");
    let (oh, ow) = g.out_dims(x.h, x.w);
    let p = oh * ow;
    let kk = g.cin * g.kernel * g.kernel;
    let cols = im2col(x, g);
    let mut out = Feature::zeros(g.cout, oh, ow);
    if let Some(b) = bias {
        for (co, chunk) in out.data.chunks_exact_mut(p).enumerate() {
            chunk.fill(b[co]);
        }
        gemm(g.cout, kk, p, weight, false, &cols, false, 1.0, &mut out.data);
    } else {
        gemm(g.cout, kk, p, weight, false, &cols, false, 0.0, &mut out.data);
    }
    (out, cols)
}

/// Accumulates weight/bias gradients into `dw`/`db` and returns the input
/// gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    grad_out: &Feature,
    cols: &[f64],
    g: &ConvGeom,
    weight: &[f64],
    in_h: usize,
    in_w: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    need_input_grad: bool,
) -> Option<Feature> {
    let p = grad_out.h * grad_out.w;
    let kk = g.cin * g.kernel * g.kernel;
    gemm(g.cout, p, kk, &grad_out.data, false, cols, true, 1.0, dw);
    if let Some(db) = db {
        for (co, chunk) in grad_out.data.chunks_exact(p).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
    }
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![0.0; kk * p];
    gemm(kk, g.cout, p, weight, true, &grad_out.data, false, 0.0, &mut dcols);
    Some(col2im(&dcols, g, in_h, in_w))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu_forward(x: &Feature) -> Feature {
    Feature {
        c: x.c,
        h: x.h,
        w: x.w,
        data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
    }
}

/// Gradient of SiLU given its pre-activation input.
pub fn silu_backward(x: &Feature, grad_out: &Feature) -> Feature {
    Feature {
        c: x.c,
        h: x.h,
        w: x.w,
        data: x
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| {
                let s = sigmoid(v);
                g * s * (1.0 + v * (1.0 - s))
            })
            .collect(),
    }
}

pub fn upsample2_forward(x: &Feature) -> Feature {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Feature::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
        let dst = &mut out.data[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..h2 {
            let s_row = &src[(y / 2) * x.w..(y / 2 + 1) * x.w];
            for (xx, d) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                *d = s_row[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Feature) -> Feature {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut out = Feature::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        let src = &grad_out.data[c * grad_out.h * grad_out.w..(c + 1) * grad_out.h * grad_out.w];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                dst[(y / 2) * w + x / 2] += src[y * grad_out.w + x];
            }
        }
    }
    out
}

/// Sinusoidal embedding of a timestep: `dim/2` sines then `dim/2` cosines
/// over geometrically spaced frequencies.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Feature, g: &ConvGeom, w: &[f64], b: Option<&[f64]>) -> Feature {
        let (oh, ow) = g.out_dims(x.h, x.w);
        let mut out = Feature::zeros(g.cout, oh, ow);
        for co in 0..g.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..g.cin {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let wi = ((co * g.cin + ci) * g.kernel + ky) * g.kernel + kx;
                                acc += w[wi] * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                            }
                        }
                    }
                    out.data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn ramp(n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.731 + s).sin() * 1.3).collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(stride, h, w) in &[(1usize, 5usize, 7usize), (2, 8, 6), (2, 7, 5)] {
            let g = ConvGeom { cin: 3, cout: 4, kernel: 3, stride, pad: 1 };
            let x = Feature { c: 3, h, w, data: ramp(3 * h * w, 0.2) };
            let wt = ramp(g.weight_len(), 1.1);
            let b = ramp(4, 2.0);
            let (fast, _) = conv2d_forward(&x, &g, &wt, Some(&b));
            let slow = naive_conv(&x, &g, &wt, Some(&b));
            assert_eq!(fast.h, slow.h);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom { cin: 2, cout: 1, kernel: 3, stride: 2, pad: 1 };
        let x = Feature { c: 2, h: 6, w: 4, data: ramp(48, 0.0) };
        let cols = im2col(&x, &g);
        let y = ramp(cols.len(), 3.0);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, &g, 6, 4);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upsample_round_trip_sums() {
        let x = Feature { c: 2, h: 2, w: 3, data: ramp(12, 0.5) };
        let up = upsample2_forward(&x);
        assert_eq!((up.h, up.w), (4, 6));
        assert_eq!(up.data[0], x.data[0]);
        assert_eq!(up.data[7], x.data[0]);
        let back = upsample2_backward(&up);
        for (a, b) in back.data.iter().zip(&x.data) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_shape() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let e = timestep_embedding(500, 32);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
    }
}
