//! Backward (pull) warping with bilinear taps.
//!
//! Pixel centres sit at integer coordinates, origin top-left, `x` to the
//! right and `y` downwards. Output pixel `(x, y)` samples the source at
//! `(x + dx, y + dy)`; taps that fall outside the source read the fill
//! value instead.

use crate::image::{ImagePlane, MaskPlane, MotionField};
use crate::{Error, Result};

/// White, the fill that makes out-of-range sampling visible.
pub const WHITE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: ImagePlane,
    /// Fraction of the bilinear support that landed on valid source pixels.
    pub validity: MaskPlane,
}

#[derive(Debug, Clone, Copy)]
struct Taps {
    x0: isize,
    y0: isize,
    fx: f64,
    fy: f64,
}

#[inline]
fn taps(x: usize, y: usize, d: (f64, f64)) -> Taps {
    let sx = x as f64 + d.0;
    let sy = y as f64 + d.1;
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    Taps {
        x0: fx0 as isize,
        y0: fy0 as isize,
        fx: sx - fx0,
        fy: sy - fy0,
    }
}

impl Taps {
    /// `(dx, dy, weight)` for the four corners.
    #[inline]
    fn corners(&self) -> [(isize, isize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ]
    }
}

#[inline]
fn inside(x: isize, y: isize, w: usize, h: usize) -> bool {
    x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h
}

fn check_dims(src_h: usize, src_w: usize, field: &MotionField) -> Result<()> {
    if field.dims() != (src_h, src_w) {
        return Err(Error::Shape(format!(
            "field {:?} does not match source {src_h}x{src_w}",
            field.dims()
        )));
    }
    Ok(())
}

/// Warps `src` by `field`. `fill` must have one value per channel. When
/// `src_valid` is supplied the validity plane is additionally multiplied by
/// the bilinear sample of that mask (zero outside the source).
pub fn backward_warp(
    src: &ImagePlane,
    field: &MotionField,
    fill: &[f64],
    src_valid: Option<&MaskPlane>,
) -> Result<WarpResult> {
    let (h, w, c) = src.shape();
    check_dims(h, w, field)?;
    if fill.len() != c {
        return Err(Error::Shape(format!("{} fill values for {c} channels", fill.len())));
    }
    if let Some(m) = src_valid {
        if m.dims() != (h, w) {
            return Err(Error::Shape("source validity mask dimensions".into()));
        }
    }
    let mut out = ImagePlane::new(h, w, c);
    let mut validity = Vec::with_capacity(h * w);
    let mut acc = vec![0.0; c];
    let mut lo = vec![0.0; c];
    let mut hi = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let tp = taps(x, y, field.get(y, x));
            acc.iter_mut().for_each(|v| *v = 0.0);
            lo.iter_mut().for_each(|v| *v = f64::INFINITY);
            hi.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            let mut frac = 0.0;
            let mut mask_sample = 0.0;
            for (ox, oy, wgt) in tp.corners() {
                if wgt == 0.0 {
                    continue;
                }
                let (sx, sy) = (tp.x0 + ox, tp.y0 + oy);
                let p = if inside(sx, sy, w, h) { src.pixel(sy as usize, sx as usize) } else { fill };
                for (ch, v) in p.iter().enumerate() {
                    acc[ch] += wgt * v;
                    lo[ch] = lo[ch].min(*v);
                    hi[ch] = hi[ch].max(*v);
                }
                if inside(sx, sy, w, h) {
                    frac += wgt;
                    if let Some(m) = src_valid {
                        mask_sample += wgt * m.get(sy as usize, sx as usize);
                    }
                }
            }
            // A convex combination stays within its taps; the clamps only
            // remove rounding.
            for (ch, a) in acc.iter().enumerate() {
                let v = if lo[ch] <= hi[ch] { a.max(lo[ch]).min(hi[ch]) } else { *a };
                out.set(y, x, ch, v);
            }
            let valid = match src_valid {
                Some(_) => frac * mask_sample,
                None => frac,
            };
            validity.push(valid.max(0.0).min(1.0));
        }
    }
    Ok(WarpResult {
        image: out,
        validity: MaskPlane::from_vec(h, w, validity)?,
    })
}

/// Warps a mask plane with zero fill.
pub fn warp_mask(mask: &MaskPlane, field: &MotionField) -> Result<MaskPlane> {
    let r = backward_warp(&mask.to_image(), field, &[0.0], None)?;
    Ok(MaskPlane::from_image(&r.image))
}

/// Gradient of a scalar loss with respect to the field (in pixels), given
/// the loss gradient with respect to the warped image.
pub fn backward_warp_field_grad(
    src: &ImagePlane,
    field: &MotionField,
    fill: &[f64],
    grad_out: &ImagePlane,
) -> Result<MotionField> {
    let (h, w, _) = src.shape();
    check_dims(h, w, field)?;
    src.ensure_same_shape(grad_out, "warp gradient")?;
    let mut data = Vec::with_capacity(h * w * 2);
    let tap_value = |sx: isize, sy: isize, ch: usize| {
        if inside(sx, sy, w, h) {
            src.get(sy as usize, sx as usize, ch)
        } else {
            fill[ch]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let tp = taps(x, y, field.get(y, x));
            let g = grad_out.pixel(y, x);
            let (mut gx, mut gy) = (0.0, 0.0);
            for (ch, gc) in g.iter().enumerate() {
                let v00 = tap_value(tp.x0, tp.y0, ch);
                let v10 = tap_value(tp.x0 + 1, tp.y0, ch);
                let v01 = tap_value(tp.x0, tp.y0 + 1, ch);
                let v11 = tap_value(tp.x0 + 1, tp.y0 + 1, ch);
                gx += gc * ((1.0 - tp.fy) * (v10 - v00) + tp.fy * (v11 - v01));
                gy += gc * ((1.0 - tp.fx) * (v01 - v00) + tp.fx * (v11 - v10));
            }
            data.push(gx);
            data.push(gy);
        }
    }
    MotionField::from_vec(h, w, data)
}
