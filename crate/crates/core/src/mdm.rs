//! Motion model: learns rectifying fields conditioned on the stitched
//! image and mask, samples them with guided DDIM and applies them.
//!
//! Fields enter diffusion space divided by `max_disp`, so the network
//! works on values in roughly `[-1, 1]`.

use crate::dataset::Sample;
use crate::diffusion::{cfg_combine, clean_estimate, ddim_step, ddim_timesteps, LatentState, NoiseSchedule, SamplerConfig};
use crate::image::{ImagePlane, MaskPlane, MotionField};
use crate::nn::{predict, DenoiserInput, DenoiserParams};
use crate::rng::{seeded_gaussian, stream_id, tag};
use crate::train::{Conditioning, LossRecord, Objective};
use crate::warp::{backward_warp, backward_warp_field_grad, WarpResult, WHITE};
use crate::{Error, Result};

/// Floor for the photometric term in the balancing ratio.
pub const RATIO_EPS: f64 = 1e-8;

/// Motion training sample; the field must be present.
pub type MdmSample = Sample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdmLossReport {
    pub l_mse: f64,
    pub l_pl: f64,
    /// `l_mse / max(l_pl, ε)`, treated as a constant when differentiating.
    pub weight: f64,
    pub l_total: f64,
}

fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn balance(l_mse: f64, l_pl: f64) -> MdmLossReport {
    let weight = l_mse / l_pl.max(RATIO_EPS);
    MdmLossReport { l_mse, l_pl, weight, l_total: l_mse + weight * l_pl }
}

/// Field MSE plus photometric MAE, balanced by their ratio.
pub fn mdm_loss(x0_hat: &MotionField, x0: &MotionField, coarse: &ImagePlane, target: &ImagePlane) -> Result<MdmLossReport> {
    if x0_hat.dims() != x0.dims() {
        return Err(Error::Shape("mdm_loss fields differ in size".into()));
    }
    coarse.ensure_same_shape(target, "mdm_loss")?;
    ensure_finite(x0_hat.as_slice(), "predicted field")?;
    ensure_finite(x0.as_slice(), "target field")?;
    ensure_finite(coarse.as_slice(), "warped image")?;
    ensure_finite(target.as_slice(), "target image")?;
    Ok(balance(mean_sq(x0_hat.as_slice(), x0.as_slice()), mean_abs(coarse.as_slice(), target.as_slice())))
}

/// Sampling-time options that must match how the model was trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionOptions {
    pub max_disp: f64,
    pub use_mask: bool,
}

impl Default for MotionOptions {
    fn default() -> Self {
        Self { max_disp: 6.0, use_mask: true }
    }
}

/// Training objective of the motion model.
#[derive(Debug, Clone, Copy)]
pub struct MdmObjective {
    pub max_disp: f64,
}

impl MdmObjective {
    fn field_of(&self, pred: &ImagePlane) -> Result<MotionField> {
        MotionField::denormalize(pred, self.max_disp)
    }
}

impl Objective for MdmObjective {
    fn skip_std(&self) -> Option<f64> {
        None
    }

    fn clean(&self, sample: &Sample) -> Result<ImagePlane> {
        let f = sample
            .field
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("sample {} has no motion field", sample.name)))?;
        Ok(f.normalize(self.max_disp))
    }

    fn batch_loss(&self, samples: &[&Sample], preds: &[ImagePlane], clean: &[ImagePlane]) -> Result<(LossRecord, Vec<ImagePlane>)> {
        let b = samples.len() as f64;
        let mut warped = Vec::with_capacity(samples.len());
        let (mut l_mse, mut l_pl) = (0.0, 0.0);
        for ((s, p), c) in samples.iter().zip(preds).zip(clean) {
            let field = self.field_of(p)?;
            let coarse = backward_warp(&s.stitched, &field, &[WHITE; 3], None)?.image;
            l_mse += mean_sq(p.as_slice(), c.as_slice()) / b;
            l_pl += mean_abs(coarse.as_slice(), s.target.as_slice()) / b;
            warped.push((field, coarse));
        }
        let rep = balance(l_mse, l_pl);
        let mut grads = Vec::with_capacity(samples.len());
        for (((s, p), c), (field, coarse)) in samples.iter().zip(preds).zip(clean).zip(&warped) {
            let n_f = p.len() as f64;
            let n_i = coarse.len() as f64;
            let mut g = p.clone();
            for (gv, cv) in g.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *gv = 2.0 * (*gv - cv) / (n_f * b);
            }
            if rep.weight != 0.0 {
                let mut g_img = coarse.clone();
                for (gv, tv) in g_img.as_mut_slice().iter_mut().zip(s.target.as_slice()) {
                    let d = *gv - tv;
                    *gv = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    } / (n_i * b);
                }
                let g_field = backward_warp_field_grad(&s.stitched, field, &[WHITE; 3], &g_img)?;
                let k = rep.weight * self.max_disp;
                for (gv, fv) in g.as_mut_slice().iter_mut().zip(g_field.as_slice()) {
                    *gv += k * fv;
                }
            }
            grads.push(g);
        }
        let rec = LossRecord { step: 0, l_mse: rep.l_mse, l_pl: rep.l_pl, weight: rep.weight, l_total: rep.l_total };
        Ok((rec, grads))
    }
}

/// Guided prediction of the clean sample at one step.
pub(crate) fn guided_prediction(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    skip_std: Option<f64>,
    noisy: &ImagePlane,
    cond: &Conditioning,
    t: usize,
    cfg_scale: f64,
) -> Result<ImagePlane> {
    let input = DenoiserInput {
        noisy,
        cond_image: &cond.image,
        cond_mask: &cond.mask,
        t,
        cond_dropped: false,
    };
    let c = clean_estimate(&predict(params, &input)?, noisy, t, sched, skip_std)?;
    if cfg_scale == 1.0 {
        return Ok(c);
    }
    let u = clean_estimate(&predict(params, &DenoiserInput { cond_dropped: true, ..input })?, noisy, t, sched, skip_std)?;
    cfg_combine(&c, &u, cfg_scale)
}

/// DDIM noise for the eta > 0 variant, keyed by step position.
pub(crate) fn eta_noise(sampler: &SamplerConfig, which: u64, k: usize, len: usize) -> Option<Vec<f64>> {
    (sampler.eta > 0.0).then(|| seeded_gaussian(len, sampler.seed, stream_id(tag::SAMPLE_ETA, which, k as u64)))
}

/// Samples a rectifying field in pixels for one stitched image.
pub fn sample_motion(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    stitched: &ImagePlane,
    mask: &MaskPlane,
    sampler: &SamplerConfig,
    opts: &MotionOptions,
) -> Result<MotionField> {
    sampler.validate(sched)?;
    if params.layout().noisy_channels() != 2 {
        return Err(Error::Config("motion sampling needs a 2-channel model".into()));
    }
    let (h, w) = mask.dims();
    let cond = Conditioning::from_planes(stitched, mask, opts.use_mask);
    let len = h * w * 2;
    let x_t = ImagePlane::from_vec(h, w, 2, seeded_gaussian(len, sampler.seed, stream_id(tag::SAMPLE_NOISE, 0, 0)))?;
    let steps = ddim_timesteps(sched.len(), sampler.num_steps);
    let mut state = LatentState { data: x_t, t: Some(steps[0]) };
    let mut x0 = state.data.clone();
    for (k, &t) in steps.iter().enumerate() {
        x0 = guided_prediction(params, sched, None, &state.data, &cond, t, sampler.cfg_scale)?;
        let t_prev = steps.get(k + 1).copied();
        let noise = eta_noise(sampler, 0, k, len);
        state = ddim_step(&state, &x0, t_prev, sched, sampler.eta, noise.as_deref())?;
    }
    MotionField::denormalize(&x0, opts.max_disp)
}

/// Warps the stitched image by `field` with white fill. Validity accounts
/// for both the image bounds and the stitched mask.
pub fn rectangle_coarse(stitched: &ImagePlane, mask: &MaskPlane, field: &MotionField) -> Result<WarpResult> {
    backward_warp(stitched, field, &[WHITE; 3], Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let f = MotionField::constant(3, 4, 0.2, -0.1);
        let img = ImagePlane::filled(3, 4, 3, 0.4);
        let r = mdm_loss(&f, &f, &img, &img).unwrap();
        assert_eq!(r.l_total, 0.0);
        let other = ImagePlane::filled(3, 4, 3, 0.9);
        let r = mdm_loss(&f, &f, &img, &other).unwrap();
        assert_eq!((r.l_mse, r.weight, r.l_total), (0.0, 0.0, 0.0));
        let g = MotionField::constant(3, 4, 1.2, -0.1);
        let r = mdm_loss(&g, &f, &img, &other).unwrap();
        assert!((r.l_mse - 0.5).abs() < 1e-12);
        assert!((r.l_pl - 0.5).abs() < 1e-12);
        assert!((r.weight - 1.0).abs() < 1e-12);
        assert!((r.l_total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_non_finite() {
        let f = MotionField::zeros(2, 2);
        let img = ImagePlane::filled(2, 2, 3, 0.5);
        let bad = ImagePlane::filled(2, 2, 3, f64::NAN);
        assert!(mdm_loss(&f, &f, &bad, &img).is_err());
    }

    #[test]
    fn coarse_zero_field_is_identity() {
        let img = ImagePlane::from_fn(4, 4, 3, |y, x, c| (y * 4 + x + c) as f64 / 20.0);
        let r = rectangle_coarse(&img, &MaskPlane::ones(4, 4), &MotionField::zeros(4, 4)).unwrap();
        assert_eq!(r.image, img);
    }
}
