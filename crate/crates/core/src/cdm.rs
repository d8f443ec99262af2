//! Content model and the mask-weighted sampling loop.
//!
//! At every DDIM step the clean estimate is split with the confidence mask
//! `M`: the part under `M` comes from the coarse warp result, the rest from
//! the network. The fused estimate drives the next update, so kept content
//! is re-diffused to the next noise level by the DDIM step itself.

use crate::dataset::Sample;
use crate::diffusion::{ddim_step, ddim_timesteps, diffuse, LatentState, NoiseSchedule, SamplerConfig};
use crate::image::{ImagePlane, MaskPlane, MotionField};
use crate::masks::{confidence_mask, diagonal, intensity_map, uniform_confidence, white_edge_mask, MaskConfig};
use crate::mdm::{eta_noise, guided_prediction, rectangle_coarse, sample_motion, MotionOptions};
use crate::nn::DenoiserParams;
use crate::rng::{seeded_gaussian, stream_id, tag};
use crate::train::{Conditioning, LossRecord, Objective};
use crate::warp::warp_mask;
use crate::{Error, Result};

/// Content training sample; the field is unused.
pub type CdmSample = Sample;

/// Mean squared error between two planes.
pub fn cdm_loss(x0_prime: &ImagePlane, x0: &ImagePlane) -> Result<f64> {
    x0_prime.ensure_same_shape(x0, "cdm_loss")?;
    if !x0_prime.all_finite() || !x0.all_finite() {
        return Err(Error::NonFinite("cdm_loss input".into()));
    }
    Ok(x0_prime
        .as_slice()
        .iter()
        .zip(x0.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x0.len() as f64)
}

/// Assumed standard deviation of images in diffusion range.
pub const IMAGE_STD: f64 = 0.5;

/// Training objective of the content model: the rectangled target in
/// diffusion range.
#[derive(Debug, Clone, Copy, Default)]
pub struct CdmObjective;

impl Objective for CdmObjective {
    fn clean(&self, sample: &Sample) -> Result<ImagePlane> {
        Ok(sample.target.to_diffusion())
    }

    fn batch_loss(&self, _samples: &[&Sample], preds: &[ImagePlane], clean: &[ImagePlane]) -> Result<(LossRecord, Vec<ImagePlane>)> {
        let b = preds.len() as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(preds.len());
        for (p, c) in preds.iter().zip(clean) {
            p.ensure_same_shape(c, "cdm batch")?;
            let n = p.len() as f64;
            let mut g = p.clone();
            for (gv, cv) in g.as_mut_slice().iter_mut().zip(c.as_slice()) {
                let d = *gv - cv;
                loss += d * d / (n * b);
                *gv = 2.0 * d / (n * b);
            }
            grads.push(g);
        }
        Ok((LossRecord { step: 0, l_mse: loss, l_pl: 0.0, weight: 0.0, l_total: loss }, grads))
    }

    fn skip_std(&self) -> Option<f64> {
        Some(IMAGE_STD)
    }
}

/// Range part `M⊙r` and null part `(1−M)⊙r` of a plane.
pub fn rnt_decompose(r: &ImagePlane, mask: &MaskPlane) -> Result<(ImagePlane, ImagePlane)> {
    let (h, w, c) = r.shape();
    if mask.dims() != (h, w) {
        return Err(Error::Shape("rnt_decompose mask dimensions".into()));
    }
    let mut range = r.clone();
    let mut null = r.clone();
    for (i, (a, b)) in range.as_mut_slice().iter_mut().zip(null.as_mut_slice()).enumerate() {
        let m = mask.as_slice()[i / c];
        *a *= m;
        *b *= 1.0 - m;
    }
    Ok((range, null))
}

/// `M⊙kept + (1−M)⊙generated`, per pixel across channels.
fn fuse(kept: &ImagePlane, generated: &ImagePlane, mask: &MaskPlane) -> ImagePlane {
    let c = kept.channels();
    let mut out = generated.clone();
    for (i, (o, k)) in out.as_mut_slice().iter_mut().zip(kept.as_slice()).enumerate() {
        let m = mask.as_slice()[i / c];
        *o = m * k + (1.0 - m) * *o;
    }
    out
}

/// Sampling state of the fused loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub x_t: LatentState,
    /// Coarse result in diffusion range.
    pub coarse: ImagePlane,
    pub mask: MaskPlane,
}

/// Options of the content sampler.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContentOptions {
    /// Feed the stitched mask to the network (must match training).
    pub no_mask: bool,
    /// After each step, overwrite the kept region with a freshly noised
    /// copy of the coarse result instead of relying on the deterministic
    /// update alone.
    pub stochastic_fusion: bool,
}

fn sample_content(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    stitched: &ImagePlane,
    stitched_mask: &MaskPlane,
    fusion: Option<(&ImagePlane, &MaskPlane)>,
    sampler: &SamplerConfig,
    opts: &ContentOptions,
) -> Result<ImagePlane> {
    sampler.validate(sched)?;
    if params.layout().noisy_channels() != 3 {
        return Err(Error::Config("content sampling needs a 3-channel model".into()));
    }
    let (h, w) = stitched_mask.dims();
    let cond = Conditioning::from_planes(stitched, stitched_mask, !opts.no_mask);
    let len = h * w * 3;
    let x_t = ImagePlane::from_vec(h, w, 3, seeded_gaussian(len, sampler.seed, stream_id(tag::SAMPLE_NOISE, 1, 0)))?;
    let steps = ddim_timesteps(sched.len(), sampler.num_steps);
    let coarse = fusion.map(|(c, m)| (c.to_diffusion(), m.clone()));
    let mut state = LatentState { data: x_t, t: Some(steps[0]) };
    let mut x0 = state.data.clone();
    for (k, &t) in steps.iter().enumerate() {
        x0 = guided_prediction(params, sched, Some(IMAGE_STD), &state.data, &cond, t, sampler.cfg_scale)?;
        let fused = match &coarse {
            Some((c, m)) => fuse(c, &x0, m),
            None => x0.clone(),
        };
        let t_prev = steps.get(k + 1).copied();
        let noise = eta_noise(sampler, 1, k, len);
        state = ddim_step(&state, &fused, t_prev, sched, sampler.eta, noise.as_deref())?;
        if let (Some((c, m)), true, Some(tp)) = (&coarse, opts.stochastic_fusion, t_prev) {
            let eps = seeded_gaussian(len, sampler.seed, stream_id(tag::SAMPLE_NOISE, 2, k as u64));
            let renoised = diffuse(c, &eps, sched.alpha_bar(Some(tp)))?;
            state.data = fuse(&renoised, &state.data, m);
        }
    }
    let generated = x0.to_unit();
    Ok(match fusion {
        Some((c, m)) => fuse(c, &generated, m).map(|v| v.clamp(0.0, 1.0)),
        None => generated,
    })
}

/// Mask-weighted content sampling. Pixels with `M = 1` reproduce `coarse`
/// exactly; pixels with `M = 0` are fully generated.
pub fn weighted_sample(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    coarse: &ImagePlane,
    mask: &MaskPlane,
    stitched: &ImagePlane,
    stitched_mask: &MaskPlane,
    sampler: &SamplerConfig,
    opts: &ContentOptions,
) -> Result<ImagePlane> {
    let (h, w) = stitched_mask.dims();
    if coarse.shape() != (h, w, 3) || mask.dims() != (h, w) || stitched.shape() != (h, w, 3) {
        return Err(Error::Shape("weighted_sample planes differ in size".into()));
    }
    sample_content(params, sched, stitched, stitched_mask, Some((coarse, mask)), sampler, opts)
}

/// Plain conditional sampling without any fusion.
pub fn sample_unconstrained(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    stitched: &ImagePlane,
    stitched_mask: &MaskPlane,
    sampler: &SamplerConfig,
    opts: &ContentOptions,
) -> Result<ImagePlane> {
    sample_content(params, sched, stitched, stitched_mask, None, sampler, opts)
}

/// How the fusion mask is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMask {
    /// Confidence from white edges, displacement and the stitched mask.
    Confidence,
    /// The same constant everywhere.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub motion_sampler: SamplerConfig,
    pub content_sampler: SamplerConfig,
    pub motion: MotionOptions,
    pub content: ContentOptions,
    pub masks: MaskConfig,
    pub fusion_mask: FusionMask,
    /// Displacement normaliser of the intensity map; image diagonal when
    /// `None`.
    pub norm_len: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            motion_sampler: SamplerConfig { num_steps: 2, cfg_scale: 6.0, eta: 0.0, seed: 0 },
            content_sampler: SamplerConfig { num_steps: 200, cfg_scale: 1.0, eta: 0.0, seed: 0 },
            motion: MotionOptions::default(),
            content: ContentOptions::default(),
            masks: MaskConfig::default(),
            fusion_mask: FusionMask::Confidence,
            norm_len: None,
        }
    }
}

/// Final output and every intermediate of one rectangling run.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangled {
    pub output: ImagePlane,
    pub coarse: ImagePlane,
    pub confidence: MaskPlane,
    pub field: MotionField,
    pub validity: MaskPlane,
    pub intensity: MaskPlane,
    pub white_edges: MaskPlane,
    pub warped_mask: MaskPlane,
}

/// Everything up to (but excluding) content sampling.
pub fn coarse_stage(stitched: &ImagePlane, stitched_mask: &MaskPlane, field: MotionField, cfg: &PipelineConfig) -> Result<Rectangled> {
    let (h, w) = stitched_mask.dims();
    let warp = rectangle_coarse(stitched, stitched_mask, &field)?;
    let intensity = intensity_map(&field, cfg.norm_len.unwrap_or_else(|| diagonal(h, w)))?;
    let white_edges = white_edge_mask(&warp, cfg.masks.tau_valid)?;
    let warped_mask = if cfg.masks.warp_stitched_mask {
        warp_mask(stitched_mask, &field)?
    } else {
        stitched_mask.clone()
    };
    let confidence = match cfg.fusion_mask {
        FusionMask::Confidence => confidence_mask(&white_edges, &intensity, &warped_mask, cfg.masks.omega0)?,
        FusionMask::Fixed => uniform_confidence(h, w, cfg.masks.omega0),
    };
    Ok(Rectangled {
        output: warp.image.clone(),
        coarse: warp.image,
        confidence,
        field,
        validity: warp.validity,
        intensity,
        white_edges,
        warped_mask,
    })
}

/// Motion sampling (or an injected field), coarse warp, confidence mask
/// and weighted content sampling.
pub fn rectangle_full(
    motion_params: Option<&DenoiserParams>,
    content_params: &DenoiserParams,
    sched: &NoiseSchedule,
    stitched: &ImagePlane,
    stitched_mask: &MaskPlane,
    injected_field: Option<&MotionField>,
    cfg: &PipelineConfig,
) -> Result<Rectangled> {
    let field = match (injected_field, motion_params) {
        (Some(f), _) => f.clone(),
        (None, Some(p)) => sample_motion(p, sched, stitched, stitched_mask, &cfg.motion_sampler, &cfg.motion)?,
        (None, None) => return Err(Error::Config("no motion model and no injected field".into())),
    };
    let mut r = coarse_stage(stitched, stitched_mask, field, cfg)?;
    r.output = weighted_sample(
        content_params,
        sched,
        &r.coarse,
        &r.confidence,
        stitched,
        stitched_mask,
        &cfg.content_sampler,
        &cfg.content,
    )?;
    Ok(r)
}
