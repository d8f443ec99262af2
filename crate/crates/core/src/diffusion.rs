//! Noise schedules, forward diffusion, deterministic DDIM steps and
//! classifier-free guidance.
//!
//! Networks in this crate predict the clean sample directly; the implied
//! noise is recovered inside [`ddim_step`].

use crate::image::ImagePlane;
use crate::{Error, Result};

/// Linear variance schedule and its cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `(c_skip, c_out)` of the clean estimate `c_skip·x_t + c_out·F`, where
    /// `F` is the raw network output. `c_skip·x_t` is the least-squares
    /// linear estimate of a clean signal with standard deviation
    /// `data_std`; `c_out` is its residual standard deviation, so `F` has
    /// unit scale at every noise level.
    pub fn output_scales(&self, t: usize, data_std: f64) -> (f64, f64) {
        let ab = self.alpha_bars[t];
        let var = data_std * data_std;
        let denom = ab * var + (1.0 - ab);
        (ab.sqrt() * var / denom, data_std * (1.0 - ab).sqrt() / denom.sqrt())
    }

    /// `ᾱ` at `t`, or `1` for the virtual step before the first one.
    #[inline]
    pub fn alpha_bar(&self, t: Option<usize>) -> f64 {
        match t {
            Some(t) => self.alpha_bars[t],
            None => 1.0,
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// Clean estimate from the raw network output at step `t`. With
/// `skip_std` the output is the residual of the skip for a signal of that
/// standard deviation; without it the output is the estimate itself.
pub fn clean_estimate(
    raw: &ImagePlane,
    noisy: &ImagePlane,
    t: usize,
    sched: &NoiseSchedule,
    skip_std: Option<f64>,
) -> Result<ImagePlane> {
    if raw.shape() != noisy.shape() {
        return Err(Error::Shape(format!("network output {:?} vs state {:?}", raw.shape(), noisy.shape())));
    }
    let Some(std) = skip_std else {
        return Ok(raw.clone());
    };
    let (skip, out) = sched.output_scales(t, std);
    let v = raw.as_slice().iter().zip(noisy.as_slice()).map(|(f, x)| skip * x + out * f).collect();
    ImagePlane::from_vec(raw.height(), raw.width(), raw.channels(), v)
}

/// Linear betas from `beta_start` to `beta_end` inclusive over `steps`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    let in_open_unit = |b: f64| b > 0.0 && b < 1.0;
    if !in_open_unit(beta_start) || !in_open_unit(beta_end) || beta_start > beta_end {
        return Err(Error::Config(format!(
            "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for (i, a) in alphas.iter().enumerate() {
        acc = if i == 0 { *a } else { acc * a };
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// A diffusion-space array tagged with its timestep; `None` marks a clean
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub data: ImagePlane,
    pub t: Option<usize>,
}

/// Sampler settings shared by both pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub cfg_scale: f64,
    pub eta: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.num_steps == 0 || self.num_steps > sched.len() {
            return Err(Error::Config(format!(
                "num_steps must lie in 1..={}, got {}",
                sched.len(),
                self.num_steps
            )));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(Error::Config(format!("cfg_scale must be >= 0, got {}", self.cfg_scale)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·eps` for an explicit `ᾱ`.
pub fn diffuse(x0: &ImagePlane, eps: &[f64], alpha_bar: f64) -> Result<ImagePlane> {
    if eps.len() != x0.len() {
        return Err(Error::Shape(format!(
            "noise has {} entries, sample has {}",
            eps.len(),
            x0.len()
        )));
    }
    let a = alpha_bar.sqrt();
    let s = (1.0 - alpha_bar).sqrt();
    let mut out = x0.clone();
    for (o, e) in out.as_mut_slice().iter_mut().zip(eps) {
        *o = a * *o + s * e;
    }
    Ok(out)
}

/// Forward diffusion of a clean sample straight to step `t`.
pub fn q_sample(x0: &ImagePlane, t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<LatentState> {
    if t >= sched.len() {
        return Err(Error::Config(format!("timestep {t} outside schedule of {}", sched.len())));
    }
    Ok(LatentState {
        data: diffuse(x0, eps, sched.alpha_bars[t])?,
        t: Some(t),
    })
}

/// One DDIM update from `x_t` towards `t_prev` given a clean prediction.
///
/// With `eta == 0` the step is deterministic and `noise` is ignored; with
/// `eta > 0` a unit-Gaussian `noise` array of matching length is required.
pub fn ddim_step(
    x_t: &LatentState,
    x0_pred: &ImagePlane,
    t_prev: Option<usize>,
    sched: &NoiseSchedule,
    eta: f64,
    noise: Option<&[f64]>,
) -> Result<LatentState> {
    let t = x_t
        .t
        .ok_or_else(|| Error::Config("cannot step from a clean sample".into()))?;
    if t >= sched.len() {
        return Err(Error::Config(format!("timestep {t} outside schedule of {}", sched.len())));
    }
    if let Some(p) = t_prev {
        if p >= t {
            return Err(Error::Config(format!("t_prev {p} must precede t {t}")));
        }
    }
    x_t.data.ensure_same_shape(x0_pred, "ddim_step")?;

    let ab_t = sched.alpha_bars[t];
    let ab_prev = sched.alpha_bar(t_prev);
    if t_prev.is_none() {
        return Ok(LatentState {
            data: x0_pred.clone(),
            t: None,
        });
    }

    let sa_t = ab_t.sqrt();
    let inv_s_t = 1.0 / (1.0 - ab_t).sqrt();
    let sa_prev = ab_prev.sqrt();
    let sigma = if eta > 0.0 {
        eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt()
    } else {
        0.0
    };
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();

    let noise = if sigma > 0.0 {
        let n = noise.ok_or_else(|| Error::Config("eta > 0 requires a noise array".into()))?;
        if n.len() != x0_pred.len() {
            return Err(Error::Shape("ddim_step noise length".into()));
        }
        Some(n)
    } else {
        None
    };

    let mut out = x0_pred.clone();
    let xt = x_t.data.as_slice();
    for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
        let x0 = *o;
        let eps_hat = (xt[i] - sa_t * x0) * inv_s_t;
        let mut v = sa_prev * x0 + dir * eps_hat;
        if let Some(n) = noise {
            v += sigma * n[i];
        }
        *o = v;
    }
    Ok(LatentState {
        data: out,
        t: t_prev,
    })
}

/// `uncond + scale·(cond − uncond)`; scales 1 and 0 return the respective
/// branch unchanged.
pub fn cfg_combine(pred_cond: &ImagePlane, pred_uncond: &ImagePlane, scale: f64) -> Result<ImagePlane> {
    pred_cond.ensure_same_shape(pred_uncond, "cfg_combine")?;
    if scale == 1.0 {
        return Ok(pred_cond.clone());
    }
    if scale == 0.0 {
        return Ok(pred_uncond.clone());
    }
    let mut out = pred_uncond.clone();
    for (o, c) in out.as_mut_slice().iter_mut().zip(pred_cond.as_slice()) {
        *o += scale * (c - *o);
    }
    Ok(out)
}

/// Evenly spaced descending sub-sequence of `num_steps` timesteps ending at
/// `total - 1`.
pub fn ddim_timesteps(total: usize, num_steps: usize) -> Vec<usize> {
    assert!(num_steps >= 1 && num_steps <= total, "num_steps out of range");
    (0..num_steps)
        .rev()
        .map(|i| (i + 1) * total / num_steps - 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_gaussian;

    fn plane(vals: &[f64]) -> ImagePlane {
        ImagePlane::from_vec(1, vals.len(), 1, vals.to_vec()).unwrap()
    }

    /// Monte-Carlo regression of x0 on x_t: the fitted slope is c_skip and
    /// the residual standard deviation is c_out.
    #[test]
    fn output_scales_are_the_linear_estimator() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let n = 200_000;
        let std = 0.5;
        let x0: Vec<f64> = seeded_gaussian(n, 1, 0).iter().map(|v| v * std).collect();
        let eps = seeded_gaussian(n, 1, 1);
        for t in [0, 100, 400, 999] {
            let ab = s.alpha_bars()[t];
            let xt: Vec<f64> = x0.iter().zip(&eps).map(|(a, e)| ab.sqrt() * a + (1.0 - ab).sqrt() * e).collect();
            let sxy: f64 = xt.iter().zip(&x0).map(|(a, b)| a * b).sum();
            let sxx: f64 = xt.iter().map(|a| a * a).sum();
            let slope = sxy / sxx;
            let resid = (x0.iter().zip(&xt).map(|(b, a)| (b - slope * a).powi(2)).sum::<f64>() / n as f64).sqrt();
            let (skip, out) = s.output_scales(t, std);
            assert!((slope - skip).abs() < 0.01, "t {t}: slope {slope} vs {skip}");
            assert!((resid - out).abs() < 0.01, "t {t}: residual {resid} vs {out}");
        }
        let (skip, out) = s.output_scales(0, std);
        assert!(skip > 0.99 && out < 0.02);
    }

    #[test]
    fn clean_estimate_applies_scales() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let (skip, out) = s.output_scales(300, 0.2);
        let e = clean_estimate(&plane(&[1.0, -2.0]), &plane(&[0.5, 3.0]), 300, &s, Some(0.2)).unwrap();
        assert_eq!(e.as_slice(), &[skip * 0.5 + out, skip * 3.0 - 2.0 * out]);
        let direct = clean_estimate(&plane(&[1.0, -2.0]), &plane(&[0.5, 3.0]), 300, &s, None).unwrap();
        assert_eq!(direct.as_slice(), &[1.0, -2.0]);
        assert!(clean_estimate(&plane(&[1.0]), &plane(&[1.0, 2.0]), 0, &s, Some(0.2)).is_err());
    }

    #[test]
    fn tiny_schedules() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn default_schedule_terminal_product() {
        // 50-digit cumulative product of the same linear betas.
        let expected = 4.0358297653756833148e-5;
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let got = *s.alpha_bars().last().unwrap();
        assert!(((got - expected) / expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn schedule_rejects_bad_input() {
        assert!(make_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
    }

    #[test]
    fn schedule_invariants() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        for t in 0..s.len() {
            assert_eq!(s.alphas()[t], 1.0 - s.betas()[t]);
            assert!(s.alpha_bars()[t] > 0.0 && s.alpha_bars()[t] < 1.0);
            if t > 0 {
                assert_eq!(s.alpha_bars()[t], s.alpha_bars()[t - 1] * s.alphas()[t]);
                assert!(s.alpha_bars()[t] < s.alpha_bars()[t - 1]);
            }
        }
    }

    #[test]
    fn zero_noise_and_identity_diffusion() {
        let s = NoiseSchedule::default();
        let x0 = plane(&[0.3, -0.7, 1.0]);
        let out = q_sample(&x0, 400, &[0.0; 3], &s).unwrap();
        let a = s.alpha_bars()[400].sqrt();
        for (o, x) in out.data.as_slice().iter().zip(x0.as_slice()) {
            assert_eq!(*o, a * x);
        }
        let same = diffuse(&x0, &[0.4, 0.1, -2.0], 1.0).unwrap();
        assert_eq!(same, x0);
    }

    #[test]
    fn q_sample_rejects_shape_mismatch() {
        let s = NoiseSchedule::default();
        assert!(q_sample(&plane(&[0.0, 1.0]), 3, &[0.0], &s).is_err());
        assert!(q_sample(&plane(&[0.0]), 1000, &[0.0], &s).is_err());
    }

    #[test]
    fn step_to_virtual_returns_prediction() {
        let s = NoiseSchedule::default();
        let xt = LatentState { data: plane(&[0.5, 0.25]), t: Some(10) };
        let x0 = plane(&[0.1, -0.9]);
        let out = ddim_step(&xt, &x0, None, &s, 0.0, None).unwrap();
        assert_eq!(out.data, x0);
        assert_eq!(out.t, None);
    }

    #[test]
    fn zero_implied_noise_propagates() {
        let s = NoiseSchedule::default();
        let x0 = plane(&[0.6, -0.2, 0.0]);
        let a_t = s.alpha_bars()[700].sqrt();
        let xt = LatentState { data: x0.map(|v| a_t * v), t: Some(700) };
        let out = ddim_step(&xt, &x0, Some(300), &s, 0.0, None).unwrap();
        let a_p = s.alpha_bars()[300].sqrt();
        for (o, x) in out.data.as_slice().iter().zip(x0.as_slice()) {
            assert!((o - a_p * x).abs() < 1e-15);
        }
    }

    #[test]
    fn ddim_rejects_bad_order() {
        let s = NoiseSchedule::default();
        let xt = LatentState { data: plane(&[0.0]), t: Some(5) };
        assert!(ddim_step(&xt, &plane(&[0.0]), Some(5), &s, 0.0, None).is_err());
        assert!(ddim_step(&xt, &plane(&[0.0]), Some(9), &s, 0.0, None).is_err());
    }

    #[test]
    fn forward_reverse_consistency() {
        let s = NoiseSchedule::default();
        let x0 = ImagePlane::from_vec(4, 4, 2, seeded_gaussian(32, 1, 1)).unwrap();
        let eps = seeded_gaussian(32, 1, 2);
        let xt = q_sample(&x0, 812, &eps, &s).unwrap();
        let back = ddim_step(&xt, &x0, Some(123), &s, 0.0, None).unwrap();
        let direct = q_sample(&x0, 123, &eps, &s).unwrap();
        for (a, b) in back.data.as_slice().iter().zip(direct.data.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn stochastic_step_needs_noise() {
        let s = NoiseSchedule::default();
        let xt = LatentState { data: plane(&[0.0, 1.0]), t: Some(50) };
        let x0 = plane(&[0.1, 0.2]);
        assert!(ddim_step(&xt, &x0, Some(20), &s, 1.0, None).is_err());
        let a = ddim_step(&xt, &x0, Some(20), &s, 1.0, Some(&[0.3, -0.3])).unwrap();
        let b = ddim_step(&xt, &x0, Some(20), &s, 0.0, None).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn cfg_special_scales() {
        let c = plane(&[0.1, 0.7, -0.3]);
        let u = plane(&[0.4, -0.2, 0.9]);
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u);
        assert_eq!(cfg_combine(&c, &c, 6.0).unwrap(), c);
        let six = cfg_combine(&c, &u, 6.0).unwrap();
        assert!((six.as_slice()[0] - (0.4 + 6.0 * (0.1 - 0.4))).abs() < 1e-15);
        assert!(cfg_combine(&c, &plane(&[0.0]), 2.0).is_err());
    }

    #[test]
    fn timestep_subsequence() {
        assert_eq!(ddim_timesteps(1000, 1), vec![999]);
        assert_eq!(ddim_timesteps(1000, 2), vec![999, 499]);
        let all = ddim_timesteps(10, 10);
        assert_eq!(all, (0..10).rev().collect::<Vec<_>>());
        let two_hundred = ddim_timesteps(1000, 200);
        assert_eq!(two_hundred.len(), 200);
        assert_eq!(two_hundred[0], 999);
        assert_eq!(*two_hundred.last().unwrap(), 4);
    }
}
