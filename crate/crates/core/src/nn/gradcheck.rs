//! Central finite-difference verification of [`backward`].

use rand::Rng;

use super::denoiser::{backward, forward, predict, DenoiserInput, DenoiserParams};
use crate::image::ImagePlane;
use crate::rng::{seeded_gaussian, stream_id, stream_rng, tag};
use crate::Result;

const STEP: f64 = 1e-5;
/// Relative errors are measured against at least this magnitude so that
/// parameters with a vanishing gradient do not divide by zero.
const FLOOR: f64 = 1e-7;

fn loss(pred: &ImagePlane, target: &[f64]) -> f64 {
    0.5 * pred
        .as_slice()
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / target.len() as f64
}

/// Compares the analytic gradient of a mean squared-error loss against a
/// fixed random target with central differences on `probe_count` randomly
/// chosen parameters. Returns the largest relative error.
pub fn grad_check(params: &DenoiserParams, input: &DenoiserInput, probe_count: usize, seed: u64) -> Result<f64> {
    if probe_count == 0 {
        return Ok(0.0);
    }
    let (pred, cache) = forward(params, input)?;
    let target = seeded_gaussian(pred.len(), seed, stream_id(tag::GRADCHECK, 0, 0));
    let n = pred.len() as f64;
    let grad_pred = ImagePlane::from_vec(
        pred.height(),
        pred.width(),
        pred.channels(),
        pred.as_slice().iter().zip(&target).map(|(p, t)| (p - t) / n).collect(),
    )?;
    let analytic = backward(params, &cache, &grad_pred)?;

    let mut rng = stream_rng(seed, stream_id(tag::GRADCHECK, 1, 0));
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for _ in 0..probe_count {
        let i = rng.gen_range(0..params.count());
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + STEP;
        let up = loss(&predict(&probe, input)?, &target);
        probe.values_mut()[i] = orig - STEP;
        let down = loss(&predict(&probe, input)?, &target);
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
