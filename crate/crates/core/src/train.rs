//! Training loop shared by the motion and content models.
//!
//! Every random choice of step `s`, batch slot `b` comes from a stream
//! keyed by `(seed, s, b)` and batches come from per-epoch shuffles keyed
//! by the epoch number, so a run resumed from a checkpoint at step `k`
//! continues exactly like the uninterrupted run.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::Sample;
use crate::diffusion::{clean_estimate, q_sample, NoiseSchedule};
use crate::image::{ImagePlane, MaskPlane};
use crate::nn::{adam_step, backward, forward, AdamState, DenoiserInput, DenoiserParams};
use crate::rng::{stream_id, stream_rng, tag, GaussianStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing the conditioning with the null token.
    pub cond_drop: f64,
    pub seed: u64,
    /// Feed the stitched mask to the network; `false` always passes an
    /// all-zero mask plane.
    pub use_mask: bool,
    /// Anneal the learning rate along a half cosine from `lr` at step 0
    /// to zero at `steps`.
    pub cosine_decay: bool,
    /// Decay of an exponential moving average of the weights; 0 keeps no
    /// average.
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 8,
            lr: 2e-4,
            cond_drop: 0.1,
            seed: 0,
            use_mask: true,
            cosine_decay: false,
            ema_decay: 0.0,
        }
    }
}

impl TrainConfig {
    /// Learning rate of the update made at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if !self.cosine_decay || self.steps == 0 {
            return self.lr;
        }
        let frac = (step as f64 / self.steps as f64).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return Err(Error::Config(format!("cond_drop must lie in [0, 1], got {}", self.cond_drop)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema decay must lie in [0, 1), got {}", self.ema_decay)));
        }
        Ok(())
    }

    /// Averaging weight at `step`. Early steps use a shorter horizon so the
    /// average is not dominated by the initialisation.
    pub fn ema_at(&self, step: usize) -> f64 {
        self.ema_decay.min((1 + step) as f64 / (10 + step) as f64)
    }
}

/// One row of the loss curve. Content training fills `l_mse` and
/// `l_total` with the same value and leaves the photometric columns at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub l_mse: f64,
    pub l_pl: f64,
    pub weight: f64,
    pub l_total: f64,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        self.l_mse.is_finite() && self.l_pl.is_finite() && self.weight.is_finite() && self.l_total.is_finite()
    }
}

pub const HISTORY_HEADER: &str = "step,l_mse,l_pl,weight,l_total";

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&format!("{},{:.9e},{:.9e},{:.9e},{:.9e}\n", r.step, r.l_mse, r.l_pl, r.weight, r.l_total));
    }
    s
}

pub fn parse_history_csv(text: &str) -> Result<Vec<LossRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::Checkpoint(format!("history line {}: '{line}'", i + 1));
        if cols.len() != 5 {
            return Err(bad());
        }
        let f = |k: usize| cols[k].trim().parse::<f64>().map_err(|_| bad());
        out.push(LossRecord {
            step: cols[0].trim().parse().map_err(|_| bad())?,
            l_mse: f(1)?,
            l_pl: f(2)?,
            weight: f(3)?,
            l_total: f(4)?,
        });
    }
    Ok(out)
}

/// Everything a run needs to continue: parameters, their running average,
/// optimizer moments, the number of completed steps and the loss curve so
/// far.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub ema: Option<DenoiserParams>,
    pub adam: AdamState,
    pub step: usize,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(params: DenoiserParams, lr: f64) -> Self {
        let n = params.count();
        Self { params, ema: None, adam: AdamState::new(n, lr), step: 0, history: Vec::new() }
    }
}

/// What a model learns from a sample.
pub trait Objective {
    /// Clean target in diffusion space.
    fn clean(&self, sample: &Sample) -> Result<ImagePlane>;

    /// Loss over one batch and its gradient with respect to every
    /// prediction.
    fn batch_loss(
        &self,
        samples: &[&Sample],
        preds: &[ImagePlane],
        clean: &[ImagePlane],
    ) -> Result<(LossRecord, Vec<ImagePlane>)>;

    /// Standard deviation of the clean target when the network predicts
    /// the residual of a noise-aware skip; `None` when it predicts the
    /// target directly.
    fn skip_std(&self) -> Option<f64>;

    /// Factor on the parameter gradient of a slot drawn at step `t`. The
    /// recorded loss is unaffected. With a skip, `(std / c_out)²` gives
    /// every noise level the same error scale on the raw network output;
    /// without it the high-noise steps dominate and the network never
    /// learns to denoise.
    fn timestep_weight(&self, sched: &NoiseSchedule, t: usize) -> f64 {
        match self.skip_std() {
            Some(std) => (std / sched.output_scales(t, std).1).powi(2),
            None => 1.0,
        }
    }
}

/// Random choices for one batch slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDraw {
    pub index: usize,
    pub t: usize,
    pub eps: Vec<f64>,
    pub dropped: bool,
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, stream_id(tag::TRAIN_SHUFFLE, epoch, 0)));
    idx
}

/// Sample indices used at `step`.
pub fn batch_indices(cfg: &TrainConfig, n: usize, step: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(cfg.batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for b in 0..cfg.batch_size {
        let g = (step * cfg.batch_size + b) as u64;
        let epoch = g / n as u64;
        let pos = (g % n as u64) as usize;
        if cached.as_ref().map_or(true, |(e, _)| *e != epoch) {
            cached = Some((epoch, epoch_order(cfg.seed, epoch, n)));
        }
        out.push(cached.as_ref().unwrap().1[pos]);
    }
    out
}

pub fn draw_slot(cfg: &TrainConfig, sched: &NoiseSchedule, index: usize, len: usize, step: usize, slot: usize) -> SlotDraw {
    let (s, b) = (step as u64, slot as u64);
    let t = stream_rng(cfg.seed, stream_id(tag::TRAIN_TIMESTEP, s, b)).gen_range(0..sched.len());
    let mut eps = vec![0.0; len];
    GaussianStream::new(cfg.seed, stream_id(tag::TRAIN_NOISE, s, b)).fill(&mut eps);
    let dropped = cfg.cond_drop > 0.0
        && stream_rng(cfg.seed, stream_id(tag::TRAIN_DROPOUT, s, b)).gen::<f64>() < cfg.cond_drop;
    SlotDraw { index, t, eps, dropped }
}

/// Conditioning planes fed to the network for one sample.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub image: ImagePlane,
    pub mask: MaskPlane,
}

impl Conditioning {
    /// Stitched image in diffusion range plus its mask (zeroed when the
    /// mask is disabled).
    pub fn new(sample: &Sample, use_mask: bool) -> Self {
        Self::from_planes(&sample.stitched, &sample.mask, use_mask)
    }

    pub fn from_planes(stitched: &ImagePlane, mask: &MaskPlane, use_mask: bool) -> Self {
        let (h, w) = mask.dims();
        Self {
            image: stitched.to_diffusion(),
            mask: if use_mask { mask.clone() } else { MaskPlane::zeros(h, w) },
        }
    }
}

/// Derivative of the clean estimate with respect to the raw output.
fn output_gain(sched: &NoiseSchedule, t: usize, skip_std: Option<f64>) -> f64 {
    skip_std.map_or(1.0, |std| sched.output_scales(t, std).1)
}

/// Runs `steps` more optimisation steps on `state`.
pub fn train_steps(
    state: &mut TrainState,
    samples: &[Sample],
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    objective: &dyn Objective,
    steps: usize,
) -> Result<()> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if steps == 0 {
        return Ok(());
    }
    let conds: Vec<Conditioning> = samples.iter().map(|s| Conditioning::new(s, cfg.use_mask)).collect();
    let cleans: Vec<ImagePlane> = samples.iter().map(|s| objective.clean(s)).collect::<Result<_>>()?;

    for _ in 0..steps {
        let step = state.step;
        let indices = batch_indices(cfg, samples.len(), step);
        let mut preds = Vec::with_capacity(indices.len());
        let mut caches = Vec::with_capacity(indices.len());
        let mut grad_scales = Vec::with_capacity(indices.len());
        for (slot, &i) in indices.iter().enumerate() {
            let draw = draw_slot(cfg, sched, i, cleans[i].len(), step, slot);
            let noisy = q_sample(&cleans[i], draw.t, &draw.eps, sched)?;
            let input = DenoiserInput {
                noisy: &noisy.data,
                cond_image: &conds[i].image,
                cond_mask: &conds[i].mask,
                t: draw.t,
                cond_dropped: draw.dropped,
            };
            let (raw, cache) = forward(&state.params, &input)?;
            preds.push(clean_estimate(&raw, &noisy.data, draw.t, sched, objective.skip_std())?);
            grad_scales.push(output_gain(sched, draw.t, objective.skip_std()) * objective.timestep_weight(sched, draw.t));
            caches.push(cache);
        }
        let batch: Vec<&Sample> = indices.iter().map(|&i| &samples[i]).collect();
        let clean: Vec<ImagePlane> = indices.iter().map(|&i| cleans[i].clone()).collect();
        let (mut record, grads_pred) = objective.batch_loss(&batch, &preds, &clean)?;
        record.step = step;
        state.step += 1;
        if !record.is_finite() {
            log::warn!("step {step}: non-finite loss, update skipped");
            continue;
        }
        let mut grad = vec![0.0; state.params.count()];
        for ((cache, g), scale) in caches.iter().zip(&grads_pred).zip(&grad_scales) {
            for (a, b) in grad.iter_mut().zip(backward(&state.params, cache, g)?) {
                *a += scale * b;
            }
        }
        state.adam.lr = cfg.lr_at(step);
        match adam_step(&mut state.params, &grad, &mut state.adam) {
            Ok(()) => {
                if cfg.ema_decay > 0.0 {
                    let d = cfg.ema_at(step);
                    let ema = state.ema.get_or_insert_with(|| state.params.clone());
                    for (e, p) in ema.values_mut().iter_mut().zip(state.params.values()) {
                        *e = d * *e + (1.0 - d) * p;
                    }
                }
                state.history.push(record)
            }
            Err(Error::NonFinite(_)) => log::warn!("step {step}: non-finite gradient, update skipped"),
            Err(e) => return Err(e),
        }
        if step % 100 == 0 {
            log::debug!("step {step}: loss {:.6}", record.l_total);
        }
    }
    Ok(())
}

/// Mean `l_total` over the first and last `window` records.
pub fn curve_ends(history: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    if history.len() < window || window == 0 {
        return None;
    }
    let mean = |rs: &[LossRecord]| rs.iter().map(|r| r.l_total).sum::<f64>() / rs.len() as f64;
    Some((mean(&history[..window]), mean(&history[history.len() - window..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;

    #[test]
    fn batches_cover_each_epoch_once() {
        let cfg = TrainConfig { batch_size: 3, ..Default::default() };
        let mut seen: Vec<usize> = (0..4).flat_map(|s| batch_indices(&cfg, 12, s)).collect();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        assert_eq!(batch_indices(&cfg, 12, 7), batch_indices(&cfg, 12, 7));
    }

    #[test]
    fn cosine_decay_runs_from_lr_to_zero() {
        let flat = TrainConfig { lr: 1e-3, steps: 100, ..Default::default() };
        assert_eq!(flat.lr_at(70), 1e-3);
        let cos = TrainConfig { cosine_decay: true, ..flat };
        assert_eq!(cos.lr_at(0), 1e-3);
        assert!((cos.lr_at(50) - 5e-4).abs() < 1e-15);
        assert!(cos.lr_at(100).abs() < 1e-15);
        assert!(cos.lr_at(30) > cos.lr_at(31));
    }

    #[test]
    fn ema_horizon_warms_up() {
        let cfg = TrainConfig { ema_decay: 0.999, ..Default::default() };
        assert_eq!(cfg.ema_at(0), 0.1);
        assert_eq!(cfg.ema_at(1_000_000), 0.999);
        assert!(TrainConfig { ema_decay: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn slot_draws_are_keyed() {
        let cfg = TrainConfig::default();
        let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
        let a = draw_slot(&cfg, &sched, 0, 16, 5, 1);
        assert_eq!(a, draw_slot(&cfg, &sched, 0, 16, 5, 1));
        assert_ne!(a.eps, draw_slot(&cfg, &sched, 0, 16, 5, 2).eps);
        let drops = (0..2000).filter(|&s| draw_slot(&cfg, &sched, 0, 1, s, 0).dropped).count();
        assert!((150..250).contains(&drops), "{drops}");
    }

    #[test]
    fn history_round_trip() {
        let h = vec![LossRecord { step: 3, l_mse: 0.25, l_pl: 0.5, weight: 0.5, l_total: 0.5 }];
        assert_eq!(parse_history_csv(&history_csv(&h)).unwrap(), h);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
