//! Sampling-loop exactness, loss gradients and small training oracles.

use rectangling_core::cdm::{rnt_decompose, sample_unconstrained, weighted_sample, CdmObjective, ContentOptions};
use rectangling_core::dataset::Sample;
use rectangling_core::diffusion::{clean_estimate, make_schedule, q_sample, NoiseSchedule, SamplerConfig};
use rectangling_core::image::{ImagePlane, MaskPlane, MotionField};
use rectangling_core::mdm::{rectangle_coarse, sample_motion, MdmObjective, MotionOptions};
use rectangling_core::metrics::psnr;
use rectangling_core::nn::{backward, forward, predict, DenoiserInput, DenoiserParams, Layout};
use rectangling_core::rng::seeded_gaussian;
use rectangling_core::synth::{generate, generate_sample, Split, SynthConfig};
use rectangling_core::train::{train_steps, Objective, TrainConfig, TrainState};

fn sched() -> NoiseSchedule {
    make_schedule(1000, 1e-4, 0.02).unwrap()
}

fn random_params(layout: Layout, seed: u64, scale: f64) -> DenoiserParams {
    let n = layout.param_count();
    DenoiserParams::from_values(layout, seeded_gaussian(n, seed, 0).into_iter().map(|v| v * scale).collect()).unwrap()
}

fn toy_sample(h: usize, w: usize, seed: u64) -> Sample {
    let max_disp = (0.1 * ((h * h + w * w) as f64).sqrt()).min(3.0);
    let cfg = SynthConfig { height: h, width: w, max_disp, seed, ..Default::default() };
    generate_sample(&cfg, Split::Train, 0).unwrap()
}

fn sampler(steps: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { num_steps: steps, cfg_scale: 1.0, eta: 0.0, seed }
}

#[test]
fn decomposition_reconstructs_under_soft_masks() {
    let r = ImagePlane::from_vec(6, 5, 3, seeded_gaussian(90, 1, 0)).unwrap();
    let m = MaskPlane::from_vec(6, 5, seeded_gaussian(30, 1, 1).iter().map(|v| v.abs().min(1.0)).collect()).unwrap();
    let (a, b) = rnt_decompose(&r, &m).unwrap();
    for i in 0..r.len() {
        let s = a.as_slice()[i] + b.as_slice()[i];
        assert!((s - r.as_slice()[i]).abs() <= 4.0 * f64::EPSILON * r.as_slice()[i].abs().max(1.0));
    }
}

#[test]
fn fusion_exactness_with_random_content_model() {
    let s = toy_sample(16, 16, 2);
    let params = random_params(Layout::unet(3, [4, 6, 8], 8, true).unwrap(), 5, 0.2);
    let sched = sched();
    let sc = sampler(20, 9);
    let opts = ContentOptions::default();
    let coarse = s.target.clone();

    let full = weighted_sample(&params, &sched, &coarse, &MaskPlane::ones(16, 16), &s.stitched, &s.mask, &sc, &opts).unwrap();
    assert_eq!(full, coarse);

    let none = weighted_sample(&params, &sched, &coarse, &MaskPlane::zeros(16, 16), &s.stitched, &s.mask, &sc, &opts).unwrap();
    let free = sample_unconstrained(&params, &sched, &s.stitched, &s.mask, &sc, &opts).unwrap();
    assert_eq!(none, free);

    let soft = MaskPlane::from_fn(16, 16, |y, x| match (x + y) % 3 {
        0 => 1.0,
        1 => 0.0,
        _ => 0.37,
    });
    for stochastic in [false, true] {
        let opts = ContentOptions { stochastic_fusion: stochastic, ..opts };
        let out = weighted_sample(&params, &sched, &coarse, &soft, &s.stitched, &s.mask, &sc, &opts).unwrap();
        assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        for y in 0..16 {
            for x in 0..16 {
                if soft.get(y, x) == 1.0 {
                    assert_eq!(out.pixel(y, x), coarse.pixel(y, x));
                }
            }
        }
        let again = weighted_sample(&params, &sched, &coarse, &soft, &s.stitched, &s.mask, &sc, &opts).unwrap();
        assert_eq!(out, again);
    }
}

#[test]
fn single_step_motion_sampling_is_one_prediction() {
    let s = toy_sample(16, 16, 3);
    let params = random_params(Layout::unet(2, [4, 6, 8], 8, true).unwrap(), 6, 0.2);
    let sched = sched();
    let opts = MotionOptions { max_disp: 3.0, use_mask: true };
    let f = sample_motion(&params, &sched, &s.stitched, &s.mask, &sampler(1, 4), &opts).unwrap();
    let noise = ImagePlane::from_vec(
        16,
        16,
        2,
        seeded_gaussian(512, 4, rectangling_core::rng::stream_id(rectangling_core::rng::tag::SAMPLE_NOISE, 0, 0)),
    )
    .unwrap();
    let cond = s.stitched.to_diffusion();
    let raw = predict(
        &params,
        &DenoiserInput { noisy: &noise, cond_image: &cond, cond_mask: &s.mask, t: 999, cond_dropped: false },
    )
    .unwrap();
    assert_eq!(f, MotionField::denormalize(&raw, 3.0).unwrap());
    let g = sample_motion(&params, &sched, &s.stitched, &s.mask, &sampler(2, 4), &opts).unwrap();
    assert_eq!(g, sample_motion(&params, &sched, &s.stitched, &s.mask, &sampler(2, 4), &opts).unwrap());
}

/// The balancing weight is a constant: the gradient of the motion loss
/// must equal the finite-difference gradient of `l_mse + w·l_pl` with `w`
/// frozen at its current value.
#[test]
fn motion_loss_gradient_treats_weight_as_constant() {
    let s = toy_sample(8, 8, 4);
    let obj = MdmObjective { max_disp: 3.0 };
    let params = random_params(Layout::single_conv(2, 3, true).unwrap(), 7, 0.3);
    let clean = obj.clean(&s).unwrap();
    let noisy = ImagePlane::from_vec(8, 8, 2, seeded_gaussian(128, 8, 0)).unwrap();
    let cond = s.stitched.to_diffusion();
    let input = DenoiserInput { noisy: &noisy, cond_image: &cond, cond_mask: &s.mask, t: 200, cond_dropped: false };
    let (pred, cache) = forward(&params, &input).unwrap();
    let (rec, gp) = obj.batch_loss(&[&s], &[pred], &[clean.clone()]).unwrap();
    assert!(rec.weight > 0.0);
    let analytic = backward(&params, &cache, &gp[0]).unwrap();
    let frozen = |p: &DenoiserParams| {
        let pr = predict(p, &input).unwrap();
        let (r, _) = obj.batch_loss(&[&s], &[pr], &[clean.clone()]).unwrap();
        r.l_mse + rec.weight * r.l_pl
    };
    let mut probe = params.clone();
    let h = 1e-6;
    let mut checked = 0;
    for i in (0..params.count()).step_by(7) {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = frozen(&probe);
        probe.values_mut()[i] = orig - h;
        let down = frozen(&probe);
        probe.values_mut()[i] = orig;
        let num = (up - down) / (2.0 * h);
        let rel = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-6);
        assert!(rel < 1e-3, "param {i}: numeric {num:e} analytic {:e}", analytic[i]);
        checked += 1;
    }
    assert!(checked > 10);
}

/// Mean loss over 50 fixed (t, noise) draws spread across the schedule.
fn probe_loss(params: &DenoiserParams, s: &Sample, obj: &dyn Objective) -> f64 {
    let sched = sched();
    let clean = obj.clean(s).unwrap();
    let cond = s.stitched.to_diffusion();
    let mut total = 0.0;
    for k in 0..50u64 {
        let t = 10 + 20 * k as usize;
        let noisy = q_sample(&clean, t, &seeded_gaussian(clean.len(), 99, k), &sched).unwrap();
        let input = DenoiserInput { noisy: &noisy.data, cond_image: &cond, cond_mask: &s.mask, t, cond_dropped: false };
        let pred = clean_estimate(&predict(params, &input).unwrap(), &noisy.data, t, &sched, obj.skip_std()).unwrap();
        total += obj.batch_loss(&[s], &[pred], &[clean.clone()]).unwrap().0.l_total / 50.0;
    }
    total
}

fn overfit(obj: &dyn Objective, channels: usize, lr: f64) -> (f64, f64) {
    let s = toy_sample(24, 32, 11);
    let layout = Layout::unet(channels, [16, 32, 64], 32, true).unwrap();
    let cfg = TrainConfig { steps: 2000, batch_size: 1, lr, cond_drop: 0.0, seed: 3, use_mask: true, cosine_decay: false, ema_decay: 0.0 };
    let mut st = TrainState::new(DenoiserParams::init(layout, 1), lr);
    let initial = probe_loss(&st.params, &s, obj);
    train_steps(&mut st, std::slice::from_ref(&s), &cfg, &sched(), obj, 2000).unwrap();
    (initial, probe_loss(&st.params, &s, obj))
}

#[test]
fn motion_model_overfits_one_sample() {
    let (initial, last) = overfit(&MdmObjective { max_disp: 3.0 }, 2, 5e-4);
    assert!(last < 0.05 * initial, "initial {initial:e}, final {last:e}");
}

#[test]
fn content_model_overfits_one_sample() {
    let (initial, last) = overfit(&CdmObjective, 3, 1e-3);
    assert!(last < 0.05 * initial, "initial {initial:e}, final {last:e}");
}

#[test]
fn zero_steps_leave_initialisation() {
    let s = toy_sample(8, 8, 1);
    let p = DenoiserParams::init(Layout::unet(3, [4, 4, 4], 8, true).unwrap(), 2);
    let mut st = TrainState::new(p.clone(), 1e-3);
    train_steps(&mut st, &[s], &TrainConfig::default(), &sched(), &CdmObjective, 0).unwrap();
    assert_eq!(st.params.values(), p.values());
    assert!(st.history.is_empty());
}

#[test]
fn identity_motion_dataset_gives_small_fields() {
    let mut samples = generate(&SynthConfig { height: 16, width: 16, max_disp: 1.5, ..Default::default() }, Split::Train, 8).unwrap();
    for s in &mut samples {
        s.stitched = s.target.clone();
        s.mask = MaskPlane::ones(16, 16);
        s.field = Some(MotionField::zeros(16, 16));
    }
    let obj = MdmObjective { max_disp: 3.0 };
    let cfg = TrainConfig { steps: 300, batch_size: 4, lr: 1e-3, seed: 1, ..Default::default() };
    let mut st = TrainState::new(DenoiserParams::init(Layout::unet(2, [8, 8, 8], 8, true).unwrap(), 1), cfg.lr);
    train_steps(&mut st, &samples, &cfg, &sched(), &obj, cfg.steps).unwrap();
    let sc = SamplerConfig { num_steps: 2, cfg_scale: 6.0, eta: 0.0, seed: 5 };
    for s in &samples {
        let f = sample_motion(&st.params, &sched(), &s.stitched, &s.mask, &sc, &MotionOptions { max_disp: 3.0, use_mask: true }).unwrap();
        assert!(f.mean_magnitude() < 0.5, "mean magnitude {}", f.mean_magnitude());
    }
}

#[test]
fn ground_truth_motion_improves_every_sample() {
    let cfg = SynthConfig::default();
    for s in generate(&cfg, Split::Eval, 20).unwrap() {
        let coarse = rectangle_coarse(&s.stitched, &s.mask, s.field.as_ref().unwrap()).unwrap().image;
        assert!(coarse.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        let p = psnr(&coarse, &s.target).unwrap();
        let q = psnr(&s.stitched, &s.target).unwrap();
        assert!(p > q, "{}: coarse {p:.2} dB, stitched {q:.2} dB", s.name);
    }
}
