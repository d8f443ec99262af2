use proptest::prelude::*;

use rectangling_core::cdm::rnt_decompose;
use rectangling_core::diffusion::{cfg_combine, ddim_step, ddim_timesteps, make_schedule, q_sample};
use rectangling_core::image::{ImagePlane, MaskPlane, MotionField};
use rectangling_core::masks::confidence_mask;
use rectangling_core::rng::seeded_gaussian;
use rectangling_core::warp::{backward_warp, WHITE};

fn plane(h: usize, w: usize, c: usize, seed: u64, stream: u64) -> ImagePlane {
    ImagePlane::from_vec(h, w, c, seeded_gaussian(h * w * c, seed, stream)).unwrap()
}

fn unit_mask(h: usize, w: usize, seed: u64, stream: u64) -> MaskPlane {
    let v = seeded_gaussian(h * w, seed, stream);
    MaskPlane::from_vec(h, w, v.iter().map(|x| 0.5 + 0.5 * x.tanh()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ddim_reverses_forward_diffusion(seed in any::<u64>(), t in 1usize..1000, frac in 0.0f64..1.0) {
        let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
        let x0 = plane(3, 4, 2, seed, 0);
        let eps = seeded_gaussian(x0.len(), seed, 1);
        let t_prev = ((t as f64 * frac) as usize).min(t - 1);
        let xt = q_sample(&x0, t, &eps, &sched).unwrap();
        let back = ddim_step(&xt, &x0, Some(t_prev), &sched, 0.0, None).unwrap();
        let direct = q_sample(&x0, t_prev, &eps, &sched).unwrap();
        for (a, b) in back.data.as_slice().iter().zip(direct.data.as_slice()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn guidance_is_affine_in_scale(seed in any::<u64>(), s1 in 0.0f64..10.0, s2 in 0.0f64..10.0) {
        let a = plane(2, 3, 3, seed, 0);
        let b = plane(2, 3, 3, seed, 1);
        let l = cfg_combine(&a, &b, s1).unwrap();
        let r = cfg_combine(&a, &b, s2).unwrap();
        let m = cfg_combine(&a, &b, 0.5 * (s1 + s2)).unwrap();
        for i in 0..a.len() {
            let lhs = l.as_slice()[i] + r.as_slice()[i];
            prop_assert!((lhs - 2.0 * m.as_slice()[i]).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn field_normalisation_round_trips(seed in any::<u64>(), max_disp in 0.5f64..20.0) {
        let f = MotionField::from_vec(4, 5, seeded_gaussian(40, seed, 0).iter().map(|v| v * max_disp).collect()).unwrap();
        let back = MotionField::denormalize(&f.normalize(max_disp), max_disp).unwrap();
        for (a, b) in f.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn decomposition_sums_to_input(seed in any::<u64>()) {
        let r = plane(5, 4, 3, seed, 0);
        let m = unit_mask(5, 4, seed, 1);
        let (a, b) = rnt_decompose(&r, &m).unwrap();
        for i in 0..r.len() {
            prop_assert!((a.as_slice()[i] + b.as_slice()[i] - r.as_slice()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn confidence_bounds_and_monotonicity(seed in any::<u64>(), omega0 in 0.0f64..5.0, bump in 0.0f64..0.5) {
        let (h, w) = (4, 6);
        let m1 = MaskPlane::from_fn(h, w, |y, x| if (seed >> ((y * w + x) % 64)) & 1 == 1 { 1.0 } else { 0.0 });
        let m0 = unit_mask(h, w, seed, 1);
        let ms = unit_mask(h, w, seed, 2);
        let c = confidence_mask(&m1, &m0, &ms, omega0).unwrap();
        let hi = 1.0 - omega0 / (omega0 + 2.0);
        for y in 0..h {
            for x in 0..w {
                let v = c.get(y, x);
                if m1.get(y, x) == 1.0 {
                    prop_assert_eq!(v, 0.0);
                } else {
                    prop_assert!((0.0..=hi + 1e-15).contains(&v));
                }
            }
        }
        let raise = |m: &MaskPlane| MaskPlane::from_fn(h, w, |y, x| m.get(y, x) + bump);
        for c2 in [
            confidence_mask(&m1, &raise(&m0), &ms, omega0).unwrap(),
            confidence_mask(&m1, &m0, &raise(&ms), omega0).unwrap(),
            confidence_mask(&raise(&m1), &m0, &ms, omega0).unwrap(),
        ] {
            for (a, b) in c2.as_slice().iter().zip(c.as_slice()) {
                prop_assert!(*a <= *b + 1e-15);
            }
        }
    }

    #[test]
    fn white_fill_warp_stays_in_unit_range(seed in any::<u64>(), amp in 0.0f64..8.0) {
        let src = ImagePlane::from_vec(5, 7, 3, seeded_gaussian(105, seed, 0).iter().map(|v| 0.5 + 0.5 * v.tanh()).collect()).unwrap();
        let f = MotionField::from_vec(5, 7, seeded_gaussian(70, seed, 1).iter().map(|v| v * amp).collect()).unwrap();
        let r = backward_warp(&src, &f, &[WHITE; 3], None).unwrap();
        prop_assert!(r.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(r.validity.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn timestep_subsequence_is_descending(n in 1usize..=1000) {
        let ts = ddim_timesteps(1000, n);
        prop_assert_eq!(ts.len(), n);
        prop_assert_eq!(ts[0], 999);
        prop_assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }
}
