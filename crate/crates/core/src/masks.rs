//! Component masks and the confidence mask that decides which pixels of
//! the coarse rectangled image are kept during content sampling.

use crate::image::{MaskPlane, MotionField};
use crate::warp::WarpResult;
use crate::{Error, Result};

/// Defaults used when building confidence masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    /// Validity below this marks a white-edge pixel.
    pub tau_valid: f64,
    /// Constant weight pulling every pixel's confidence down.
    pub omega0: f64,
    /// Use the stitched mask warped into the rectangled frame (default) or
    /// the raw stitched mask.
    pub warp_stitched_mask: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            tau_valid: 0.999,
            omega0: 1.0,
            warp_stitched_mask: true,
        }
    }
}

/// Displacement magnitude per pixel divided by `norm_len`, clamped to
/// `[0, 1]`.
pub fn intensity_map(field: &MotionField, norm_len: f64) -> Result<MaskPlane> {
    if !(norm_len > 0.0) {
        return Err(Error::Config(format!("norm_len must be positive, got {norm_len}")));
    }
    let (h, w) = field.dims();
    Ok(MaskPlane::from_fn(h, w, |y, x| {
        let (dx, dy) = field.get(y, x);
        dx.hypot(dy) / norm_len
    }))
}

/// Image diagonal in pixels, the default `norm_len`.
pub fn diagonal(h: usize, w: usize) -> f64 {
    (h as f64).hypot(w as f64)
}

/// Hard mask: 1 where the warp's validity is below `tau_valid`.
pub fn white_edge_mask(warp: &WarpResult, tau_valid: f64) -> Result<MaskPlane> {
    if !(tau_valid > 0.0 && tau_valid < 1.0) {
        return Err(Error::Config(format!("tau_valid must lie in (0, 1), got {tau_valid}")));
    }
    let v = &warp.validity;
    Ok(MaskPlane::from_fn(v.height(), v.width(), |y, x| {
        if v.get(y, x) < tau_valid {
            1.0
        } else {
            0.0
        }
    }))
}

/// `1 − max{M1, (ω0 + M0 + Ms) / (ω0 + 2)}` per pixel, clamped to `[0, 1]`.
pub fn confidence_mask(m1: &MaskPlane, m0: &MaskPlane, ms: &MaskPlane, omega0: f64) -> Result<MaskPlane> {
    if m1.dims() != m0.dims() || m1.dims() != ms.dims() {
        return Err(Error::Shape("confidence mask inputs differ in size".into()));
    }
    if !(omega0 >= 0.0) {
        return Err(Error::Config(format!("omega0 must be >= 0, got {omega0}")));
    }
    let (h, w) = m1.dims();
    let denom = omega0 + 2.0;
    Ok(MaskPlane::from_fn(h, w, |y, x| {
        let avg = (omega0 + m0.get(y, x) + ms.get(y, x)) / denom;
        1.0 - m1.get(y, x).max(avg)
    }))
}

/// The spatially uniform mask a perfectly valid, undisplaced pixel would
/// receive: `1 − (ω0 + 1) / (ω0 + 2)`. Used as the fixed-mask baseline.
pub fn uniform_confidence(h: usize, w: usize, omega0: f64) -> MaskPlane {
    MaskPlane::filled(h, w, 1.0 - (omega0 + 1.0) / (omega0 + 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImagePlane;
    use crate::warp::{backward_warp, WHITE};

    #[test]
    fn intensity_examples() {
        let z = intensity_map(&MotionField::zeros(3, 4), 5.0).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        let half = intensity_map(&MotionField::constant(3, 4, 3.0, 4.0), 10.0).unwrap();
        assert!(half.as_slice().iter().all(|&v| v == 0.5));
        assert!(intensity_map(&MotionField::zeros(1, 1), 0.0).is_err());
    }

    #[test]
    fn white_edges_from_shift() {
        let src = ImagePlane::filled(4, 6, 3, 0.3);
        let id = backward_warp(&src, &MotionField::zeros(4, 6), &[WHITE; 3], None).unwrap();
        assert!(white_edge_mask(&id, 0.999).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let sh = backward_warp(&src, &MotionField::constant(4, 6, -1.5, 0.0), &[WHITE; 3], None).unwrap();
        let m = white_edge_mask(&sh, 0.999).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(m.get(y, x), if x < 2 { 1.0 } else { 0.0 }, "({y},{x})");
            }
        }
    }

    #[test]
    fn confidence_examples() {
        let ones = MaskPlane::ones(2, 2);
        let zeros = MaskPlane::zeros(2, 2);
        let c = confidence_mask(&ones, &zeros, &zeros, 1.0).unwrap();
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
        let c = confidence_mask(&zeros, &zeros, &zeros, 1.0).unwrap();
        assert!(c.as_slice().iter().all(|&v| (v - 2.0 / 3.0).abs() < 1e-15));
        let u = uniform_confidence(2, 2, 1.0);
        let full = confidence_mask(&zeros, &zeros, &ones, 1.0).unwrap();
        for (a, b) in u.as_slice().iter().zip(full.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_omega_kills_confidence() {
        let zeros = MaskPlane::zeros(3, 3);
        let c = confidence_mask(&zeros, &zeros, &zeros, 1e6).unwrap();
        assert!(c.as_slice().iter().all(|&v| v.abs() < 1e-5));
    }
}
