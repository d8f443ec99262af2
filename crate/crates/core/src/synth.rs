//! Synthetic stitched/rectangled pairs with exact ground-truth motion.
//!
//! A procedural rectangular image `I_R` is degraded by a smooth
//! displacement field `G` (backward warp with white fill), producing a
//! stitched-looking image `I_S` with irregular white margins and its
//! binary mask `M_S`. The rectifying field `F` is the numerical inverse of
//! `G`, found per pixel by fixed-point iteration `F(q) = −G(q + F(q))`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::image::{ImagePlane, MaskPlane, MotionField};
use crate::metrics::psnr;
use crate::rng::{stream_id, stream_rng, tag};
use crate::warp::{backward_warp, WHITE};
use crate::{Error, Result};

/// Columns and rows of the coarse displacement grid.
pub const GRID_COLS: usize = 4;
pub const GRID_ROWS: usize = 3;
/// Per-component node magnitude as a fraction of `max_disp`.
const NODE_SCALE: f64 = 0.6;
const MAX_INVERSION_ITERS: usize = 50;
const INVERSION_TOL: f64 = 1e-3;
const MIN_INVERSION_PSNR: f64 = 30.0;
const MAX_ATTEMPTS: u64 = 64;
/// Brightest content value; only the margins are pure white.
const CONTENT_MAX: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldFamily {
    /// Every grid node is an independent random vector.
    SmoothRandom,
    /// Border nodes push their normal component outwards so content
    /// contracts away from the frame; interior nodes stay at rest.
    BoundaryShrink,
}

impl FieldFamily {
    pub fn name(&self) -> &'static str {
        match self {
            FieldFamily::SmoothRandom => "smooth-random",
            FieldFamily::BoundaryShrink => "boundary-shrink",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "smooth-random" => Ok(FieldFamily::SmoothRandom),
            "boundary-shrink" => Ok(FieldFamily::BoundaryShrink),
            other => Err(Error::Config(format!("unknown field family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub n_samples: usize,
    pub field_family: FieldFamily,
    pub max_disp: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 48,
            width: 64,
            n_samples: 500,
            field_family: FieldFamily::BoundaryShrink,
            max_disp: 6.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn diagonal(&self) -> f64 {
        (self.height as f64).hypot(self.width as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!("{}x{} is too small", self.height, self.width)));
        }
        if !(self.max_disp > 0.0 && self.max_disp <= 0.1 * self.diagonal()) {
            return Err(Error::Config(format!(
                "max_disp {} must lie in (0, {:.3}]",
                self.max_disp,
                0.1 * self.diagonal()
            )));
        }
        Ok(())
    }
}

/// Catmull-Rom weights for fractional offset `t` over nodes `i-1..=i+2`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Displacement defined on a coarse node grid spanning the image corners
/// and evaluated anywhere by bicubic interpolation (constant extension
/// beyond the border).
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothField {
    height: usize,
    width: usize,
    /// `GRID_ROWS x GRID_COLS` node vectors, row-major.
    nodes: Vec<(f64, f64)>,
}

impl SmoothField {
    pub fn new(height: usize, width: usize, nodes: Vec<(f64, f64)>) -> Self {
        assert_eq!(nodes.len(), GRID_ROWS * GRID_COLS);
        Self { height, width, nodes }
    }

    pub fn random(height: usize, width: usize, family: FieldFamily, max_disp: f64, rng: &mut ChaCha8Rng) -> Self {
        let m = NODE_SCALE * max_disp;
        let mut nodes = Vec::with_capacity(GRID_ROWS * GRID_COLS);
        for j in 0..GRID_ROWS {
            for i in 0..GRID_COLS {
                let v = match family {
                    FieldFamily::SmoothRandom => (rng.gen_range(-m..=m), rng.gen_range(-m..=m)),
                    FieldFamily::BoundaryShrink => {
                        let mut gx = 0.0;
                        let mut gy = 0.0;
                        if i == 0 {
                            gx = -rng.gen_range(0.25 * m..=m);
                        } else if i == GRID_COLS - 1 {
                            gx = rng.gen_range(0.25 * m..=m);
                        }
                        if j == 0 {
                            gy = -rng.gen_range(0.25 * m..=m);
                        } else if j == GRID_ROWS - 1 {
                            gy = rng.gen_range(0.25 * m..=m);
                        }
                        (gx, gy)
                    }
                };
                nodes.push(v);
            }
        }
        Self::new(height, width, nodes)
    }

    pub fn zero(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![(0.0, 0.0); GRID_ROWS * GRID_COLS])
    }

    /// Bicubic evaluation at a continuous pixel position.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let u = (x * (GRID_COLS - 1) as f64 / (self.width - 1) as f64).clamp(0.0, (GRID_COLS - 1) as f64);
        let v = (y * (GRID_ROWS - 1) as f64 / (self.height - 1) as f64).clamp(0.0, (GRID_ROWS - 1) as f64);
        let iu = (u.floor() as usize).min(GRID_COLS - 2);
        let iv = (v.floor() as usize).min(GRID_ROWS - 2);
        let wu = catmull_rom(u - iu as f64);
        let wv = catmull_rom(v - iv as f64);
        let node = |i: isize, j: isize| {
            let i = i.clamp(0, GRID_COLS as isize - 1) as usize;
            let j = j.clamp(0, GRID_ROWS as isize - 1) as usize;
            self.nodes[j * GRID_COLS + i]
        };
        let (mut dx, mut dy) = (0.0, 0.0);
        for (b, wvb) in wv.iter().enumerate() {
            for (a, wua) in wu.iter().enumerate() {
                let n = node(iu as isize + a as isize - 1, iv as isize + b as isize - 1);
                let wgt = wua * wvb;
                dx += wgt * n.0;
                dy += wgt * n.1;
            }
        }
        (dx, dy)
    }

    pub fn rasterize(&self) -> MotionField {
        MotionField::from_fn(self.height, self.width, |y, x| self.eval(x as f64, y as f64))
    }

    /// Per-pixel fixed-point inverse. Returns `None` when any pixel fails
    /// to reach the residual tolerance.
    pub fn invert(&self) -> Option<MotionField> {
        let mut data = Vec::with_capacity(self.height * self.width * 2);
        for y in 0..self.height {
            for x in 0..self.width {
                let (qx, qy) = (x as f64, y as f64);
                let g = self.eval(qx, qy);
                let mut f = (-g.0, -g.1);
                let mut converged = false;
                for _ in 0..MAX_INVERSION_ITERS {
                    let g = self.eval(qx + f.0, qy + f.1);
                    let next = (-g.0, -g.1);
                    let residual = (next.0 - f.0).hypot(next.1 - f.1);
                    f = next;
                    if residual < INVERSION_TOL {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return None;
                }
                data.push(f.0);
                data.push(f.1);
            }
        }
        MotionField::from_vec(self.height, self.width, data).ok()
    }
}

fn smoothstep(e0: f64, e1: f64, v: f64) -> f64 {
    let t = ((v - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn blend(img: &mut ImagePlane, y: usize, x: usize, color: &[f64; 3], alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    for (c, col) in color.iter().enumerate() {
        let v = img.get(y, x, c);
        img.set(y, x, c, v + alpha * (col - v));
    }
}

fn paint_rect(img: &mut ImagePlane, rng: &mut ChaCha8Rng, color: [f64; 3], min_side: f64) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let rw = rng.gen_range(min_side..(0.5 * w).max(min_side + 1.0));
    let rh = rng.gen_range(min_side..(0.5 * h).max(min_side + 1.0));
    let x0 = rng.gen_range(-0.1 * w..w - 0.5 * rw);
    let y0 = rng.gen_range(-0.1 * h..h - 0.5 * rh);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (px, py) = (x as f64, y as f64);
            let inside_x = smoothstep(-1.0, 1.0, px - x0) * smoothstep(-1.0, 1.0, x0 + rw - px);
            let inside_y = smoothstep(-1.0, 1.0, py - y0) * smoothstep(-1.0, 1.0, y0 + rh - py);
            blend(img, y, x, &color, inside_x * inside_y);
        }
    }
}

fn paint_circle(img: &mut ImagePlane, rng: &mut ChaCha8Rng, color: [f64; 3], min_r: f64) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let r = rng.gen_range(min_r..(0.25 * h).max(min_r + 1.0));
    let cx = rng.gen_range(0.0..w);
    let cy = rng.gen_range(0.0..h);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let d = (x as f64 - cx).hypot(y as f64 - cy);
            blend(img, y, x, &color, smoothstep(-1.0, 1.0, r - d));
        }
    }
}

/// Full-width straight line through the image at a random angle.
fn paint_line(img: &mut ImagePlane, rng: &mut ChaCha8Rng, color: [f64; 3]) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let (nx, ny) = (theta.cos(), theta.sin());
    let (cx, cy) = (rng.gen_range(0.2 * w..0.8 * w), rng.gen_range(0.2 * h..0.8 * h));
    let half = rng.gen_range(0.6..1.4);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let d = ((x as f64 - cx) * nx + (y as f64 - cy) * ny).abs();
            blend(img, y, x, &color, smoothstep(-1.0, 1.0, half - d));
        }
    }
}

/// Number of straight lines painted per image (at least two).
pub fn line_count(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(2..=4)
}

/// Procedural rectangular scene: colour gradient, random rectangles and
/// circles, guaranteed dark and bright patches, then straight lines. All
/// values stay within `[0.0, 0.95]` so that pure white only ever marks
/// margins.
pub fn gen_base_image(rng: &mut ChaCha8Rng, height: usize, width: usize) -> ImagePlane {
    let c0 = random_color(rng, 0.1, 0.9);
    let c1 = random_color(rng, 0.1, 0.9);
    let (ax, ay) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let norm = (f64::abs(ax) + f64::abs(ay)).max(1e-3);
    let mut img = ImagePlane::from_fn(height, width, 3, |y, x, c| {
        let s = (ax * x as f64 / width as f64 + ay * y as f64 / height as f64) / norm;
        let s = 0.5 + 0.5 * s;
        c0[c] + (c1[c] - c0[c]) * s
    });
    let n_rects = rng.gen_range(1..=3);
    for _ in 0..n_rects {
        let col = random_color(rng, 0.05, CONTENT_MAX);
        paint_rect(&mut img, rng, col, 6.0);
    }
    let n_circles = rng.gen_range(1..=2);
    for _ in 0..n_circles {
        let col = random_color(rng, 0.05, CONTENT_MAX);
        paint_circle(&mut img, rng, col, 4.0);
    }
    let dark = random_color(rng, 0.0, 0.1);
    paint_rect(&mut img, rng, dark, 8.0);
    let bright = random_color(rng, 0.88, CONTENT_MAX);
    paint_circle(&mut img, rng, bright, 6.0);
    for _ in 0..line_count(rng) {
        let col = random_color(rng, 0.0, CONTENT_MAX);
        paint_line(&mut img, rng, col);
    }
    img.map(|v| v.clamp(0.0, CONTENT_MAX))
}

/// Degrades `target` by `degradation` into a stitched sample and computes
/// the rectifying field. Returns `None` when the inverse does not
/// converge, leaves `max_disp`, or reconstructs below 30 dB.
pub fn synth_pair(target: &ImagePlane, degradation: &SmoothField, max_disp: f64) -> Result<Option<Sample>> {
    let (h, w, _) = target.shape();
    let g = degradation.rasterize();
    let warped = backward_warp(target, &g, &[WHITE; 3], None)?;
    let mask = MaskPlane::from_fn(h, w, |y, x| if warped.validity.get(y, x) >= 1.0 - 1e-9 { 1.0 } else { 0.0 });
    let mut stitched = warped.image;
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0.0 {
                for c in 0..3 {
                    stitched.set(y, x, c, WHITE);
                }
            }
        }
    }
    let Some(field) = degradation.invert() else {
        log::debug!("field inversion did not converge");
        return Ok(None);
    };
    if field.max_magnitude() > max_disp || g.max_magnitude() > max_disp {
        log::debug!("displacement exceeds max_disp {max_disp}");
        return Ok(None);
    }
    let sample = Sample {
        name: String::new(),
        stitched,
        mask,
        field: Some(field),
        target: target.clone(),
    };
    let q = inversion_psnr(&sample)?;
    if q < MIN_INVERSION_PSNR {
        log::debug!("inversion PSNR {q:.2} dB below {MIN_INVERSION_PSNR}");
        return Ok(None);
    }
    Ok(Some(sample))
}

/// PSNR of `W(I_S, F)` against `I_R` over pixels whose bilinear support
/// lies entirely on valid stitched content; 100 when that set is empty.
pub fn inversion_psnr(sample: &Sample) -> Result<f64> {
    let field = sample
        .field
        .as_ref()
        .ok_or_else(|| Error::Dataset("sample has no field".into()))?;
    let back = backward_warp(&sample.stitched, field, &[WHITE; 3], Some(&sample.mask))?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let (h, w, _) = sample.target.shape();
    for y in 0..h {
        for x in 0..w {
            if back.validity.get(y, x) >= 0.999 {
                a.extend_from_slice(back.image.pixel(y, x));
                b.extend_from_slice(sample.target.pixel(y, x));
            }
        }
    }
    if a.is_empty() {
        return Ok(crate::metrics::PSNR_CAP);
    }
    let n = a.len() / 3;
    psnr(
        &ImagePlane::from_vec(1, n, 3, a)?,
        &ImagePlane::from_vec(1, n, 3, b)?,
    )
}

/// Dataset split; folded into the random stream so train and evaluation
/// samples never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// Deterministic sample `index` of `split`: rejected attempts move to the
/// next attempt stream.
pub fn generate_sample(cfg: &SynthConfig, split: Split, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let split_bits = match split {
        Split::Train => 0u64,
        Split::Eval => 1u64 << 40,
    };
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream_rng(cfg.seed, stream_id(tag::SYNTH, index as u64, split_bits | attempt));
        let target = gen_base_image(&mut rng, cfg.height, cfg.width);
        let g = SmoothField::random(cfg.height, cfg.width, cfg.field_family, cfg.max_disp, &mut rng);
        if let Some(mut s) = synth_pair(&target, &g, cfg.max_disp)? {
            s.name = format!("{index:05}");
            return Ok(s);
        }
        log::debug!("sample {index} attempt {attempt} rejected, regenerating");
    }
    Err(Error::Dataset(format!("sample {index}: no acceptable draw in {MAX_ATTEMPTS} attempts")))
}

pub fn generate(cfg: &SynthConfig, split: Split, count: usize) -> Result<Vec<Sample>> {
    (0..count).map(|i| generate_sample(cfg, split, i)).collect()
}
