//! PSNR, SSIM and alignment heatmaps.

use std::fmt::Write as _;

use crate::image::ImagePlane;
use crate::{Error, Result};

/// Returned for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// SSIM window: 11 taps, Gaussian σ = 1.5.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// `10·log10(1 / MSE)` over all channels, for values on a unit range.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output has `(h-n+1) x (w-n+1)` entries.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM on luminance with the standard 11-tap Gaussian window,
/// evaluated only where the window lies fully inside the image.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w, _) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("{h}x{w} is smaller than the {SSIM_WINDOW}-pixel SSIM window")));
    }
    let la = a.luminance();
    let lb = b.luminance();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mu_a = filter_valid(&la, h, w, &taps);
    let mu_b = filter_valid(&lb, h, w, &taps);
    let e_aa = filter_valid(&prod(&la, &la), h, w, &taps);
    let e_bb = filter_valid(&prod(&lb, &lb), h, w, &taps);
    let e_ab = filter_valid(&prod(&la, &lb), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / n as f64)
}

/// Maps `d ∈ [0, 1]` onto a black-red-yellow-white ramp whose luminance
/// strictly increases with `d`.
pub fn heat_color(d: f64) -> [f64; 3] {
    let d = d.clamp(0.0, 1.0);
    [
        (3.0 * d).clamp(0.0, 1.0),
        (3.0 * d - 1.0).clamp(0.0, 1.0),
        (3.0 * d - 2.0).clamp(0.0, 1.0),
    ]
}

/// Per-pixel absolute luminance difference through [`heat_color`]; darker
/// means closer.
pub fn heatmap(a: &ImagePlane, b: &ImagePlane) -> Result<ImagePlane> {
    a.ensure_same_shape(b, "heatmap")?;
    let (h, w, _) = a.shape();
    let la = a.luminance();
    let lb = b.luminance();
    let mut out = ImagePlane::new(h, w, 3);
    for (i, px) in out.as_mut_slice().chunks_exact_mut(3).enumerate() {
        px.copy_from_slice(&heat_color((la[i] - lb[i]).abs()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Metrics of the stitched input itself against the ground truth.
    pub ref_psnr: f64,
    pub ref_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub ref_psnr_mean: f64,
    pub ref_ssim_mean: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset("empty evaluation set".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            psnr_mean: mean(|r| r.psnr),
            ssim_mean: mean(|r| r.ssim),
            ref_psnr_mean: mean(|r| r.ref_psnr),
            ref_ssim_mean: mean(|r| r.ref_ssim),
            rows,
        })
    }

    pub fn psnr_delta(&self) -> f64 {
        self.psnr_mean - self.ref_psnr_mean
    }

    pub fn ssim_delta(&self) -> f64 {
        self.ssim_mean - self.ref_ssim_mean
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,psnr,ssim,ref_psnr,ref_ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{:.6}", r.name, r.psnr, r.ssim, r.ref_psnr, r.ref_ssim);
        }
        let _ = writeln!(
            s,
            "mean,{:.6},{:.6},{:.6},{:.6}",
            self.psnr_mean, self.ssim_mean, self.ref_psnr_mean, self.ref_ssim_mean
        );
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>10} {:>10}", "method", "SSIM", "PSNR");
        let _ = writeln!(s, "{:<12} {:>10.4} {:>10.2}", "Reference", self.ref_ssim_mean, self.ref_psnr_mean);
        let _ = writeln!(s, "{:<12} {:>10.4} {:>10.2}", "Output", self.ssim_mean, self.psnr_mean);
        let _ = writeln!(s, "{:<12} {:>+10.4} {:>+10.2}", "delta", self.ssim_delta(), self.psnr_delta());
        let _ = writeln!(s, "({} samples)", self.rows.len());
        s
    }
}
