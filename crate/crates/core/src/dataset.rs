//! Samples and the on-disk dataset layout.
//!
//! ```text
//! <dir>/img/00000.png    stitched input
//! <dir>/mask/00000.png   stitched mask (white = valid)
//! <dir>/gt/00000.png     rectangled ground truth
//! <dir>/field/00000.f32  optional rectifying field
//! <dir>/manifest.txt
//! ```
//!
//! The loader also accepts common folder-name variants such as
//! `input`/`mask`/`gt` triplets.

use std::path::{Path, PathBuf};

use crate::files::{read_field, read_png_gray, read_png_rgb, write_field, write_mask_png, write_png};
use crate::image::{ImagePlane, MaskPlane, MotionField};
use crate::{Error, Result};

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    /// Stitched image `I_S`, white outside the mask.
    pub stitched: ImagePlane,
    /// Binary stitched mask `M_S`, 1 on valid content.
    pub mask: MaskPlane,
    /// Rectifying field in pixels; absent for image-only datasets.
    pub field: Option<MotionField>,
    /// Rectangled ground truth `I_R`.
    pub target: ImagePlane,
}

impl Sample {
    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.mask.dims();
        let ok = self.stitched.shape() == (h, w, 3)
            && self.target.shape() == (h, w, 3)
            && self.field.as_ref().map_or(true, |f| f.dims() == (h, w));
        if !ok {
            return Err(Error::Shape(format!("sample {} has inconsistent planes", self.name)));
        }
        Ok(())
    }

    /// Rounds the images to the 8-bit grid they take on disk.
    pub fn quantized(&self) -> Sample {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        let mut s = self.clone();
        s.stitched = s.stitched.map(q);
        s.target = s.target.map(q);
        s.mask = MaskPlane::from_fn(self.mask.height(), self.mask.width(), |y, x| q(self.mask.get(y, x)));
        s
    }
}

pub const IMAGE_DIRS: &[&str] = &["img", "input", "inputs", "stitched", "input_img", "image", "images"];
pub const MASK_DIRS: &[&str] = &["mask", "masks", "input_mask", "mask_img"];
pub const TARGET_DIRS: &[&str] = &["gt", "label", "labels", "target", "targets", "ground_truth"];
pub const FIELD_DIR: &str = "field";
pub const MANIFEST: &str = "manifest.txt";

fn find_subdir(root: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| root.join(n)).find(|p| p.is_dir())
}

/// Writes samples in the canonical layout. Fields are stored when present.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["img", "mask", "gt"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    if samples.iter().any(|s| s.field.is_some()) {
        std::fs::create_dir_all(dir.join(FIELD_DIR))?;
    }
    for s in samples {
        write_png(&dir.join("img").join(format!("{}.png", s.name)), &s.stitched)?;
        write_mask_png(&dir.join("mask").join(format!("{}.png", s.name)), &s.mask)?;
        write_png(&dir.join("gt").join(format!("{}.png", s.name)), &s.target)?;
        if let Some(f) = &s.field {
            write_field(&dir.join(FIELD_DIR).join(format!("{}.f32", s.name)), f)?;
        }
    }
    Ok(())
}

fn stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        let is_png = p.extension().map_or(false, |e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("jpg"));
        if p.is_file() && is_png {
            if let Some(s) = p.file_stem() {
                out.push(s.to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn find_file(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

/// Loads input/mask/ground-truth triplets (and fields when a `field`
/// folder exists). Incomplete or inconsistent triplets are skipped with a
/// warning; an empty result is an error.
pub fn load_dird(root: &Path) -> Result<Vec<Sample>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let missing = |what: &str| Error::Dataset(format!("{}: no {what} folder", root.display()));
    let img_dir = find_subdir(root, IMAGE_DIRS).ok_or_else(|| missing("input image"))?;
    let mask_dir = find_subdir(root, MASK_DIRS).ok_or_else(|| missing("mask"))?;
    let gt_dir = find_subdir(root, TARGET_DIRS).ok_or_else(|| missing("ground-truth"))?;
    let field_dir = Some(root.join(FIELD_DIR)).filter(|p| p.is_dir());

    let mut samples = Vec::new();
    for stem in stems(&img_dir)? {
        let (Some(mask_p), Some(gt_p)) = (
            find_file(&mask_dir, &stem, &["png", "jpg"]),
            find_file(&gt_dir, &stem, &["png", "jpg"]),
        ) else {
            log::warn!("{stem}: missing mask or ground truth, skipped");
            continue;
        };
        let stitched = read_png_rgb(&find_file(&img_dir, &stem, &["png", "jpg"]).expect("listed"))?;
        let mask = read_png_gray(&mask_p)?;
        let mask = MaskPlane::from_fn(mask.height(), mask.width(), |y, x| if mask.get(y, x) >= 0.5 { 1.0 } else { 0.0 });
        let target = read_png_rgb(&gt_p)?;
        let field = match field_dir.as_ref().and_then(|d| find_file(d, &stem, &["f32"])) {
            Some(p) => Some(read_field(&p)?),
            None => None,
        };
        let s = Sample { name: stem.clone(), stitched, mask, field, target };
        if let Err(e) = s.validate() {
            log::warn!("{stem}: {e}, skipped");
            continue;
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{} contains no usable samples", root.display())));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(name: &str, h: usize, w: usize) -> Sample {
        Sample {
            name: name.into(),
            stitched: ImagePlane::from_fn(h, w, 3, |y, x, c| ((y + x + c) % 5) as f64 / 4.0),
            mask: MaskPlane::from_fn(h, w, |_, x| if x > 0 { 1.0 } else { 0.0 }),
            field: Some(MotionField::constant(h, w, 0.5, -0.25)),
            target: ImagePlane::filled(h, w, 3, 0.2),
        }
    }

    #[test]
    fn round_trip_layout() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample("00000", 6, 8).quantized();
        write_dataset(dir.path(), &[s.clone()]).unwrap();
        let back = load_dird(dir.path()).unwrap();
        assert_eq!(back, vec![s]);
    }

    #[test]
    fn empty_directory_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dird(dir.path()).is_err());
        for sub in ["input", "mask", "gt"] {
            std::fs::create_dir(dir.path().join(sub)).unwrap();
        }
        assert!(load_dird(dir.path()).is_err());
    }

    #[test]
    fn variant_names_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for sub in ["input", "mask", "gt"] {
            std::fs::create_dir(root.join(sub)).unwrap();
        }
        let good = sample("a", 6, 8);
        write_png(&root.join("input/a.png"), &good.stitched).unwrap();
        write_mask_png(&root.join("mask/a.png"), &good.mask).unwrap();
        write_png(&root.join("gt/a.png"), &good.target).unwrap();
        let bad = sample("b", 6, 8);
        write_png(&root.join("input/b.png"), &bad.stitched).unwrap();
        write_mask_png(&root.join("mask/b.png"), &MaskPlane::ones(5, 8)).unwrap();
        write_png(&root.join("gt/b.png"), &bad.target).unwrap();
        write_png(&root.join("input/c.png"), &bad.stitched).unwrap();
        let loaded = load_dird(root).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].name, "a");
        assert_eq!(loaded[0].dims(), (6, 8));
        assert!(loaded[0].field.is_none());
    }
}
