//! On-disk formats: atomic writes, PNG planes and raw motion fields.

use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::image::{ImagePlane, MaskPlane, MotionField};
use crate::{Error, Result};

const FIELD_MAGIC: &[u8; 8] = b"RECTFLD1";

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 1- or 3-channel plane in `[0, 1]` as 8-bit PNG bytes.
pub fn encode_png(img: &ImagePlane) -> Result<Vec<u8>> {
    let (h, w, c) = img.shape();
    let mut out = Vec::new();
    let enc = image::codecs::png::PngEncoder::new(&mut out);
    let color = match c {
        1 => image::ColorType::L8,
        3 => image::ColorType::Rgb8,
        _ => return Err(Error::Shape(format!("cannot write a {c}-channel PNG"))),
    };
    let bytes: Vec<u8> = img.as_slice().iter().map(|&v| to_u8(v)).collect();
    image::ImageEncoder::write_image(enc, &bytes, w as u32, h as u32, color)?;
    Ok(out)
}

pub fn write_png(path: &Path, img: &ImagePlane) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn write_mask_png(path: &Path, mask: &MaskPlane) -> Result<()> {
    write_png(path, &mask.to_image())
}

/// Reads any PNG as an RGB plane in `[0, 1]`.
pub fn read_png_rgb(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    ImagePlane::from_vec(h as usize, w as usize, 3, data)
}

/// Reads any PNG as a single-channel plane in `[0, 1]`.
pub fn read_png_gray(path: &Path) -> Result<MaskPlane> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    MaskPlane::from_vec(h as usize, w as usize, img.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
}

/// Raw field: magic, `u32` height, `u32` width, then `H x W x 2` `f32`
/// values, all little-endian.
pub fn encode_field(field: &MotionField) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + field.as_slice().len() * 4);
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    for v in field.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<MotionField> {
    if bytes.len() < 16 || &bytes[..8] != FIELD_MAGIC {
        return Err(Error::Dataset("not a motion field file".into()));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != h * w * 2 * 4 {
        return Err(Error::Dataset(format!("field body has {} bytes for {h}x{w}", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MotionField::from_vec(h, w, data)
}

pub fn write_field(path: &Path, field: &MotionField) -> Result<()> {
    write_atomic(path, &encode_field(field))
}

pub fn read_field(path: &Path) -> Result<MotionField> {
    decode_field(&std::fs::read(path)?)
}

/// Inspection export: `dx` and `dy` as two 16-bit grayscale PNGs, mapping
/// `[-range, range]` pixels onto `[0, 65535]`.
pub fn write_field_pngs(dx_path: &Path, dy_path: &Path, field: &MotionField, range: f64) -> Result<()> {
    let (h, w) = field.dims();
    for (ch, path) in [(0usize, dx_path), (1, dy_path)] {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let (dx, dy) = field.get(y as usize, x as usize);
            let v = if ch == 0 { dx } else { dy };
            let u = ((v / range).clamp(-1.0, 1.0) * 0.5 + 0.5) * 65535.0;
            Luma([u.round() as u16])
        });
        let mut bytes = Vec::new();
        buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageOutputFormat::Png)?;
        write_atomic(path, &bytes)?;
    }
    Ok(())
}

/// Packs a 3-channel plane into an 8-bit RGB buffer.
pub fn to_rgb8(img: &ImagePlane) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (h, w, _) = img.shape();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImagePlane::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f64 / 105.0);
        let p = dir.path().join("a.png");
        write_png(&p, &img).unwrap();
        let back = read_png_rgb(&p).unwrap();
        assert_eq!(back.shape(), (5, 7, 3));
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn field_round_trip_f32() {
        let f = MotionField::from_fn(3, 4, |y, x| (x as f64 * 0.25 - 1.0, y as f64 * 0.5));
        let back = decode_field(&encode_field(&f)).unwrap();
        assert_eq!(back, f);
        assert!(decode_field(&encode_field(&f)[..20]).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
