//! PNG images, PGM masks and pair manifests.

use std::fs;
use std::path::{Path, PathBuf};

use ::image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use ::image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::{DefectMask, Image};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8- or 16-bit grey or RGB(A) PNG. Alpha is dropped.
pub fn read_png(path: &Path) -> Result<Image> {
    let img = ::image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let colour = img.color();
    if colour.has_color() {
        let rgb = img.to_rgb32f();
        let data = rgb.into_raw().into_iter().map(f64::from).collect();
        Image::new(w, h, 3, data)
    } else {
        let grey = img.to_luma32f();
        let data = grey.into_raw().into_iter().map(f64::from).collect();
        Image::new(w, h, 1, data)
    }
}

/// Writes an 8-bit grey or RGB PNG.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized buffer")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("sized buffer")),
        c => return Err(image_err(path, format!("cannot write {c}-channel image"))),
    };
    dynamic
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Writes the binary map as a P5 PGM with maxval 255.
pub fn write_mask_pgm(path: &Path, mask: &DefectMask) -> Result<()> {
    let bytes: Vec<u8> = mask
        .binary()
        .iter()
        .map(|&b| if b == 1 { 255 } else { 0 })
        .collect();
    let file = fs::File::create(path)?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            mask.width() as u32,
            mask.height() as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| image_err(path, e))
}

/// Reads a grey mask (PGM or PNG); values above mid-grey mark defects.
pub fn read_mask(path: &Path) -> Result<DefectMask> {
    let img = ::image::open(path)
        .map_err(|e| image_err(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits: Vec<bool> = img.into_raw().into_iter().map(|v| v > 127).collect();
    DefectMask::from_binary(w, h, &bits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub mask: PathBuf,
    pub seed: u64,
}

/// One whitespace-separated `clean degraded mask seed` line per pair.
/// Paths are stored relative to the manifest's directory.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!(
            "{} {} {} {}\n",
            e.clean.display(),
            e.degraded.display(),
            e.mask.display(),
            e.seed
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [clean, degraded, mask, seed] = parts[..] else {
            return Err(Error::Parse {
                line: i + 1,
                detail: format!("expected 4 fields, got {}", parts.len()),
            });
        };
        let seed = seed.parse().map_err(|e| Error::Parse {
            line: i + 1,
            detail: format!("seed `{seed}`: {e}"),
        })?;
        out.push(ManifestEntry {
            clean: clean.into(),
            degraded: degraded.into(),
            mask: mask.into(),
            seed,
        });
    }
    Ok(out)
}
