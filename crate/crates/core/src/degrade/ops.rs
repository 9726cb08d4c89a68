use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{rng_for, BlendMode};
use crate::error::{Error, Result};
use crate::image::{DefectMask, Image};

const SEPIA: [[f64; 3]; 3] = [
    [0.393, 0.769, 0.189],
    [0.349, 0.686, 0.168],
    [0.272, 0.534, 0.131],
];

/// Composites a single-channel scratch texture over `image`.
///
/// With `t = opacity * texture`: addition is `min(c + t, 1)`, screen is
/// `1 - (1 - c)(1 - t)`, lighten-only is `max(c, t + (1 - opacity) c)`.
pub fn blend_scratch(
    image: &Image,
    texture: &Image,
    mode: BlendMode,
    opacity: f64,
) -> Result<Image> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::Parameter(format!(
            "opacity {opacity} outside [0, 1]"
        )));
    }
    if texture.channels() != 1 {
        return Err(Error::shape(
            "blend_scratch",
            "texture must be single-channel",
        ));
    }
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            // Textures smaller than the image tile; larger ones crop.
            let tex = texture.get(x % texture.width(), y % texture.height(), 0);
            let t = opacity * tex;
            if t == 0.0 {
                continue;
            }
            for c in 0..image.channels() {
                let v = image.get(x, y, c);
                let b = match mode {
                    BlendMode::Addition => (v + t).min(1.0),
                    BlendMode::LightenOnly => v.max(t + (1.0 - opacity) * v),
                    BlendMode::Screen => 1.0 - (1.0 - v) * (1.0 - t),
                };
                out.set(x, y, c, b.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Normalized 1-D Gaussian taps over `[-⌈3σ⌉, ⌈3σ⌉]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Parameter(format!("blur sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut tmp = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * image.get_clamped(x as isize + j as isize - r, y as isize, c);
                }
                tmp.set(x, y, c, acc);
            }
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * tmp.get_clamped(x as isize, y as isize + j as isize - r, c);
                }
                out.set(x, y, c, acc);
            }
        }
    }
    Ok(out)
}

fn bilinear(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let a = img.get_clamped(x0, y0, c);
    let b = img.get_clamped(x0 + 1, y0, c);
    let d = img.get_clamped(x0, y0 + 1, c);
    let e = img.get_clamped(x0 + 1, y0 + 1, c);
    (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e)
}

fn displacement_field(
    w: usize,
    h: usize,
    amplitude: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Image> {
    let noise = (0..w * h)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut field = gaussian_blur(&Image::new(w, h, 1, noise)?, sigma)?;
    let peak = field.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        field
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= amplitude / peak);
    }
    Ok(field)
}

/// Resamples `texture` through a smooth random displacement field whose
/// largest component equals `amplitude` pixels.
pub fn elastic_distort(texture: &Image, amplitude: f64, sigma: f64, seed: u64) -> Result<Image> {
    if amplitude < 0.0 || sigma < 0.0 {
        return Err(Error::Parameter(format!(
            "elastic amplitude {amplitude} / sigma {sigma} must be non-negative"
        )));
    }
    if amplitude == 0.0 {
        return Ok(texture.clone());
    }
    let (w, h) = (texture.width(), texture.height());
    let mut rng = rng_for(seed, 0);
    let dx = displacement_field(w, h, amplitude, sigma, &mut rng)?;
    let dy = displacement_field(w, h, amplitude, sigma, &mut rng)?;
    let mut out = texture.clone();
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + dx.get(x, y, 0);
            let sy = y as f64 + dy.get(x, y, 0);
            for c in 0..texture.channels() {
                out.set(x, y, c, bilinear(texture, sx, sy, c));
            }
        }
    }
    Ok(out)
}

/// Radius of a hole boundary along each direction: the nominal radius shrunk
/// by up to 35% through a few low-order random harmonics.
struct BlobShape {
    radius: f64,
    harmonics: Vec<(f64, f64, f64)>,
}

impl BlobShape {
    fn new(radius: f64, rng: &mut ChaCha8Rng) -> Self {
        let harmonics = [2.0, 3.0, 5.0]
            .iter()
            .map(|&k| (k, rng.random_range(0.3..1.0), rng.random_range(0.0..TAU)))
            .collect();
        BlobShape { radius, harmonics }
    }

    fn radius_at(&self, theta: f64) -> f64 {
        let total: f64 = self.harmonics.iter().map(|h| h.1).sum();
        let wave: f64 = self
            .harmonics
            .iter()
            .map(|&(k, a, phase)| a * (k * theta + phase).sin())
            .sum::<f64>()
            / total;
        self.radius * (1.0 - 0.35 * (0.5 + 0.5 * wave))
    }
}

/// Punches a feathered blob through to `paper`. Returns the composite and
/// the hole's own mask contribution.
pub fn punch_hole(
    image: &Image,
    paper: &Image,
    center: (f64, f64),
    radius: f64,
    feather: f64,
    seed: u64,
) -> Result<(Image, DefectMask)> {
    if radius <= 0.0 || !radius.is_finite() {
        return Err(Error::Parameter(format!(
            "hole radius {radius} must be positive"
        )));
    }
    if feather < 0.0 {
        return Err(Error::Parameter(format!(
            "feather radius {feather} must be non-negative"
        )));
    }
    if !image.same_shape(paper) {
        return Err(Error::shape(
            "punch_hole",
            "paper texture must match the image",
        ));
    }
    let (w, h) = (image.width(), image.height());
    let mut rng = rng_for(seed, 0);
    let blob = BlobShape::new(radius, &mut rng);
    let mut alpha = vec![0.0; w * h];
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let (ddx, ddy) = (x as f64 - center.0, y as f64 - center.1);
            let d = (ddx * ddx + ddy * ddy).sqrt();
            if d > radius + feather {
                continue;
            }
            let r = blob.radius_at(ddy.atan2(ddx));
            let a = if feather == 0.0 {
                if d <= r {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((r + feather - d) / feather).clamp(0.0, 1.0)
            };
            if a == 0.0 {
                continue;
            }
            alpha[y * w + x] = a;
            for c in 0..image.channels() {
                let v = if a == 1.0 {
                    paper.get(x, y, c)
                } else {
                    (1.0 - a) * image.get(x, y, c) + a * paper.get(x, y, c)
                };
                out.set(x, y, c, v);
            }
        }
    }
    Ok((out, DefectMask::from_alpha(w, h, alpha)?))
}

/// Adds clamped i.i.d. Gaussian noise to every sample.
pub fn add_grain(image: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Parameter(format!("grain sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = rng_for(seed, 0);
    let mut out = image.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = (*v + sigma * n).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Applies the sepia matrix to RGB input; other channel counts pass through.
pub fn sepia(image: &Image) -> Image {
    if image.channels() != 3 {
        return image.clone();
    }
    let mut out = image.clone();
    for (dst, src) in out.data_mut().chunks_mut(3).zip(image.data().chunks(3)) {
        for (i, row) in SEPIA.iter().enumerate() {
            dst[i] = (row[0] * src[0] + row[1] * src[1] + row[2] * src[2]).clamp(0.0, 1.0);
        }
    }
    out
}

/// Blend toward a sepia-toned, contrast-reduced copy.
pub fn fade(image: &Image, strength: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Parameter(format!(
            "fade strength {strength} outside [0, 1]"
        )));
    }
    if strength == 0.0 {
        return Ok(image.clone());
    }
    let toned = sepia(image);
    let mut out = image.clone();
    for (o, t) in out.data_mut().iter_mut().zip(toned.data()) {
        let flat = 0.5 + 0.6 * (t - 0.5);
        *o = ((1.0 - strength) * *o + strength * flat).clamp(0.0, 1.0);
    }
    Ok(out)
}
