use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ops::gaussian_blur;
use super::TextureStyle;
use crate::error::Result;
use crate::image::Image;

/// Texture values below this are treated as untouched paper.
pub const SCRATCH_FLOOR: f64 = 0.1;

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Draws an antialiased stroke of the given width and peak intensity.
fn draw_segment(tex: &mut Image, a: (f64, f64), b: (f64, f64), width: f64, intensity: f64) {
    let (w, h) = (tex.width() as isize, tex.height() as isize);
    let reach = width / 2.0 + 1.0;
    let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as isize;
    let x1 = ((a.0.max(b.0) + reach).ceil() as isize).min(w - 1);
    let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as isize;
    let y1 = ((a.1.max(b.1) + reach).ceil() as isize).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = segment_distance(x as f64, y as f64, a, b);
            let cover = (width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let (ux, uy) = (x as usize, y as usize);
                let v = tex.get(ux, uy, 0).max(cover * intensity);
                tex.set(ux, uy, 0, v);
            }
        }
    }
}

/// Long, mostly straight strokes crossing the frame.
fn standard_scratch(tex: &mut Image, rng: &mut ChaCha8Rng) {
    let (w, h) = (tex.width() as f64, tex.height() as f64);
    let size = w.max(h);
    let mut p = (rng.random_range(0.0..w), rng.random_range(0.0..h));
    let mut angle: f64 = rng.random_range(0.0..PI);
    let length = size * rng.random_range(0.5..1.2);
    let segments = rng.random_range(3..=6);
    let intensity = rng.random_range(0.75..1.0);
    for _ in 0..segments {
        angle += rng.random_range(-0.25..0.25);
        let step = length / segments as f64;
        let q = (p.0 + step * angle.cos(), p.1 + step * angle.sin());
        let width = rng.random_range(0.7..1.5);
        draw_segment(tex, p, q, width, intensity);
        p = q;
    }
}

/// Curved hairlines plus dust specks; never used for the synthetic domain.
fn held_out_scratch(tex: &mut Image, rng: &mut ChaCha8Rng) {
    let (w, h) = (tex.width() as f64, tex.height() as f64);
    let size = w.max(h);
    let centre = (
        rng.random_range(-0.5 * w..1.5 * w),
        rng.random_range(-0.5 * h..1.5 * h),
    );
    let radius = size * rng.random_range(0.4..1.0);
    let start: f64 = rng.random_range(0.0..TAU);
    let sweep = rng.random_range(0.6..1.6) * (size / radius).min(2.0);
    let intensity = rng.random_range(0.8..1.0);
    let width = rng.random_range(0.5..1.0);
    let steps = 12;
    let point = |k: usize| {
        let a = start + sweep * k as f64 / steps as f64;
        (centre.0 + radius * a.cos(), centre.1 + radius * a.sin())
    };
    for k in 0..steps {
        draw_segment(tex, point(k), point(k + 1), width, intensity);
    }
    for _ in 0..rng.random_range(1..=3) {
        let p = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        draw_segment(tex, p, p, rng.random_range(1.0..2.0), intensity);
    }
}

/// One procedural scratch in a fresh single-channel texture.
pub fn scratch_texture(
    width: usize,
    height: usize,
    style: TextureStyle,
    rng: &mut ChaCha8Rng,
) -> Image {
    let mut tex = Image::filled(width, height, 1, 0.0);
    match style {
        TextureStyle::Standard => standard_scratch(&mut tex, rng),
        TextureStyle::HeldOut => held_out_scratch(&mut tex, rng),
    }
    tex
}

/// Zeroes faint texture values so that blending leaves those pixels untouched.
pub fn floor_texture(mut tex: Image) -> Image {
    tex.data_mut().iter_mut().for_each(|v| {
        if *v < SCRATCH_FLOOR {
            *v = 0.0
        }
    });
    tex
}

/// Aged-paper fill revealed by holes: a base tone with low-frequency mottling.
pub fn paper_texture(
    width: usize,
    height: usize,
    channels: usize,
    style: TextureStyle,
    rng: &mut ChaCha8Rng,
) -> Result<Image> {
    let base: [f64; 3] = match style {
        TextureStyle::Standard => [0.86, 0.80, 0.68],
        TextureStyle::HeldOut => [0.93, 0.91, 0.86],
    };
    let noise = (0..width * height)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mottle = gaussian_blur(&Image::new(width, height, 1, noise)?, 1.5)?;
    let mut out = Image::filled(width, height, channels, 0.0);
    let grey = base.iter().sum::<f64>() / 3.0;
    for y in 0..height {
        for x in 0..width {
            let m = 0.12 * mottle.get(x, y, 0);
            for c in 0..channels {
                let tone = if channels == 3 { base[c] } else { grey };
                out.set(x, y, c, (tone + m).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Loads a user-supplied scratch texture; colour input is averaged to grey.
pub fn load_texture(path: &Path) -> Result<Image> {
    Ok(crate::io::read_png(path)?.luminance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn scratches_are_thin_and_in_range() {
        for style in [TextureStyle::Standard, TextureStyle::HeldOut] {
            for seed in 0..20 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t = floor_texture(scratch_texture(32, 32, style, &mut rng));
                assert!(t.in_unit_range());
                let lit = t.data().iter().filter(|&&v| v > 0.0).count();
                assert!(lit < 32 * 32 / 4, "{style:?} seed {seed}: {lit} lit pixels");
            }
        }
    }

    #[test]
    fn segment_distance_matches_geometry() {
        assert_eq!(segment_distance(0.0, 1.0, (0.0, 0.0), (2.0, 0.0)), 1.0);
        assert_eq!(segment_distance(3.0, 0.0, (0.0, 0.0), (2.0, 0.0)), 1.0);
        assert_eq!(segment_distance(1.0, 1.0, (1.0, 1.0), (1.0, 1.0)), 0.0);
    }
}
