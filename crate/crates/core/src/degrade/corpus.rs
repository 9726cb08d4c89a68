//! Procedural clean images: gradients, flat shapes and block glyphs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, rng_for};
use crate::image::Image;

// 3x5 digit bitmaps, one row per nibble (bit 2 = left column).
const GLYPHS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 3, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 2, 2, 2],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Triangle {
        p: [(f64, f64); 3],
    },
    Glyph {
        digit: usize,
        x0: f64,
        y0: f64,
        cell: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Triangle { p } => {
                let edge = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let (d0, d1, d2) = (edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
            Shape::Glyph {
                digit,
                x0,
                y0,
                cell,
            } => {
                let gx = ((x - x0) / cell).floor();
                let gy = ((y - y0) / cell).floor();
                if !(0.0..3.0).contains(&gx) || !(0.0..5.0).contains(&gy) {
                    return false;
                }
                GLYPHS[digit][gy as usize] >> (2 - gx as usize) & 1 == 1
            }
        }
    }
}

fn random_colour(rng: &mut ChaCha8Rng, channels: usize) -> [f64; 3] {
    if channels == 1 {
        let v = rng.random_range(0.05..0.95);
        [v; 3]
    } else {
        [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ]
    }
}

fn random_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    match rng.random_range(0..4) {
        0 => Shape::Disc {
            cx: rng.random_range(0.0..size),
            cy: rng.random_range(0.0..size),
            r: rng.random_range(0.12..0.3) * size,
        },
        1 => {
            let (x0, y0) = (
                rng.random_range(-0.1..0.7) * size,
                rng.random_range(-0.1..0.7) * size,
            );
            Shape::Rect {
                x0,
                y0,
                x1: x0 + rng.random_range(0.2..0.5) * size,
                y1: y0 + rng.random_range(0.2..0.5) * size,
            }
        }
        2 => {
            let mut corner = || (rng.random_range(0.0..size), rng.random_range(0.0..size));
            Shape::Triangle {
                p: [corner(), corner(), corner()],
            }
        }
        _ => {
            let cell = (size / 10.0).max(1.0).floor() * rng.random_range(1.0..1.5);
            Shape::Glyph {
                digit: rng.random_range(0..10),
                x0: rng.random_range(0.0..(size - 3.0 * cell).max(1.0)),
                y0: rng.random_range(0.0..(size - 5.0 * cell).max(1.0)),
                cell,
            }
        }
    }
}

/// One clean `size × size` image. Edges are antialiased by 2×2 supersampling.
pub fn shape_image(size: usize, channels: usize, seed: u64) -> Image {
    let mut rng = rng_for(seed, 0);
    let s = size as f64;
    let top = random_colour(&mut rng, channels);
    let bottom = random_colour(&mut rng, channels);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let count = rng.random_range(2..=4);
    let shapes: Vec<(Shape, [f64; 3])> = (0..count)
        .map(|_| (random_shape(&mut rng, s), random_colour(&mut rng, channels)))
        .collect();

    let mut img = Image::filled(size, size, channels, 0.0);
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sub in 0..4 {
                let px = x as f64 + 0.25 + 0.5 * (sub % 2) as f64;
                let py = y as f64 + 0.25 + 0.5 * (sub / 2) as f64;
                // Gradient parameter in [0, 1] along the random direction.
                let t = (((px / s - 0.5) * gx + (py / s - 0.5) * gy) / std::f64::consts::SQRT_2
                    + 0.5)
                    .clamp(0.0, 1.0);
                let mut colour = [0.0; 3];
                for c in 0..3 {
                    colour[c] = (1.0 - t) * top[c] + t * bottom[c];
                }
                for (shape, fill) in &shapes {
                    if shape.contains(px, py) {
                        colour = *fill;
                    }
                }
                for c in 0..3 {
                    acc[c] += colour[c] / 4.0;
                }
            }
            for c in 0..channels {
                img.set(x, y, c, acc[c].clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// `count` images with per-item seeds derived from `seed`.
pub fn shapes_corpus(count: usize, size: usize, channels: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| shape_image(size, channels, derive_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_varied() {
        let a = shapes_corpus(4, 32, 3, 9);
        let b = shapes_corpus(4, 32, 3, 9);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert!(a.iter().all(|i| i.in_unit_range()));
    }

    #[test]
    fn glyph_bitmap_lookup() {
        let one = Shape::Glyph {
            digit: 1,
            x0: 0.0,
            y0: 0.0,
            cell: 1.0,
        };
        assert!(one.contains(1.5, 0.5));
        assert!(!one.contains(0.5, 0.5));
        assert!(one.contains(0.5, 4.5));
    }
}
