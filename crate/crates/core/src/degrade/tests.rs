use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::metrics::{psnr, sliced_wasserstein};

fn rgb(w: usize, h: usize, v: f64) -> Image {
    Image::filled(w, h, 3, v)
}

fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * c).map(|_| rng.random::<f64>()).collect();
    Image::new(w, h, c, data).unwrap()
}

#[test]
fn blend_examples() {
    let img = rgb(2, 1, 0.5);
    let zero = Image::filled(2, 1, 1, 0.0);
    for mode in BlendMode::ALL {
        assert_eq!(blend_scratch(&img, &zero, mode, 0.8).unwrap(), img);
    }
    let half = Image::filled(2, 1, 1, 0.5);
    let s = blend_scratch(&img, &half, BlendMode::Screen, 1.0).unwrap();
    assert!(s.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));

    let bright = rgb(1, 1, 0.9);
    let t = Image::filled(1, 1, 1, 0.3);
    let a = blend_scratch(&bright, &t, BlendMode::Addition, 1.0).unwrap();
    assert_eq!(a.data(), &[1.0, 1.0, 1.0]);

    // Lighten-only: max(c, o*tex + (1 - o) c).
    let dark = rgb(1, 1, 0.2);
    let tex = Image::filled(1, 1, 1, 0.9);
    let l = blend_scratch(&dark, &tex, BlendMode::LightenOnly, 0.5).unwrap();
    assert!((l.get(0, 0, 0) - 0.55).abs() < 1e-15);
    let light = blend_scratch(&rgb(1, 1, 0.95), &tex, BlendMode::LightenOnly, 0.5).unwrap();
    assert_eq!(light.get(0, 0, 0), 0.95);

    assert!(blend_scratch(&img, &half, BlendMode::Screen, 1.2).is_err());
    assert!(blend_scratch(&img, &half, BlendMode::Screen, -0.1).is_err());
}

#[test]
fn elastic_examples() {
    let tex = random_image(16, 16, 1, 1);
    assert_eq!(elastic_distort(&tex, 0.0, 3.0, 9).unwrap(), tex);
    let flat = Image::filled(16, 16, 1, 0.37);
    let warped = elastic_distort(&flat, 3.0, 2.0, 9).unwrap();
    assert!(warped.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
}

#[test]
fn elastic_preserves_mean() {
    for seed in 0..100 {
        let tex = random_image(64, 64, 1, 1000 + seed);
        let amp = 1.0 + 3.0 * (seed % 4) as f64 / 3.0;
        let sigma = 2.0 + (seed % 3) as f64;
        let out = elastic_distort(&tex, amp, sigma, seed).unwrap();
        let m0 = tex.data().iter().sum::<f64>() / 4096.0;
        let m1 = out.data().iter().sum::<f64>() / 4096.0;
        assert!(((m1 - m0) / m0).abs() < 0.02, "seed {seed}: {m0} -> {m1}");
    }
}

#[test]
fn hole_examples() {
    let img = rgb(16, 16, 0.2);
    let paper = rgb(16, 16, 0.8);
    let (out, mask) = punch_hole(&img, &paper, (8.0, 8.0), 4.0, 0.0, 3).unwrap();
    assert!(mask.alpha().iter().all(|&a| a == 0.0 || a == 1.0));
    assert_eq!(mask.alpha()[8 * 16 + 8], 1.0);
    for y in 0..16 {
        for x in 0..16 {
            let expect = if mask.is_set(x, y) { 0.8 } else { 0.2 };
            assert_eq!(out.get(x, y, 0), expect);
        }
    }

    let (_, feathered) = punch_hole(&img, &paper, (8.0, 8.0), 4.0, 2.0, 3).unwrap();
    assert_eq!(feathered.alpha()[8 * 16 + 8], 1.0);
    for y in 0..16 {
        for x in 0..16 {
            let d = ((x as f64 - 8.0).powi(2) + (y as f64 - 8.0).powi(2)).sqrt();
            if d >= 6.0 {
                assert_eq!(feathered.alpha()[y * 16 + x], 0.0);
            }
        }
    }

    let (same, m) = punch_hole(&img, &img, (8.0, 8.0), 4.0, 1.0, 3).unwrap();
    assert_eq!(same, img);
    assert!(m.count() > 0);

    let (outside, empty) = punch_hole(&img, &paper, (-40.0, -40.0), 4.0, 1.0, 3).unwrap();
    assert_eq!(outside, img);
    assert_eq!(empty.count(), 0);
    assert!(punch_hole(&img, &paper, (8.0, 8.0), 0.0, 1.0, 3).is_err());
}

#[test]
fn grain_examples() {
    let img = rgb(8, 8, 0.5);
    assert_eq!(add_grain(&img, 0.0, 1).unwrap(), img);
    let grey = Image::filled(64, 64, 1, 0.5);
    let out = add_grain(&grey, 0.1, 77).unwrap();
    let diffs: Vec<f64> = out.data().iter().map(|v| v - 0.5).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((std - 0.1).abs() < 0.01, "std {std}");
}

#[test]
fn blur_examples() {
    let img = random_image(9, 9, 3, 4);
    assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
    let flat = rgb(9, 9, 0.3);
    let b = gaussian_blur(&flat, 1.3).unwrap();
    assert!(b.data().iter().all(|&v| (v - 0.3).abs() < 1e-14));

    let sigma = 1.0;
    let mut impulse = Image::filled(15, 15, 1, 0.0);
    impulse.set(7, 7, 0, 1.0);
    let resp = gaussian_blur(&impulse, sigma).unwrap();
    // Direct kernel evaluation, truncated at ceil(3 sigma) = 3.
    let taps: Vec<f64> = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let total: f64 = resp.data().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for y in 0..15 {
        for x in 0..15 {
            let (dx, dy) = (x as i32 - 7, y as i32 - 7);
            let expect = if dx.abs() <= 3 && dy.abs() <= 3 {
                taps[(dx + 3) as usize] * taps[(dy + 3) as usize] / (norm * norm)
            } else {
                0.0
            };
            assert!((resp.get(x, y, 0) - expect).abs() < 1e-15);
            assert_eq!(resp.get(x, y, 0), resp.get(14 - x, y, 0));
            assert_eq!(resp.get(x, y, 0), resp.get(x, 14 - y, 0));
        }
    }
}

#[test]
fn fade_examples() {
    let img = random_image(4, 4, 3, 2);
    assert_eq!(fade(&img, 0.0).unwrap(), img);
    let mid = rgb(1, 1, 0.5);
    let out = fade(&mid, 1.0).unwrap();
    let rows = [
        [0.393, 0.769, 0.189],
        [0.349, 0.686, 0.168],
        [0.272, 0.534, 0.131],
    ];
    for (c, row) in rows.iter().enumerate() {
        let toned: f64 = row.iter().map(|k| k * 0.5).sum::<f64>().min(1.0);
        let expect = 0.5 + 0.6 * (toned - 0.5);
        assert!((out.get(0, 0, c) - expect).abs() < 1e-15);
    }
    let g = Image::filled(2, 2, 1, 0.5);
    assert_eq!(fade(&g, 1.0).unwrap(), g);
    assert!(fade(&img, 1.5).is_err());
}

#[test]
fn identity_recipe_is_identity() {
    let clean = shape_image(32, 3, 1);
    let pair = synthesize_pair(&clean, &Recipe::identity(5)).unwrap();
    assert_eq!(pair.degraded, clean);
    assert_eq!(pair.mask.count(), 0);
}

#[test]
fn pairs_are_deterministic() {
    let clean = shape_image(32, 3, 1);
    let recipe = RecipeRange::synthetic().sample(12).unwrap();
    assert_eq!(
        synthesize_pair(&clean, &recipe).unwrap(),
        synthesize_pair(&clean, &recipe).unwrap()
    );
    let r = RecipeRange::pseudo_real().sample(12).unwrap();
    assert_eq!(
        make_domain_r(&clean, &r).unwrap(),
        make_domain_r(&clean, &r).unwrap()
    );
}

#[test]
fn default_recipe_psnr_bound() {
    let corpus = shapes_corpus(32, 32, 3, 21);
    let mut total = 0.0;
    for (i, clean) in corpus.iter().enumerate() {
        let recipe = RecipeRange::synthetic()
            .sample(derive_seed(99, i as u64))
            .unwrap();
        let pair = synthesize_pair(clean, &recipe).unwrap();
        total += psnr(&pair.clean, &pair.degraded, 1.0).unwrap();
    }
    let mean = total / corpus.len() as f64;
    assert!(mean < 25.0, "mean degraded PSNR {mean}");
}

fn pixel_stats(images: &[Image]) -> Vec<Vec<f64>> {
    images
        .iter()
        .flat_map(|img| img.data().chunks(3).map(|p| p.to_vec()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn domain_gap_tracks_recipe_ranges() {
    let corpus = shapes_corpus(12, 32, 3, 8);
    let degrade_all = |range: &RecipeRange, base: u64| -> Vec<Image> {
        corpus
            .iter()
            .enumerate()
            .map(|(i, c)| {
                make_domain_r(c, &range.sample(derive_seed(base, i as u64)).unwrap()).unwrap()
            })
            .collect()
    };
    let x = pixel_stats(&degrade_all(&RecipeRange::synthetic(), 1));
    let x2 = pixel_stats(&degrade_all(&RecipeRange::synthetic(), 2));
    let r = pixel_stats(&degrade_all(&RecipeRange::pseudo_real(), 3));
    let same = sliced_wasserstein(&x, &x2, 32, 0).unwrap();
    let gap = sliced_wasserstein(&x, &r, 32, 0).unwrap();
    assert!(gap > 0.0);
    assert!(same < 0.02, "control gap {same}");
    assert!(gap > 3.0 * same, "gap {gap} vs control {same}");
}

#[test]
fn recipe_validation() {
    let mut r = Recipe::identity(0);
    r.opacity_range = (0.8, 0.2);
    assert!(r.validate().is_err());
    let mut r = Recipe::identity(0);
    r.fade = 1.5;
    assert!(r.validate().is_err());
    let mut range = RecipeRange::synthetic();
    range.scratch_count = (3, 1);
    assert!(range.sample(0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_in_range_and_mask_covers_structured_damage(seed in any::<u64>(), img_seed in 0u64..1000) {
        let clean = shape_image(24, 3, img_seed);
        let mut recipe = RecipeRange::synthetic().sample(seed).unwrap();
        recipe.feather_radius = 0.0;
        recipe.hole_count = 1;
        let pair = synthesize_pair(&clean, &recipe).unwrap();
        prop_assert!(pair.degraded.in_unit_range());
        prop_assert!(pair.mask.alpha().iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(pair.mask.binary().iter().all(|&b| b <= 1));

        // Same seeds with structured defects removed: fade, blur and grain only.
        let mut plain = recipe.clone();
        plain.scratch_count = 0;
        plain.hole_count = 0;
        let base = synthesize_pair(&clean, &plain).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                for c in 0..3 {
                    if pair.degraded.get(x, y, c) != base.degraded.get(x, y, c) {
                        prop_assert!(pair.mask.is_set(x, y), "unmasked change at ({x}, {y})");
                    }
                }
            }
        }
    }

    #[test]
    fn blends_stay_in_range(c in 0.0f64..=1.0, t in 0.0f64..=1.0, o in 0.0f64..=1.0) {
        let img = rgb(1, 1, c);
        let tex = Image::filled(1, 1, 1, t);
        for mode in BlendMode::ALL {
            let v = blend_scratch(&img, &tex, mode, o).unwrap().get(0, 0, 0);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(v >= c - 1e-15, "blends only lighten");
        }
    }
}
