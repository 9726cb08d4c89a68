use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::degrade::{
    derive_seed, shapes_corpus, synthesize_pair, DegradedPair, Recipe, RecipeRange,
};
use crate::error::{Error, Result};
use crate::image::{DefectMask, Image};
use crate::tensor::Tensor;

/// Degrades `clean[i]` with a recipe drawn from `range` under
/// `derive_seed(seed, i)`.
pub fn degrade_all(clean: &[Image], range: &RecipeRange, seed: u64) -> Result<Vec<DegradedPair>> {
    clean
        .iter()
        .enumerate()
        .map(|(i, img)| synthesize_pair(img, &range.sample(derive_seed(seed, i as u64))?))
        .collect()
}

/// Procedural triplet data: `pairs` are synthetic degradations of clean
/// images (domains X and Y); `real` degrades a disjoint clean corpus with
/// the pseudo-real range (domain R, its clean images unused in training).
#[derive(Clone, Debug, PartialEq)]
pub struct ToyData {
    pub pairs: Vec<DegradedPair>,
    pub real: Vec<DegradedPair>,
}

impl ToyData {
    pub fn generate(
        count: usize,
        size: usize,
        channels: usize,
        seed: u64,
        synthetic: &RecipeRange,
        real: &RecipeRange,
    ) -> Result<ToyData> {
        let clean_xy = shapes_corpus(count, size, channels, derive_seed(seed, 11));
        let clean_r = shapes_corpus(count, size, channels, derive_seed(seed, 12));
        Ok(ToyData {
            pairs: degrade_all(&clean_xy, synthetic, derive_seed(seed, 13))?,
            real: degrade_all(&clean_r, real, derive_seed(seed, 14))?,
        })
    }

    /// Default toy data: synthetic X and pseudo-real R recipes.
    pub fn standard(count: usize, size: usize, seed: u64) -> Result<ToyData> {
        ToyData::generate(
            count,
            size,
            3,
            seed,
            &RecipeRange::synthetic(),
            &RecipeRange::pseudo_real(),
        )
    }

    /// Splits off the last `held_out` items of both domains.
    pub fn split(mut self, held_out: usize) -> Result<(ToyData, ToyData)> {
        if held_out > self.pairs.len() || held_out > self.real.len() {
            return Err(Error::Parameter(format!(
                "cannot hold out {held_out} items"
            )));
        }
        let tp = self.pairs.split_off(self.pairs.len() - held_out);
        let tr = self.real.split_off(self.real.len() - held_out);
        Ok((
            self,
            ToyData {
                pairs: tp,
                real: tr,
            },
        ))
    }

    pub fn clean(&self) -> Vec<Image> {
        self.pairs.iter().map(|p| p.clean.clone()).collect()
    }

    pub fn degraded(&self) -> Vec<Image> {
        self.pairs.iter().map(|p| p.degraded.clone()).collect()
    }

    pub fn real_degraded(&self) -> Vec<Image> {
        self.real.iter().map(|p| p.degraded.clone()).collect()
    }
}

/// `count` indices drawn with replacement.
pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..len)).collect()
}

/// Top-left corner of a random `crop`-sized window, on a multiple of `align`.
pub fn crop_origin(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    crop: usize,
    align: usize,
) -> Result<(usize, usize)> {
    if crop > width || crop > height {
        return Err(Error::Parameter(format!(
            "crop {crop} exceeds image {width}x{height}"
        )));
    }
    let ox = rng.random_range(0..=(width - crop) / align) * align;
    let oy = rng.random_range(0..=(height - crop) / align) * align;
    Ok((ox, oy))
}

/// One of the eight flips and quarter turns of a square image: bit 0 flips
/// x, bit 1 flips y, bit 2 transposes.
pub fn dihedral(img: &Image, k: u8) -> Result<Image> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    if w != h && k & 4 == 4 {
        return Err(Error::shape(
            "dihedral",
            format!("cannot transpose {w}x{h} in place"),
        ));
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (x, y);
            if k & 1 == 1 {
                sx = w - 1 - sx;
            }
            if k & 2 == 2 {
                sy = h - 1 - sy;
            }
            if k & 4 == 4 {
                std::mem::swap(&mut sx, &mut sy);
            }
            for ch in 0..c {
                out.set(x, y, ch, img.get(sx, sy, ch));
            }
        }
    }
    Ok(out)
}

/// [`dihedral`] applied to a defect mask.
pub fn dihedral_mask(mask: &DefectMask, k: u8) -> Result<DefectMask> {
    let (w, h) = (mask.width(), mask.height());
    let img = dihedral(&Image::new(w, h, 1, mask.alpha().to_vec())?, k)?;
    DefectMask::from_alpha(w, h, img.data().to_vec())
}

/// The pairs followed by `extra` fresh degradations of each clean image,
/// made by re-seeding its recipe (new scratches, holes and grain at the
/// same fade, blur and grain levels).
pub fn reseeded_pairs(pairs: &[DegradedPair], extra: usize) -> Result<Vec<DegradedPair>> {
    let mut out = pairs.to_vec();
    for j in 1..=extra as u64 {
        for p in pairs {
            let recipe = Recipe {
                seed: derive_seed(p.recipe.seed, j),
                ..p.recipe.clone()
            };
            out.push(synthesize_pair(&p.clean, &recipe)?);
        }
    }
    Ok(out)
}

/// The pairs themselves, followed by their other flips and quarter turns
/// when `augment` is set. Quarter turns are skipped for non-square images.
pub fn dihedral_pairs(pairs: &[DegradedPair], augment: bool) -> Result<Vec<DegradedPair>> {
    let mut out = pairs.to_vec();
    if augment {
        let square = pairs.iter().all(|p| p.clean.width() == p.clean.height());
        for k in 1..if square { 8 } else { 4 } {
            for p in pairs {
                out.push(DegradedPair {
                    clean: dihedral(&p.clean, k)?,
                    degraded: dihedral(&p.degraded, k)?,
                    mask: dihedral_mask(&p.mask, k)?,
                    recipe: p.recipe.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Stacks random crops of `images[idx]` into `[N, C, crop, crop]`, each
/// under a random [`dihedral`] transform when `augment` is set.
pub fn image_batch(
    images: &[Image],
    idx: &[usize],
    crop: usize,
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let crops: Vec<Tensor> = idx
        .iter()
        .map(|&i| {
            let img = &images[i];
            let (ox, oy) = crop_origin(rng, img.width(), img.height(), crop, 1)?;
            let mut c = img.crop(ox, oy, crop, crop)?;
            if augment {
                c = dihedral(&c, rng.random_range(0..8))?;
            }
            Ok(c.to_tensor())
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&crops)
}

/// `[N, 1, H, W]` binary targets.
pub fn mask_batch(masks: &[&DefectMask]) -> Result<Tensor> {
    let ts: Vec<Tensor> = masks.iter().map(|m| m.to_tensor()).collect();
    Tensor::stack(&ts)
}

/// Every spatial position of a `[N, C, h, w]` tensor as a length-`C`
/// vector, `N·h·w` in total.
pub fn position_vectors(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (n, c, h, w) = t.dims4("position_vectors")?;
    let d = t.data();
    let mut out = Vec::with_capacity(n * h * w);
    for s in 0..n {
        for p in 0..h * w {
            out.push((0..c).map(|ch| d[(s * c + ch) * h * w + p]).collect());
        }
    }
    Ok(out)
}
