//! Old-photo degradation synthesis.
//!
//! A [`Recipe`] fully determines how a clean image is damaged. The pipeline
//! runs fade, blur, scratches, holes and grain in that order; only scratches
//! and holes contribute to the defect mask.

mod corpus;
mod ops;
mod texture;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use corpus::{shape_image, shapes_corpus};
pub use ops::{
    add_grain, blend_scratch, elastic_distort, fade, gaussian_blur, gaussian_kernel, punch_hole,
    sepia,
};
pub use texture::{floor_texture, load_texture, paper_texture, scratch_texture, SCRATCH_FLOOR};

use crate::error::{Error, Result};
use crate::image::{DefectMask, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlendMode {
    Addition,
    LightenOnly,
    Screen,
}

impl BlendMode {
    pub const ALL: [BlendMode; 3] = [
        BlendMode::Addition,
        BlendMode::LightenOnly,
        BlendMode::Screen,
    ];
}

/// Which family of procedural scratch and paper textures to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureStyle {
    Standard,
    HeldOut,
}

/// SplitMix64 finalizer over `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

// Sub-stream tags inside one recipe.
const TAG_SCRATCH: u64 = 3;
const TAG_HOLE: u64 = 4;
const TAG_GRAIN: u64 = 5;
const TAG_PAPER: u64 = 6;

/// Concrete degradation parameters for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    pub seed: u64,
    pub scratch_count: usize,
    pub blend_mode: BlendMode,
    /// Each scratch draws its opacity uniformly from this range.
    pub opacity_range: (f64, f64),
    pub hole_count: usize,
    /// Each hole draws its nominal radius uniformly from this range.
    pub hole_radius: (f64, f64),
    pub feather_radius: f64,
    pub grain_sigma: f64,
    pub blur_sigma: f64,
    pub fade: f64,
    /// Displacement amplitude and smoothing sigma, in pixels.
    pub elastic: (f64, f64),
    pub style: TextureStyle,
}

fn check_range(name: &str, r: (f64, f64), lo: f64, hi: f64) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && lo <= r.0 && r.0 <= r.1 && r.1 <= hi) {
        return Err(Error::Parameter(format!(
            "{name} range [{}, {}] must satisfy {lo} <= lo <= hi <= {hi}",
            r.0, r.1
        )));
    }
    Ok(())
}

fn check_non_negative(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Parameter(format!(
            "{name} = {v} must be non-negative"
        )));
    }
    Ok(())
}

impl Recipe {
    /// Leaves every image untouched.
    pub fn identity(seed: u64) -> Self {
        Recipe {
            seed,
            scratch_count: 0,
            blend_mode: BlendMode::Screen,
            opacity_range: (0.0, 0.0),
            hole_count: 0,
            hole_radius: (1.0, 1.0),
            feather_radius: 0.0,
            grain_sigma: 0.0,
            blur_sigma: 0.0,
            fade: 0.0,
            elastic: (0.0, 0.0),
            style: TextureStyle::Standard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("opacity", self.opacity_range, 0.0, 1.0)?;
        check_range("hole radius", self.hole_radius, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("fade", (self.fade, self.fade), 0.0, 1.0)?;
        check_non_negative("feather radius", self.feather_radius)?;
        check_non_negative("grain sigma", self.grain_sigma)?;
        check_non_negative("blur sigma", self.blur_sigma)?;
        check_non_negative("elastic amplitude", self.elastic.0)?;
        check_non_negative("elastic sigma", self.elastic.1)
    }
}

/// Distribution over recipes; [`RecipeRange::sample`] draws a concrete one.
#[derive(Clone, Debug, PartialEq)]
pub struct RecipeRange {
    pub scratch_count: (usize, usize),
    pub blend_modes: Vec<BlendMode>,
    pub opacity: (f64, f64),
    pub hole_count: (usize, usize),
    pub hole_radius: (f64, f64),
    pub feather_radius: (f64, f64),
    pub grain_sigma: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub fade: (f64, f64),
    pub elastic_amplitude: (f64, f64),
    pub elastic_sigma: f64,
    pub style: TextureStyle,
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

impl RecipeRange {
    /// Synthetic corrupted domain X.
    pub fn synthetic() -> Self {
        RecipeRange {
            scratch_count: (1, 3),
            blend_modes: BlendMode::ALL.to_vec(),
            opacity: (0.6, 1.0),
            hole_count: (0, 1),
            hole_radius: (2.5, 5.0),
            feather_radius: (0.0, 1.5),
            grain_sigma: (0.02, 0.06),
            blur_sigma: (0.3, 0.9),
            fade: (0.2, 0.55),
            elastic_amplitude: (1.0, 3.0),
            elastic_sigma: 3.0,
            style: TextureStyle::Standard,
        }
    }

    /// Pseudo-real domain R: stronger, disjoint unstructured ranges and
    /// held-out textures.
    pub fn pseudo_real() -> Self {
        RecipeRange {
            scratch_count: (2, 4),
            blend_modes: vec![BlendMode::Screen, BlendMode::LightenOnly],
            opacity: (0.7, 1.0),
            hole_count: (0, 1),
            hole_radius: (2.0, 4.5),
            feather_radius: (0.5, 2.0),
            grain_sigma: (0.07, 0.1),
            blur_sigma: (1.0, 1.4),
            fade: (0.65, 0.9),
            elastic_amplitude: (1.5, 3.5),
            elastic_sigma: 3.0,
            style: TextureStyle::HeldOut,
        }
    }

    pub fn sample(&self, seed: u64) -> Result<Recipe> {
        if self.scratch_count.0 > self.scratch_count.1 || self.hole_count.0 > self.hole_count.1 {
            return Err(Error::Parameter("count ranges must be well-ordered".into()));
        }
        if self.blend_modes.is_empty() {
            return Err(Error::Parameter(
                "at least one blend mode is required".into(),
            ));
        }
        for (name, r) in [
            ("feather radius", self.feather_radius),
            ("grain sigma", self.grain_sigma),
            ("blur sigma", self.blur_sigma),
            ("elastic amplitude", self.elastic_amplitude),
        ] {
            check_range(name, r, 0.0, f64::MAX)?;
        }
        check_range("fade", self.fade, 0.0, 1.0)?;
        let mut rng = rng_for(seed, 1);
        let recipe = Recipe {
            seed,
            scratch_count: rng.random_range(self.scratch_count.0..=self.scratch_count.1),
            blend_mode: self.blend_modes[rng.random_range(0..self.blend_modes.len())],
            opacity_range: self.opacity,
            hole_count: rng.random_range(self.hole_count.0..=self.hole_count.1),
            hole_radius: self.hole_radius,
            feather_radius: uniform(&mut rng, self.feather_radius),
            grain_sigma: uniform(&mut rng, self.grain_sigma),
            blur_sigma: uniform(&mut rng, self.blur_sigma),
            fade: uniform(&mut rng, self.fade),
            elastic: (
                uniform(&mut rng, self.elastic_amplitude),
                self.elastic_sigma,
            ),
            style: self.style,
        };
        recipe.validate()?;
        Ok(recipe)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradedPair {
    pub clean: Image,
    pub degraded: Image,
    pub mask: DefectMask,
    pub recipe: Recipe,
}

/// Runs the full degradation pipeline on `clean`.
pub fn synthesize_pair(clean: &Image, recipe: &Recipe) -> Result<DegradedPair> {
    recipe.validate()?;
    if !clean.in_unit_range() {
        return Err(Error::Parameter("clean image must lie in [0, 1]".into()));
    }
    let (w, h) = (clean.width(), clean.height());
    let mut img = fade(clean, recipe.fade)?;
    img = gaussian_blur(&img, recipe.blur_sigma)?;
    let mut mask = DefectMask::empty(w, h);

    let mut rng = rng_for(recipe.seed, TAG_SCRATCH);
    for _ in 0..recipe.scratch_count {
        let raw = scratch_texture(w, h, recipe.style, &mut rng);
        let tex = floor_texture(elastic_distort(
            &raw,
            recipe.elastic.0,
            recipe.elastic.1,
            rng.random(),
        )?);
        let opacity = uniform(&mut rng, recipe.opacity_range);
        if opacity == 0.0 {
            continue;
        }
        img = blend_scratch(&img, &tex, recipe.blend_mode, opacity)?;
        let alpha = tex
            .data()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        mask.merge(&DefectMask::from_alpha(w, h, alpha)?)?;
    }

    if recipe.hole_count > 0 {
        let paper = paper_texture(
            w,
            h,
            clean.channels(),
            recipe.style,
            &mut rng_for(recipe.seed, TAG_PAPER),
        )?;
        let mut rng = rng_for(recipe.seed, TAG_HOLE);
        for _ in 0..recipe.hole_count {
            let center = (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
            );
            let radius = uniform(&mut rng, recipe.hole_radius);
            let (next, hole) = punch_hole(
                &img,
                &paper,
                center,
                radius,
                recipe.feather_radius,
                rng.random(),
            )?;
            img = next;
            mask.merge(&hole)?;
        }
    }

    let degraded = add_grain(
        &img,
        recipe.grain_sigma,
        derive_seed(recipe.seed, TAG_GRAIN),
    )?;
    Ok(DegradedPair {
        clean: clean.clone(),
        degraded,
        mask,
        recipe: recipe.clone(),
    })
}

/// Pseudo-real sample: the same machinery with the clean pairing dropped.
pub fn make_domain_r(clean: &Image, recipe_r: &Recipe) -> Result<Image> {
    Ok(synthesize_pair(clean, recipe_r)?.degraded)
}

#[cfg(test)]
mod tests;
