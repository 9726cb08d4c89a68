//! Network definitions: the two VAEs, discriminators, latent mapping and
//! the scratch-detection U-Net.
//!
//! Parameters live in [`ParamSet`]s owned by each network; a forward pass
//! binds them onto a [`Tape`](crate::tensor::Tape) and passes the resulting
//! [`Bound`] handles back in.

mod disc;
pub mod layers;
mod mapping;
mod params;
mod unet;
mod vae;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use disc::{DiscOutput, ImageDisc, LatentDisc};
pub use mapping::{
    add_nonlocal, embed_channels, expand_mask, partial_nonlocal, Mapping, MappingOutput,
    MappingSpec, NonlocalOutput,
};
pub use params::{Bound, ParamSet};
pub use unet::{Unet, UnetSpec};
pub use vae::{reparameterize, LatentCode, Noise, Vae, VaeSpec};

use crate::degrade::derive_seed;
use crate::error::{Error, Result};
use crate::image::{DefectMask, Image};
use crate::tensor::{Tape, Tensor, Var};

/// Architecture of every network in the system.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub vae: VaeSpec,
    pub mapping: MappingSpec,
    pub disc_width: usize,
    pub latent_disc_width: usize,
    pub unet: UnetSpec,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            vae: VaeSpec::default(),
            mapping: MappingSpec::default(),
            disc_width: 8,
            latent_disc_width: 16,
            unet: UnetSpec::default(),
        }
    }
}

/// Every network, freshly initialised.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub vae1: Vae,
    pub vae2: Vae,
    pub mapping: Mapping,
    /// Image discriminator on VAE₁ reconstructions.
    pub disc1: ImageDisc,
    /// Image discriminator on VAE₂ reconstructions.
    pub disc2: ImageDisc,
    /// Latent discriminator separating `z_r` from `z_x`.
    pub disc_latent: LatentDisc,
    /// Image discriminator on restored outputs.
    pub disc_map: ImageDisc,
    pub unet: Unet,
}

impl Models {
    pub fn new(spec: &ModelSpec, seed: u64) -> Self {
        let rng = |i: u64| ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
        let c = spec.vae.channels;
        let mut mspec = spec.mapping.clone();
        mspec.latent = spec.vae.latent;
        let mut uspec = spec.unet.clone();
        uspec.channels = c;
        Models {
            vae1: Vae::new(spec.vae.clone(), &mut rng(1)),
            vae2: Vae::new(spec.vae.clone(), &mut rng(2)),
            mapping: Mapping::new(mspec, &mut rng(3)),
            disc1: ImageDisc::new(c, spec.disc_width, &mut rng(4)),
            disc2: ImageDisc::new(c, spec.disc_width, &mut rng(5)),
            disc_latent: LatentDisc::new(spec.vae.latent, spec.latent_disc_width, &mut rng(6)),
            disc_map: ImageDisc::new(c, spec.disc_width, &mut rng(7)),
            unet: Unet::new(uspec, &mut rng(8)),
        }
    }

    pub fn num_scalars(&self) -> usize {
        [
            &self.vae1.params,
            &self.vae2.params,
            &self.mapping.params,
            &self.disc1.params,
            &self.disc2.params,
            &self.disc_latent.params,
            &self.disc_map.params,
            &self.unet.params,
        ]
        .iter()
        .map(|p| p.num_scalars())
        .sum()
    }
}

/// Latent-resolution mask batch `[N, 1, h/4, w/4]` by 4×4 max-pooling.
pub fn latent_masks(masks: &[DefectMask]) -> Result<Tensor> {
    let cells: Vec<Tensor> = masks
        .iter()
        .map(|m| m.downscale_max(4).map(|d| d.to_tensor()))
        .collect::<Result<_>>()?;
    Tensor::stack(&cells)
}

/// `G_Y(T(E_X(x).mu, m))` on the tape, for a batch `x` and latent mask.
pub fn restore_graph(
    tape: &mut Tape,
    vae1: (&Vae, &Bound),
    mapping: (&Mapping, &Bound),
    vae2: (&Vae, &Bound),
    x: Var,
    latent_mask: &Tensor,
) -> Result<Var> {
    let code = vae1.0.encode(tape, vae1.1, x, Noise::Zero)?;
    let mapped = mapping.0.forward(tape, mapping.1, code.mu, latent_mask)?;
    vae2.0.decode(tape, vae2.1, mapped.fused)
}

/// Restores one image. Sizes not divisible by 4 are reflect-padded and the
/// result cropped back.
pub fn restore(
    image: &Image,
    vae1: &Vae,
    mapping: &Mapping,
    vae2: &Vae,
    mask: &DefectMask,
) -> Result<Image> {
    if image.channels() != vae1.spec.channels {
        return Err(Error::shape(
            "restore",
            format!(
                "model expects {} channels, image has {}",
                vae1.spec.channels,
                image.channels()
            ),
        ));
    }
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::shape("restore", "mask size differs from image"));
    }
    let (w, h) = (image.width(), image.height());
    let (pw, ph) = (w.div_ceil(4) * 4, h.div_ceil(4) * 4);
    let (img, msk) = if (pw, ph) == (w, h) {
        (image.clone(), mask.clone())
    } else {
        (image.pad_reflect(pw, ph), mask.pad_reflect(pw, ph))
    };
    let mut tape = Tape::new();
    let b1 = vae1.params.bind(&mut tape, false);
    let bm = mapping.params.bind(&mut tape, false);
    let b2 = vae2.params.bind(&mut tape, false);
    let x = tape.constant(img.to_tensor());
    let lm = latent_masks(std::slice::from_ref(&msk))?;
    let out = restore_graph(&mut tape, (vae1, &b1), (mapping, &bm), (vae2, &b2), x, &lm)?;
    let restored = Image::from_tensor(tape.value(out), 0)?;
    if (pw, ph) == (w, h) {
        Ok(restored)
    } else {
        restored.crop(0, 0, w, h)
    }
}

/// Per-pixel defect logits `[H·W]` for one image (row-major).
pub fn detect_logits(unet: &Unet, image: &Image) -> Result<Vec<f64>> {
    if image.channels() != unet.spec.channels {
        return Err(Error::shape(
            "detect",
            format!(
                "detector expects {} channels, image has {}",
                unet.spec.channels,
                image.channels()
            ),
        ));
    }
    let (w, h) = (image.width(), image.height());
    let (pw, ph) = (w.div_ceil(4) * 4, h.div_ceil(4) * 4);
    let padded = if (pw, ph) == (w, h) {
        image.clone()
    } else {
        image.pad_reflect(pw, ph)
    };
    let mut tape = Tape::new();
    let b = unet.params.bind(&mut tape, false);
    let x = tape.constant(padded.to_tensor());
    let out = unet.forward(&mut tape, &b, x)?;
    let d = tape.value(out).data();
    Ok((0..h)
        .flat_map(|y| (0..w).map(move |x| d[y * pw + x]))
        .collect())
}

/// Binary defect mask: sigmoid(logit) ≥ `threshold`.
pub fn detect_mask(unet: &Unet, image: &Image, threshold: f64) -> Result<DefectMask> {
    let logits = detect_logits(unet, image)?;
    let bits: Vec<bool> = logits
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z).exp()) >= threshold)
        .collect();
    DefectMask::from_binary(image.width(), image.height(), &bits)
}

#[cfg(test)]
mod tests;
