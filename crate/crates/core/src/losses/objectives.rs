//! Composite per-player objectives for the two training stages.
//!
//! A training step records the generator forward once, scores it with the
//! discriminators to get their losses, updates them, then rebinds the
//! updated discriminators on the same tape for the generator-side losses.
//! The `*_objective` helpers run all of it against a single binding.

use super::{feature_matching, kl_loss, latent_adv_loss, lsgan_d, lsgan_g, recon_l1, LossWeights};
use crate::error::Result;
use crate::nets::{Bound, ImageDisc, LatentCode, LatentDisc, Mapping, Noise, Vae};
use crate::tensor::{Tape, Tensor, Var};

fn weighted_sum(tape: &mut Tape, parts: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in parts {
        let term = tape.scale(v, w);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty"))
}

fn named(parts: &[(&str, Var)]) -> Vec<(String, Var)> {
    parts.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// One VAE pass over a single-domain batch.
pub struct VaeForward {
    pub input: Var,
    pub code: LatentCode,
    pub rec: Var,
}

pub fn vae_forward(
    tape: &mut Tape,
    vae: (&Vae, &Bound),
    x: Var,
    noise: Noise,
) -> Result<VaeForward> {
    let code = vae.0.encode(tape, vae.1, x, noise)?;
    let rec = vae.0.decode(tape, vae.1, code.z)?;
    Ok(VaeForward {
        input: x,
        code,
        rec,
    })
}

/// LSGAN discriminator loss on the input vs the detached reconstruction.
pub fn vae_disc_loss(tape: &mut Tape, disc: (&ImageDisc, &Bound), fwd: &VaeForward) -> Result<Var> {
    let real = disc.0.forward(tape, disc.1, fwd.input)?;
    let rec = tape.detach(fwd.rec);
    let fake = disc.0.forward(tape, disc.1, rec)?;
    lsgan_d(tape, real.score, fake.score)
}

/// `kl·KL + α·L1(G(E(x)), x) + gan·LSGAN_G` and its unweighted terms.
pub fn vae_gen_loss(
    tape: &mut Tape,
    disc: (&ImageDisc, &Bound),
    fwd: &VaeForward,
    weights: &LossWeights,
) -> Result<(Var, Vec<(String, Var)>)> {
    let kl = kl_loss(tape, fwd.code.mu, fwd.code.logvar)?;
    let l1 = recon_l1(tape, fwd.rec, fwd.input)?;
    let fake = disc.0.forward(tape, disc.1, fwd.rec)?;
    let gan = lsgan_g(tape, fake.score);
    let eg = weighted_sum(
        tape,
        &[(weights.kl, kl), (weights.alpha, l1), (weights.gan, gan)],
    )?;
    Ok((eg, named(&[("kl", kl), ("l1", l1), ("gan_g", gan)])))
}

/// Scalars of one VAE objective on a single domain batch.
pub struct VaeLosses {
    /// Encoder/generator side.
    pub eg: Var,
    /// Image discriminator side.
    pub disc: Var,
    pub mu: Var,
    pub terms: Vec<(String, Var)>,
}

/// The full single-domain VAE objective with one discriminator binding.
pub fn vae_objective(
    tape: &mut Tape,
    vae: (&Vae, &Bound),
    disc: (&ImageDisc, &Bound),
    x: Var,
    noise: Noise,
    weights: &LossWeights,
) -> Result<VaeLosses> {
    let fwd = vae_forward(tape, vae, x, noise)?;
    let d = vae_disc_loss(tape, disc, &fwd)?;
    let (eg, mut terms) = vae_gen_loss(tape, disc, &fwd, weights)?;
    terms.push(("gan_d".into(), d));
    Ok(VaeLosses {
        eg,
        disc: d,
        mu: fwd.code.mu,
        terms,
    })
}

/// VAE₁ passes over a real batch `r` and a synthetic batch `x`.
pub struct Vae1Forward {
    pub r: VaeForward,
    pub x: VaeForward,
}

pub fn vae1_forward(
    tape: &mut Tape,
    vae: (&Vae, &Bound),
    r: Var,
    x: Var,
    noise_r: Noise,
    noise_x: Noise,
) -> Result<Vae1Forward> {
    Ok(Vae1Forward {
        r: vae_forward(tape, vae, r, noise_r)?,
        x: vae_forward(tape, vae, x, noise_x)?,
    })
}

/// `(image, latent)` discriminator losses; the latent one is weighted by
/// `latent_adv` and sees detached means.
pub fn vae1_disc_losses(
    tape: &mut Tape,
    disc: (&ImageDisc, &Bound),
    latent_disc: (&LatentDisc, &Bound),
    fwd: &Vae1Forward,
    weights: &LossWeights,
) -> Result<(Var, Var)> {
    let dr = vae_disc_loss(tape, disc, &fwd.r)?;
    let dx = vae_disc_loss(tape, disc, &fwd.x)?;
    let image = tape.add(dr, dx)?;
    let mu_x = tape.detach(fwd.x.code.mu);
    let mu_r = tape.detach(fwd.r.code.mu);
    let s_x = latent_disc.0.forward(tape, latent_disc.1, mu_x)?;
    let s_r = latent_disc.0.forward(tape, latent_disc.1, mu_r)?;
    let (d_adv, _) = latent_adv_loss(tape, s_x, s_r)?;
    let latent = tape.scale(d_adv, weights.latent_adv);
    Ok((image, latent))
}

/// Encoder/generator side of the VAE₁ objective: both domain objectives
/// plus `latent_adv` times the encoder's swapped-target latent loss.
pub fn vae1_gen_loss(
    tape: &mut Tape,
    disc: (&ImageDisc, &Bound),
    latent_disc: (&LatentDisc, &Bound),
    fwd: &Vae1Forward,
    weights: &LossWeights,
) -> Result<(Var, Vec<(String, Var)>)> {
    let (er, tr) = vae_gen_loss(tape, disc, &fwd.r, weights)?;
    let (ex, tx) = vae_gen_loss(tape, disc, &fwd.x, weights)?;
    let s_x = latent_disc.0.forward(tape, latent_disc.1, fwd.x.code.mu)?;
    let s_r = latent_disc.0.forward(tape, latent_disc.1, fwd.r.code.mu)?;
    let (_, e_adv) = latent_adv_loss(tape, s_x, s_r)?;
    let eg = weighted_sum(tape, &[(1.0, er), (1.0, ex), (weights.latent_adv, e_adv)])?;
    let mut terms: Vec<(String, Var)> = Vec::new();
    for (prefix, part) in [("r", tr), ("x", tx)] {
        terms.extend(part.into_iter().map(|(k, v)| (format!("{prefix}.{k}"), v)));
    }
    terms.push(("lat.e".into(), e_adv));
    Ok((eg, terms))
}

pub struct Vae1Losses {
    pub eg: Var,
    /// Image discriminator side, summed over both domains.
    pub disc_image: Var,
    /// Latent discriminator side.
    pub disc_latent: Var,
    pub mu_r: Var,
    pub mu_x: Var,
    pub terms: Vec<(String, Var)>,
}

/// The full VAE₁ objective with one binding per discriminator.
#[allow(clippy::too_many_arguments)]
pub fn vae1_objective(
    tape: &mut Tape,
    vae: (&Vae, &Bound),
    disc: (&ImageDisc, &Bound),
    latent_disc: (&LatentDisc, &Bound),
    r: Var,
    x: Var,
    noise_r: Noise,
    noise_x: Noise,
    weights: &LossWeights,
) -> Result<Vae1Losses> {
    let fwd = vae1_forward(tape, vae, r, x, noise_r, noise_x)?;
    let (disc_image, disc_latent) = vae1_disc_losses(tape, disc, latent_disc, &fwd, weights)?;
    let (eg, mut terms) = vae1_gen_loss(tape, disc, latent_disc, &fwd, weights)?;
    terms.push(("img.d".into(), disc_image));
    terms.push(("lat.d".into(), disc_latent));
    Ok(Vae1Losses {
        eg,
        disc_image,
        disc_latent,
        mu_r: fwd.r.code.mu,
        mu_x: fwd.x.code.mu,
        terms,
    })
}

/// Frozen inputs for one mapping step.
pub struct MappingBatch<'a> {
    /// `E_X(x).mu`, `[N, C_z, h, w]`.
    pub z_x: &'a Tensor,
    /// `E_Y(y).mu`, the latent target.
    pub z_y: &'a Tensor,
    /// `G_Y(E_Y(y).mu)`, the clean reconstruction used as the real sample.
    pub y_rec: &'a Tensor,
    /// Latent-resolution defect mask `[N, 1, h, w]`.
    pub mask: &'a Tensor,
}

pub struct MappingForward {
    pub mapped: Var,
    pub restored: Var,
    pub target: Var,
    pub real: Var,
}

/// `T(z_x)` decoded through the frozen `G_Y` (bind it with
/// `trainable = false`).
pub fn mapping_forward(
    tape: &mut Tape,
    mapping: (&Mapping, &Bound),
    vae2: (&Vae, &Bound),
    batch: &MappingBatch,
) -> Result<MappingForward> {
    let zx = tape.constant(batch.z_x.clone());
    let target = tape.constant(batch.z_y.clone());
    let real = tape.constant(batch.y_rec.clone());
    let mapped = mapping.0.forward(tape, mapping.1, zx, batch.mask)?.fused;
    let restored = vae2.0.decode(tape, vae2.1, mapped)?;
    Ok(MappingForward {
        mapped,
        restored,
        target,
        real,
    })
}

pub fn mapping_disc_loss(
    tape: &mut Tape,
    disc: (&ImageDisc, &Bound),
    fwd: &MappingForward,
) -> Result<Var> {
    let real = disc.0.forward(tape, disc.1, fwd.real)?;
    let restored = tape.detach(fwd.restored);
    let fake = disc.0.forward(tape, disc.1, restored)?;
    lsgan_d(tape, real.score, fake.score)
}

/// `λ1·|T(z_x) - z_y| + gan·LSGAN_G + λ2·FM`.
pub fn mapping_gen_loss(
    tape: &mut Tape,
    disc: (&ImageDisc, &Bound),
    fwd: &MappingForward,
    weights: &LossWeights,
) -> Result<(Var, Vec<(String, Var)>)> {
    let l1 = recon_l1(tape, fwd.mapped, fwd.target)?;
    let fake = disc.0.forward(tape, disc.1, fwd.restored)?;
    let real = disc.0.forward(tape, disc.1, fwd.real)?;
    let gan = lsgan_g(tape, fake.score);
    let real_acts: Vec<Var> = real.activations.iter().map(|&a| tape.detach(a)).collect();
    let fm = feature_matching(tape, &fake.activations, &real_acts)?;
    let generator = weighted_sum(
        tape,
        &[
            (weights.lambda1, l1),
            (weights.gan, gan),
            (weights.lambda2, fm),
        ],
    )?;
    Ok((generator, named(&[("l1", l1), ("gan_g", gan), ("fm", fm)])))
}

pub struct MappingLosses {
    pub generator: Var,
    pub disc: Var,
    pub mapped: Var,
    pub restored: Var,
    pub terms: Vec<(String, Var)>,
}

/// The full mapping objective with one discriminator binding.
pub fn mapping_loss(
    tape: &mut Tape,
    mapping: (&Mapping, &Bound),
    vae2: (&Vae, &Bound),
    disc: (&ImageDisc, &Bound),
    batch: &MappingBatch,
    weights: &LossWeights,
) -> Result<MappingLosses> {
    let fwd = mapping_forward(tape, mapping, vae2, batch)?;
    let d = mapping_disc_loss(tape, disc, &fwd)?;
    let (generator, mut terms) = mapping_gen_loss(tape, disc, &fwd, weights)?;
    terms.push(("gan_d".into(), d));
    Ok(MappingLosses {
        generator,
        disc: d,
        mapped: fwd.mapped,
        restored: fwd.restored,
        terms,
    })
}
