//! Training objectives. Every function records onto a tape and returns a
//! scalar [`Var`]; reductions are means over batch and space.

mod objectives;

pub use objectives::{
    mapping_disc_loss, mapping_forward, mapping_gen_loss, mapping_loss, vae1_disc_losses,
    vae1_forward, vae1_gen_loss, vae1_objective, vae_disc_loss, vae_forward, vae_gen_loss,
    vae_objective, MappingBatch, MappingForward, MappingLosses, Vae1Forward, Vae1Losses,
    VaeForward, VaeLosses,
};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Loss weights for both training stages.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Reconstruction L1 weight inside the VAE objectives.
    pub alpha: f64,
    /// Latent L1 weight in the mapping loss.
    pub lambda1: f64,
    /// Feature-matching weight in the mapping loss.
    pub lambda2: f64,
    /// KL weight; 0 turns a VAE into a plain autoencoder objective.
    pub kl: f64,
    /// Image-space adversarial weight in the VAE objectives.
    pub gan: f64,
    /// Latent adversarial weight in the VAE₁ objective.
    pub latent_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 10.0,
            lambda1: 60.0,
            lambda2: 10.0,
            kl: 1.0,
            gan: 1.0,
            latent_adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("kl", self.kl),
            ("gan", self.gan),
            ("latent_adv", self.latent_adv),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!(
                    "loss weight {name} = {v} must be non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// `mean(0.5 (mu² + exp(logvar) - logvar - 1))`: KL to the unit Gaussian,
/// averaged over latent elements.
pub fn kl_loss(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let m2 = tape.square(mu);
    let ev = tape.exp(logvar);
    let a = tape.add(m2, ev)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let m = tape.mean(c);
    Ok(tape.scale(m, 0.5))
}

/// Mean absolute difference.
pub fn recon_l1(tape: &mut Tape, out: Var, target: Var) -> Result<Var> {
    let d = tape.sub(out, target)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

fn mean_sq_to(tape: &mut Tape, x: Var, target: f64) -> Var {
    let d = tape.add_scalar(x, -target);
    let s = tape.square(d);
    tape.mean(s)
}

/// Discriminator side: `E[(D(real) - 1)²] + E[D(fake)²]`.
pub fn lsgan_d(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let a = mean_sq_to(tape, d_real, 1.0);
    let b = mean_sq_to(tape, d_fake, 0.0);
    tape.add(a, b)
}

/// Generator side: `E[(D(fake) - 1)²]`.
pub fn lsgan_g(tape: &mut Tape, d_fake: Var) -> Var {
    mean_sq_to(tape, d_fake, 1.0)
}

/// Latent adversarial pair. The discriminator targets 0 on synthetic codes
/// and 1 on real ones; the encoder is trained on the swapped targets.
/// Returns `(d_loss, e_loss)`.
pub fn latent_adv_loss(tape: &mut Tape, d_on_zx: Var, d_on_zr: Var) -> Result<(Var, Var)> {
    let dx = mean_sq_to(tape, d_on_zx, 0.0);
    let dr = mean_sq_to(tape, d_on_zr, 1.0);
    let d = tape.add(dx, dr)?;
    let ex = mean_sq_to(tape, d_on_zx, 1.0);
    let er = mean_sq_to(tape, d_on_zr, 0.0);
    let e = tape.add(ex, er)?;
    Ok((d, e))
}

/// `Σ_i mean|fake_i - real_i|` over layer-aligned activation stacks.
pub fn feature_matching(tape: &mut Tape, fake: &[Var], real: &[Var]) -> Result<Var> {
    if fake.len() != real.len() || fake.is_empty() {
        return Err(Error::shape(
            "feature_matching",
            format!("{} fake layers vs {} real layers", fake.len(), real.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for (&f, &r) in fake.iter().zip(real) {
        let term = recon_l1(tape, f, r)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("at least one layer"))
}

pub const FOCAL_EPS: f64 = 1e-12;

/// Focal parameters: `FL = -α_t (1 - p_t)^γ ln(p_t + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha_pos: f64,
    pub alpha_neg: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            gamma: 2.0,
            alpha_pos: 0.25,
            alpha_neg: 0.75,
        }
    }
}

/// Mean focal loss of `logits` against a same-shaped binary `target`.
pub fn focal_loss(
    tape: &mut Tape,
    logits: Var,
    target: &Tensor,
    params: &FocalParams,
) -> Result<Var> {
    if tape.value(logits).shape() != target.shape() {
        return Err(Error::shape(
            "focal_loss",
            format!("{:?} vs {:?}", tape.value(logits).shape(), target.shape()),
        ));
    }
    if target.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Parameter("focal target must be binary".into()));
    }
    let p = tape.sigmoid(logits);
    // p_t = (1 - y) + (2y - 1) p
    let sign = tape.constant(target.map(|y| 2.0 * y - 1.0));
    let offset = tape.constant(target.map(|y| 1.0 - y));
    let sp = tape.mul(sign, p)?;
    let pt = tape.add(sp, offset)?;
    let shifted = tape.add_scalar(pt, FOCAL_EPS);
    let logp = tape.ln(shifted);
    let miss = tape.one_minus(pt);
    let focus = tape.powf(miss, params.gamma);
    let alpha =
        tape.constant(target.map(|y| -(y * params.alpha_pos + (1.0 - y) * params.alpha_neg)));
    let weighted = tape.mul(focus, logp)?;
    let per = tape.mul(alpha, weighted)?;
    Ok(tape.mean(per))
}
