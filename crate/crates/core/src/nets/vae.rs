use rand_chacha::ChaCha8Rng;

use super::layers::{add_conv, add_plain_res_block, conv, lrelu, plain_res_block, upconv};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct VaeSpec {
    pub channels: usize,
    pub width1: usize,
    pub width2: usize,
    pub latent: usize,
    pub res_blocks: usize,
}

impl Default for VaeSpec {
    fn default() -> Self {
        VaeSpec {
            channels: 3,
            width1: 16,
            width2: 32,
            latent: 16,
            res_blocks: 1,
        }
    }
}

/// Source of the reparameterisation noise `ε`.
pub enum Noise<'a> {
    /// `ε = 0`, so `z = mu`.
    Zero,
    /// Fresh standard-normal draws.
    Sample(&'a mut ChaCha8Rng),
    Fixed(Tensor),
}

/// Encoder output. `eps` is the noise actually used for `z`.
pub struct LatentCode {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    pub eps: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub spec: VaeSpec,
    pub params: ParamSet,
}

/// `z = mu + exp(0.5 logvar) ⊙ eps`.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, eps: &Tensor) -> Result<Var> {
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let e = tape.constant(eps.clone());
    let spread = tape.mul(sigma, e)?;
    tape.add(mu, spread)
}

impl Vae {
    pub fn new(spec: VaeSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamSet::new();
        let (c, w1, w2, cz) = (spec.channels, spec.width1, spec.width2, spec.latent);
        add_conv(&mut ps, rng, "enc.down1", c, w1, 4, true, 1.0);
        add_conv(&mut ps, rng, "enc.down2", w1, w2, 4, true, 1.0);
        for i in 0..spec.res_blocks {
            add_plain_res_block(&mut ps, rng, &format!("enc.res{i}"), w2);
        }
        add_conv(&mut ps, rng, "enc.mu", w2, cz, 1, true, 1.0);
        add_conv(&mut ps, rng, "enc.logvar", w2, cz, 1, true, 0.1);

        add_conv(&mut ps, rng, "dec.in", cz, w2, 1, true, 1.0);
        for i in 0..spec.res_blocks {
            add_plain_res_block(&mut ps, rng, &format!("dec.res{i}"), w2);
        }
        add_conv(&mut ps, rng, "dec.up1", w2, w1, 3, true, 1.0);
        add_conv(&mut ps, rng, "dec.up2", w1, w1, 3, true, 1.0);
        add_conv(&mut ps, rng, "dec.out", w1, c, 3, true, 1.0);
        Vae { spec, params: ps }
    }

    /// Latent spatial extent for an `h × w` input.
    pub fn latent_dims(h: usize, w: usize) -> Result<(usize, usize)> {
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "encode",
                format!("{h}x{w} is not divisible by 4"),
            ));
        }
        Ok((h / 4, w / 4))
    }

    /// Encodes a `[N, C, H, W]` batch.
    pub fn encode(&self, tape: &mut Tape, b: &Bound, x: Var, noise: Noise) -> Result<LatentCode> {
        let (n, c, h, w) = tape.value(x).dims4("encode")?;
        if c != self.spec.channels {
            return Err(Error::shape(
                "encode",
                format!("expected {} channels, got {c}", self.spec.channels),
            ));
        }
        let (lh, lw) = Self::latent_dims(h, w)?;
        let mut f = conv(tape, b, "enc.down1", x, 2, 1)?;
        f = lrelu(tape, f);
        f = conv(tape, b, "enc.down2", f, 2, 1)?;
        f = lrelu(tape, f);
        for i in 0..self.spec.res_blocks {
            f = plain_res_block(tape, b, &format!("enc.res{i}"), f)?;
        }
        let mu = conv(tape, b, "enc.mu", f, 1, 0)?;
        let logvar = conv(tape, b, "enc.logvar", f, 1, 0)?;
        let shape = [n, self.spec.latent, lh, lw];
        let eps = match noise {
            Noise::Zero => Tensor::zeros(&shape),
            Noise::Sample(rng) => Tensor::randn(&shape, 1.0, rng),
            Noise::Fixed(t) => {
                if t.shape() != shape {
                    return Err(Error::shape(
                        "encode",
                        format!("noise {:?} vs {shape:?}", t.shape()),
                    ));
                }
                t
            }
        };
        let z = reparameterize(tape, mu, logvar, &eps)?;
        Ok(LatentCode { mu, logvar, z, eps })
    }

    /// Decodes `[N, C_z, h, w]` codes to `[N, C, 4h, 4w]` images in `[0, 1]`.
    pub fn decode(&self, tape: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        let (_, c, _, _) = tape.value(z).dims4("decode")?;
        if c != self.spec.latent {
            return Err(Error::shape(
                "decode",
                format!("expected {} latent channels, got {c}", self.spec.latent),
            ));
        }
        let mut f = conv(tape, b, "dec.in", z, 1, 0)?;
        f = lrelu(tape, f);
        for i in 0..self.spec.res_blocks {
            f = plain_res_block(tape, b, &format!("dec.res{i}"), f)?;
        }
        f = upconv(tape, b, "dec.up1", f)?;
        f = lrelu(tape, f);
        f = upconv(tape, b, "dec.up2", f)?;
        f = lrelu(tape, f);
        let out = conv(tape, b, "dec.out", f, 1, 1)?;
        let t = tape.tanh(out);
        let t = tape.add_scalar(t, 1.0);
        Ok(tape.scale(t, 0.5))
    }
}
