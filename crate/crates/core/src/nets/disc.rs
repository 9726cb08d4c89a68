use rand_chacha::ChaCha8Rng;

use super::layers::{add_conv, conv, lrelu, sample_means};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Three-layer strided patch classifier on images.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDisc {
    pub channels: usize,
    pub width: usize,
    pub params: ParamSet,
}

/// Per-layer activations, last entry is the patch score map.
pub struct DiscOutput {
    pub activations: Vec<Var>,
    pub score: Var,
}

impl ImageDisc {
    pub fn new(channels: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamSet::new();
        add_conv(&mut ps, rng, "l1", channels, width, 4, true, 1.0);
        add_conv(&mut ps, rng, "l2", width, 2 * width, 4, true, 1.0);
        add_conv(&mut ps, rng, "l3", 2 * width, 1, 3, true, 1.0);
        ImageDisc {
            channels,
            width,
            params: ps,
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<DiscOutput> {
        let (_, c, _, _) = tape.value(x).dims4("image disc")?;
        if c != self.channels {
            return Err(Error::shape(
                "image disc",
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        let h1 = conv(tape, b, "l1", x, 2, 1)?;
        let a1 = lrelu(tape, h1);
        let h2 = conv(tape, b, "l2", a1, 2, 1)?;
        let a2 = lrelu(tape, h2);
        let score = conv(tape, b, "l3", a2, 1, 1)?;
        Ok(DiscOutput {
            activations: vec![a1, a2, score],
            score,
        })
    }
}

/// Three-layer classifier on latent maps with one score per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDisc {
    pub latent: usize,
    pub width: usize,
    pub params: ParamSet,
}

impl LatentDisc {
    pub fn new(latent: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamSet::new();
        add_conv(&mut ps, rng, "l1", latent, width, 3, true, 1.0);
        add_conv(&mut ps, rng, "l2", width, width, 4, true, 1.0);
        add_conv(&mut ps, rng, "l3", width, 1, 3, true, 1.0);
        LatentDisc {
            latent,
            width,
            params: ps,
        }
    }

    /// `[N, C_z, h, w]` codes to `[N]` scores.
    pub fn forward(&self, tape: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        let (_, c, _, _) = tape.value(z).dims4("latent disc")?;
        if c != self.latent {
            return Err(Error::shape(
                "latent disc",
                format!("expected {} channels, got {c}", self.latent),
            ));
        }
        let h = conv(tape, b, "l1", z, 1, 1)?;
        let h = lrelu(tape, h);
        let h = conv(tape, b, "l2", h, 2, 1)?;
        let h = lrelu(tape, h);
        let s = conv(tape, b, "l3", h, 1, 1)?;
        sample_means(tape, s)
    }
}
