use rand_chacha::ChaCha8Rng;

use super::layers::{add_conv, add_norm, conv, lrelu, norm, upconv};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct UnetSpec {
    pub channels: usize,
    pub width: usize,
}

impl Default for UnetSpec {
    fn default() -> Self {
        UnetSpec {
            channels: 3,
            width: 8,
        }
    }
}

/// Three-level encoder/decoder with concatenated skips and a 1-channel
/// logit head at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Unet {
    pub spec: UnetSpec,
    pub params: ParamSet,
}

fn add_block(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) {
    add_conv(ps, rng, name, cin, cout, k, false, 1.0);
    add_norm(ps, &format!("{name}.n"), cout);
}

fn block(tape: &mut Tape, b: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let h = conv(tape, b, name, x, stride, pad)?;
    let h = norm(tape, b, &format!("{name}.n"), h)?;
    Ok(lrelu(tape, h))
}

fn up_block(tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = upconv(tape, b, name, x)?;
    let h = norm(tape, b, &format!("{name}.n"), h)?;
    Ok(lrelu(tape, h))
}

impl Unet {
    pub fn new(spec: UnetSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamSet::new();
        let (c, u) = (spec.channels, spec.width);
        add_block(&mut ps, rng, "d1", c, u, 3);
        add_block(&mut ps, rng, "d2", u, 2 * u, 4);
        add_block(&mut ps, rng, "d3", 2 * u, 4 * u, 4);
        add_block(&mut ps, rng, "u2", 4 * u, 2 * u, 3);
        add_block(&mut ps, rng, "m2", 4 * u, 2 * u, 3);
        add_block(&mut ps, rng, "u1", 2 * u, u, 3);
        add_block(&mut ps, rng, "m1", 2 * u, u, 3);
        add_conv(&mut ps, rng, "head", u, 1, 1, true, 1.0);
        Unet { spec, params: ps }
    }

    /// `[N, C, H, W]` images to `[N, 1, H, W]` defect logits.
    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4("unet")?;
        if c != self.spec.channels {
            return Err(Error::shape(
                "unet",
                format!("expected {} channels, got {c}", self.spec.channels),
            ));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(
                "unet",
                format!("{h}x{w} is not divisible by 4"),
            ));
        }
        let s1 = block(tape, b, "d1", x, 1, 1)?;
        let s2 = block(tape, b, "d2", s1, 2, 1)?;
        let bottom = block(tape, b, "d3", s2, 2, 1)?;
        let up2 = up_block(tape, b, "u2", bottom)?;
        let cat2 = tape.concat(&[up2, s2], 1)?;
        let m2 = block(tape, b, "m2", cat2, 1, 1)?;
        let up1 = up_block(tape, b, "u1", m2)?;
        let cat1 = tape.concat(&[up1, s1], 1)?;
        let m1 = block(tape, b, "m1", cat1, 1, 1)?;
        conv(tape, b, "head", m1, 1, 0)
    }
}
