use rand_chacha::ChaCha8Rng;

use super::layers::{add_conv, add_plain_res_block, conv, plain_res_block};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var, MASK_BIAS};

#[derive(Clone, Debug, PartialEq)]
pub struct MappingSpec {
    pub latent: usize,
    pub local_blocks: usize,
    pub global_blocks: usize,
}

impl Default for MappingSpec {
    fn default() -> Self {
        MappingSpec {
            latent: 16,
            local_blocks: 4,
            global_blocks: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mapping {
    pub spec: MappingSpec,
    pub params: ParamSet,
}

pub struct NonlocalOutput {
    pub output: Var,
    /// One `[hw, hw]` row-stochastic matrix per sample; row `i` is query `i`.
    pub affinity: Vec<Var>,
}

pub struct MappingOutput {
    pub fused: Var,
    pub local: Var,
    pub global: Var,
    pub affinity: Vec<Var>,
}

/// Embedding width of the affinity projections.
pub fn embed_channels(c: usize) -> usize {
    (c / 2).max(1)
}

/// Adds the four 1×1 projections of a partial nonlocal block under `prefix`.
pub fn add_nonlocal(ps: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, c: usize) {
    let e = embed_channels(c);
    add_conv(ps, rng, &format!("{prefix}.theta"), c, e, 1, true, 1.0);
    add_conv(ps, rng, &format!("{prefix}.phi"), c, e, 1, true, 1.0);
    add_conv(ps, rng, &format!("{prefix}.mu"), c, c, 1, true, 1.0);
    add_conv(ps, rng, &format!("{prefix}.nu"), c, c, 1, true, 1.0);
}

fn check_mask(mask: &Tensor, n: usize, h: usize, w: usize) -> Result<()> {
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::shape(
            "mask",
            format!("{:?}, expected [{n}, 1, {h}, {w}]", mask.shape()),
        ));
    }
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Parameter("latent mask must be binary".into()));
    }
    Ok(())
}

/// Mask-aware attention: every query attends only to unmasked keys,
/// `s_ij ∝ (1 - m_j) exp(θ(F_i)·φ(F_j))`, and `O_i = ν(Σ_j s_ij μ(F_j))`.
pub fn partial_nonlocal(
    tape: &mut Tape,
    b: &Bound,
    prefix: &str,
    f: Var,
    mask: &Tensor,
) -> Result<NonlocalOutput> {
    let (n, c, h, w) = tape.value(f).dims4("partial_nonlocal")?;
    check_mask(mask, n, h, w)?;
    let hw = h * w;
    let e = embed_channels(c);
    let theta = conv(tape, b, &format!("{prefix}.theta"), f, 1, 0)?;
    let phi = conv(tape, b, &format!("{prefix}.phi"), f, 1, 0)?;
    let value = conv(tape, b, &format!("{prefix}.mu"), f, 1, 0)?;

    let mut outs = Vec::with_capacity(n);
    let mut affinity = Vec::with_capacity(n);
    for s in 0..n {
        let m = &mask.data()[s * hw..(s + 1) * hw];
        if m.iter().all(|&v| v == 1.0) {
            return Err(Error::FullyMasked);
        }
        let row: Vec<f64> = m
            .iter()
            .map(|&v| if v == 1.0 { MASK_BIAS } else { 0.0 })
            .collect();
        let bias = Tensor::new(vec![hw, hw], row.repeat(hw))?;

        let th = tape.narrow(theta, 0, s, 1)?;
        let th = tape.reshape(th, &[e, hw])?;
        let queries = tape.transpose(th)?;
        let ph = tape.narrow(phi, 0, s, 1)?;
        let keys = tape.reshape(ph, &[e, hw])?;
        let logits = tape.matmul(queries, keys)?;
        let attn = tape.softmax_rows(logits, Some(&bias))?;

        let v = tape.narrow(value, 0, s, 1)?;
        let v = tape.reshape(v, &[c, hw])?;
        let at = tape.transpose(attn)?;
        let o = tape.matmul(v, at)?;
        outs.push(tape.reshape(o, &[1, c, h, w])?);
        affinity.push(attn);
    }
    let gathered = if n == 1 {
        outs[0]
    } else {
        tape.concat(&outs, 0)?
    };
    let output = conv(tape, b, &format!("{prefix}.nu"), gathered, 1, 0)?;
    Ok(NonlocalOutput { output, affinity })
}

/// Broadcasts a `[N, 1, h, w]` mask over `c` channels.
pub fn expand_mask(mask: &Tensor, c: usize) -> Result<Tensor> {
    let (n, one, h, w) = mask.dims4("expand_mask")?;
    if one != 1 {
        return Err(Error::shape("expand_mask", format!("{:?}", mask.shape())));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * c * hw);
    for s in 0..n {
        let plane = &mask.data()[s * hw..(s + 1) * hw];
        for _ in 0..c {
            data.extend_from_slice(plane);
        }
    }
    Tensor::new(vec![n, c, h, w], data)
}

impl Mapping {
    pub fn new(spec: MappingSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut ps = ParamSet::new();
        let c = spec.latent;
        for i in 0..spec.local_blocks {
            add_plain_res_block(&mut ps, rng, &format!("local.res{i}"), c);
        }
        add_nonlocal(&mut ps, rng, "global.nl", c);
        for i in 0..spec.global_blocks {
            add_plain_res_block(&mut ps, rng, &format!("global.res{i}"), c);
        }
        Mapping { spec, params: ps }
    }

    pub fn local_branch(&self, tape: &mut Tape, b: &Bound, f: Var) -> Result<Var> {
        let mut x = f;
        for i in 0..self.spec.local_blocks {
            x = plain_res_block(tape, b, &format!("local.res{i}"), x)?;
        }
        Ok(x)
    }

    pub fn global_branch(
        &self,
        tape: &mut Tape,
        b: &Bound,
        f: Var,
        mask: &Tensor,
    ) -> Result<(Var, Vec<Var>)> {
        let nl = partial_nonlocal(tape, b, "global.nl", f, mask)?;
        let mut x = nl.output;
        for i in 0..self.spec.global_blocks {
            x = plain_res_block(tape, b, &format!("global.res{i}"), x)?;
        }
        Ok((x, nl.affinity))
    }

    /// `(1 - m) ⊙ local(F) + m ⊙ global(F)`, with `mask` at latent resolution.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        f: Var,
        mask: &Tensor,
    ) -> Result<MappingOutput> {
        let (_, c, _, _) = tape.value(f).dims4("map_latent")?;
        if c != self.spec.latent {
            return Err(Error::shape(
                "map_latent",
                format!("expected {} channels, got {c}", self.spec.latent),
            ));
        }
        let local = self.local_branch(tape, b, f)?;
        let (global, affinity) = self.global_branch(tape, b, f, mask)?;
        let m = expand_mask(mask, c)?;
        let keep = m.map(|v| 1.0 - v);
        let keep = tape.constant(keep);
        let m = tape.constant(m);
        let l = tape.mul(keep, local)?;
        let g = tape.mul(m, global)?;
        let fused = tape.add(l, g)?;
        Ok(MappingOutput {
            fused,
            local,
            global,
            affinity,
        })
    }
}
