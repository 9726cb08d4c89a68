//! Parameter initialisation and forward helpers shared by the networks.

use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamSet};
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub const LRELU_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

/// Adds `{name}.w` (`[cout, cin, k, k]`, LeCun-normal scaled by `gain`) and
/// optionally a zero `{name}.b`.
pub fn add_conv(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    bias: bool,
    gain: f64,
) {
    let std = gain / ((cin * k * k) as f64).sqrt();
    ps.insert(
        format!("{name}.w"),
        Tensor::randn(&[cout, cin, k, k], std, rng),
    );
    if bias {
        ps.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }
}

pub fn add_norm(ps: &mut ParamSet, name: &str, c: usize) {
    ps.insert(format!("{name}.g"), Tensor::ones(&[c]));
    ps.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
}

pub fn conv(
    tape: &mut Tape,
    b: &Bound,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let w = b.var(&format!("{name}.w"))?;
    let bias = b.get(&format!("{name}.b"));
    tape.conv2d(x, w, bias, stride, pad)
}

pub fn upconv(tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = b.var(&format!("{name}.w"))?;
    let bias = b.get(&format!("{name}.b"));
    tape.upsample_conv(x, w, bias)
}

pub fn norm(tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let g = b.var(&format!("{name}.g"))?;
    let beta = b.var(&format!("{name}.beta"))?;
    tape.instance_norm(x, g, beta, NORM_EPS)
}

pub fn lrelu(tape: &mut Tape, x: Var) -> Var {
    tape.leaky_relu(x, LRELU_SLOPE)
}

/// `x + IN(conv(lrelu(IN(conv(x)))))` with 3×3 convolutions.
pub fn add_res_block(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, c: usize) {
    add_conv(ps, rng, &format!("{name}.c1"), c, c, 3, false, 1.0);
    add_norm(ps, &format!("{name}.n1"), c);
    add_conv(ps, rng, &format!("{name}.c2"), c, c, 3, false, 1.0);
    add_norm(ps, &format!("{name}.n2"), c);
}

pub fn res_block(tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = conv(tape, b, &format!("{name}.c1"), x, 1, 1)?;
    let h = norm(tape, b, &format!("{name}.n1"), h)?;
    let h = lrelu(tape, h);
    let h = conv(tape, b, &format!("{name}.c2"), h, 1, 1)?;
    let h = norm(tape, b, &format!("{name}.n2"), h)?;
    tape.add(x, h)
}

/// `x + conv(lrelu(conv(x)))` with biased 3×3 convolutions and no
/// normalisation, so a block can shift per-sample channel means.
pub fn add_plain_res_block(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, c: usize) {
    add_conv(ps, rng, &format!("{name}.c1"), c, c, 3, true, 1.0);
    add_conv(ps, rng, &format!("{name}.c2"), c, c, 3, true, 0.5);
}

pub fn plain_res_block(tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = conv(tape, b, &format!("{name}.c1"), x, 1, 1)?;
    let h = lrelu(tape, h);
    let h = conv(tape, b, &format!("{name}.c2"), h, 1, 1)?;
    tape.add(x, h)
}

/// Per-sample spatial mean of a `[N, 1, H, W]` map, giving `[N]`.
pub fn sample_means(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    let n = s[0];
    let rest: usize = s[1..].iter().product();
    let flat = tape.reshape(x, &[n, rest])?;
    tape.mean_rows(flat)
}
