//! Raw numeric kernels behind the differentiable ops. All loops run in a fixed
//! order so results are bit-reproducible.

/// `c[m×n] (+)= op(a)[m×k] · op(b)[k×n]` on row-major buffers.
///
/// With `a_t`, `a` is stored as `k×m`; with `b_t`, `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation over a batch. `out` is `[n, k, ho, wo]`.
pub(crate) fn conv2d_forward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    k: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let in_per = g.c * g.h * g.w;
    let out_per = k * g.cols();
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.rows() * g.cols()]
    };
    for s in 0..n {
        let xs = &x[s * in_per..(s + 1) * in_per];
        let os = &mut out[s * out_per..(s + 1) * out_per];
        let colbuf: &[f64] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        gemm(
            k,
            g.rows(),
            g.cols(),
            weight,
            false,
            colbuf,
            false,
            os,
            false,
        );
        if let Some(b) = bias {
            for (kk, row) in os.chunks_mut(g.cols()).enumerate() {
                let bv = b[kk];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Gradients of conv2d with respect to input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    k: usize,
    gout: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let in_per = g.c * g.h * g.w;
    let out_per = k * g.cols();
    let rows = g.rows();
    let p = g.cols();
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { rows * p }];
    let mut dcols = vec![0.0; rows * p];
    for s in 0..n {
        let xs = &x[s * in_per..(s + 1) * in_per];
        let gs = &gout[s * out_per..(s + 1) * out_per];
        if let Some(dw) = dw.as_deref_mut() {
            let colbuf: &[f64] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            gemm(k, p, rows, gs, false, colbuf, true, dw, true);
        }
        if let Some(db) = db.as_deref_mut() {
            for (kk, row) in gs.chunks(p).enumerate() {
                db[kk] += row.iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * in_per..(s + 1) * in_per];
            if g.is_pointwise() {
                gemm(rows, k, p, weight, true, gs, false, dxs, true);
            } else {
                gemm(rows, k, p, weight, true, gs, false, &mut dcols, false);
                col2im(&dcols, g, dxs);
            }
        }
    }
}

pub(crate) fn upsample2x_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * h2 * w2];
    for p in 0..planes {
        for y in 0..h2 {
            let src = &x[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
            let dst = &mut out[(p * h2 + y) * w2..(p * h2 + y + 1) * w2];
            for (xx, v) in dst.iter_mut().enumerate() {
                *v = src[xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(gout: &[f64], planes: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (h2, w2) = (2 * h, 2 * w);
    for p in 0..planes {
        for y in 0..h2 {
            let src = &gout[(p * h2 + y) * w2..(p * h2 + y + 1) * w2];
            let dst = &mut dx[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
            for (xx, v) in src.iter().enumerate() {
                dst[xx / 2] += v;
            }
        }
    }
}

pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-plane standardization followed by a per-channel affine map.
pub(crate) fn instance_norm_forward(
    x: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, NormCache) {
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n * c];
    for plane in 0..n * c {
        let ch = plane % c;
        let xs = &x[plane * hw..(plane + 1) * hw];
        let mean = xs.iter().sum::<f64>() / hw as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[plane] = is;
        for i in 0..hw {
            let xh = (xs[i] - mean) * is;
            xhat[plane * hw + i] = xh;
            out[plane * hw + i] = gamma[ch] * xh + beta[ch];
        }
    }
    (out, NormCache { xhat, inv_std })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn instance_norm_backward(
    gout: &[f64],
    cache: &NormCache,
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dgamma: Option<&mut [f64]>,
    mut dbeta: Option<&mut [f64]>,
) {
    let m = hw as f64;
    for plane in 0..n * c {
        let ch = plane % c;
        let g = &gout[plane * hw..(plane + 1) * hw];
        let xh = &cache.xhat[plane * hw..(plane + 1) * hw];
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        if let Some(db) = dbeta.as_deref_mut() {
            db[ch] += sum_g;
        }
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[ch] += sum_gx;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let scale = gamma[ch] * cache.inv_std[plane] / m;
            let d = &mut dx[plane * hw..(plane + 1) * hw];
            for i in 0..hw {
                d[i] += scale * (m * g[i] - sum_g - xh[i] * sum_gx);
            }
        }
    }
}
