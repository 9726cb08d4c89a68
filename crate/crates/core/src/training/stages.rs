use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, clip_grad_norm, AdamState};
use super::checkpoint::{Checkpoint, RngState};
use super::config::{Schedule, TrainConfig};
use super::data::{dihedral_pairs, image_batch, reseeded_pairs, sample_indices};
use crate::degrade::{derive_seed, DegradedPair};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    mapping_disc_loss, mapping_forward, mapping_gen_loss, vae1_disc_losses, vae1_forward,
    vae1_gen_loss, vae_disc_loss, vae_forward, vae_gen_loss, MappingBatch,
};
use crate::nets::{latent_masks, Bound, ImageDisc, LatentDisc, Mapping, Noise, ParamSet, Vae};
use crate::tensor::{Gradients, Tape, Tensor, Var};

pub(crate) const TAG_VAE1: u64 = 101;
pub(crate) const TAG_VAE2: u64 = 102;
pub(crate) const TAG_MAPPING: u64 = 103;

/// Clips one player's gradients and applies an Adam step.
pub(crate) fn update(
    params: &mut ParamSet,
    opt: &mut AdamState,
    bound: &Bound,
    grads: &Gradients,
    lr: f64,
    clip: f64,
) -> Result<()> {
    let mut g = bound.grads(grads);
    clip_grad_norm(&mut g, clip);
    adam_step(opt, params, &g, lr)
}

/// Reads every logged value off the tape and enforces the divergence guard.
pub(crate) fn collect(
    tape: &Tape,
    prefix: &str,
    terms: &[(String, Var)],
    iter: usize,
    limit: f64,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(terms.len());
    for (k, v) in terms {
        let name = format!("{prefix}{k}");
        let value = tape.value(*v).item();
        if !value.is_finite() || value.abs() > limit {
            return Err(Error::Divergence { name, value, iter });
        }
        out.push((name, value));
    }
    Ok(out)
}

/// `iter=<n> loss.<name>=<v> ...`
pub(crate) fn log_line(log: &mut dyn Write, iter: usize, values: &[(String, f64)]) -> Result<()> {
    let mut line = format!("iter={iter}");
    for (k, v) in values {
        line.push_str(&format!(" loss.{k}={v}"));
    }
    writeln!(log, "{line}")?;
    Ok(())
}

pub(crate) fn iterations(cfg: &TrainConfig, s: &Schedule) -> usize {
    s.epochs * cfg.epoch_iters
}

pub(crate) fn lr_for(cfg: &TrainConfig, s: &Schedule, iter: usize) -> Result<f64> {
    s.lr_at(iter as f64 / cfg.epoch_iters as f64)
}

pub(crate) fn adam(cfg: &TrainConfig, ps: &ParamSet) -> AdamState {
    AdamState::new(ps, cfg.beta1, cfg.beta2, cfg.adam_eps)
}

fn noise(
    cfg: &TrainConfig,
    vae: &Vae,
    batch: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Noise<'static>> {
    if !cfg.sample_latent {
        return Ok(Noise::Zero);
    }
    let (n, _, h, w) = batch.dims4("noise")?;
    let (lh, lw) = Vae::latent_dims(h, w)?;
    Ok(Noise::Fixed(Tensor::randn(
        &[n, vae.spec.latent, lh, lw],
        1.0,
        rng,
    )))
}

fn put_opt(
    sections: &mut BTreeMap<String, ParamSet>,
    counters: &mut BTreeMap<String, u64>,
    name: &str,
    opt: &AdamState,
) {
    sections.insert(format!("opt.{name}.m"), opt.m.clone());
    sections.insert(format!("opt.{name}.v"), opt.v.clone());
    counters.insert(format!("opt.{name}.t"), opt.t);
}

fn get_opt(
    ckpt: &Checkpoint,
    cfg: &TrainConfig,
    name: &str,
    params: &ParamSet,
) -> Result<AdamState> {
    let mut opt = adam(cfg, params);
    opt.m.assign(ckpt.section(&format!("opt.{name}.m"))?)?;
    opt.v.assign(ckpt.section(&format!("opt.{name}.v"))?)?;
    opt.t = ckpt.counter(&format!("opt.{name}.t"))?;
    Ok(opt)
}

fn load_params(ckpt: &Checkpoint, name: &str, mut fresh: ParamSet) -> Result<ParamSet> {
    fresh
        .assign(ckpt.section(name)?)
        .map_err(|e| Error::Checkpoint {
            field: "section",
            detail: format!("`{name}`: {e}"),
        })?;
    Ok(fresh)
}

/// The configuration stored in a checkpoint.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<TrainConfig> {
    TrainConfig::from_text(&ckpt.config).map_err(|e| Error::Checkpoint {
        field: "config",
        detail: e.to_string(),
    })
}

fn init_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// VAE₁ with its image and latent discriminators and optimiser state.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae1Run {
    pub vae: Vae,
    pub disc: ImageDisc,
    pub latent_disc: LatentDisc,
    pub opt_vae: AdamState,
    pub opt_disc: AdamState,
    pub opt_latent: AdamState,
    pub rng: ChaCha8Rng,
    pub iterations: u64,
}

impl Vae1Run {
    pub fn new(cfg: &TrainConfig) -> Self {
        let g = |i| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i));
        let vae = Vae::new(cfg.model.vae.clone(), &mut g(1));
        let disc = ImageDisc::new(cfg.model.vae.channels, cfg.model.disc_width, &mut g(4));
        let latent_disc =
            LatentDisc::new(cfg.model.vae.latent, cfg.model.latent_disc_width, &mut g(6));
        Vae1Run {
            opt_vae: adam(cfg, &vae.params),
            opt_disc: adam(cfg, &disc.params),
            opt_latent: adam(cfg, &latent_disc.params),
            vae,
            disc,
            latent_disc,
            rng: g(TAG_VAE1),
            iterations: 0,
        }
    }

    /// One iteration: image discriminator, latent discriminator, then
    /// encoder/decoder against the updated discriminators.
    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        r: Tensor,
        x: Tensor,
        lr: f64,
        iter: usize,
    ) -> Result<Vec<(String, f64)>> {
        let nr = noise(cfg, &self.vae, &r, &mut self.rng)?;
        let nx = noise(cfg, &self.vae, &x, &mut self.rng)?;
        let mut tape = Tape::new();
        let bv = self.vae.params.bind(&mut tape, true);
        let bd = self.disc.params.bind(&mut tape, true);
        let bl = self.latent_disc.params.bind(&mut tape, true);
        let rv = tape.constant(r);
        let xv = tape.constant(x);
        let fwd = vae1_forward(&mut tape, (&self.vae, &bv), rv, xv, nr, nx)?;
        let (d_img, d_lat) = vae1_disc_losses(
            &mut tape,
            (&self.disc, &bd),
            (&self.latent_disc, &bl),
            &fwd,
            &cfg.weights,
        )?;
        let g = tape.backward(d_img)?;
        update(
            &mut self.disc.params,
            &mut self.opt_disc,
            &bd,
            &g,
            lr,
            cfg.clip,
        )?;
        let g = tape.backward(d_lat)?;
        update(
            &mut self.latent_disc.params,
            &mut self.opt_latent,
            &bl,
            &g,
            lr,
            cfg.clip,
        )?;

        let bd = self.disc.params.bind(&mut tape, false);
        let bl = self.latent_disc.params.bind(&mut tape, false);
        let (eg, mut terms) = vae1_gen_loss(
            &mut tape,
            (&self.disc, &bd),
            (&self.latent_disc, &bl),
            &fwd,
            &cfg.weights,
        )?;
        let g = tape.backward(eg)?;
        update(
            &mut self.vae.params,
            &mut self.opt_vae,
            &bv,
            &g,
            lr,
            cfg.clip,
        )?;
        terms.push(("img.d".into(), d_img));
        terms.push(("lat.d".into(), d_lat));
        terms.push(("total".into(), eg));
        self.iterations += 1;
        collect(&tape, "vae1.", &terms, iter, cfg.divergence)
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut sections = BTreeMap::new();
        let mut counters = BTreeMap::new();
        sections.insert("vae1".to_string(), self.vae.params.clone());
        sections.insert("disc1".to_string(), self.disc.params.clone());
        sections.insert("disc_latent".to_string(), self.latent_disc.params.clone());
        put_opt(&mut sections, &mut counters, "vae1", &self.opt_vae);
        put_opt(&mut sections, &mut counters, "disc1", &self.opt_disc);
        put_opt(
            &mut sections,
            &mut counters,
            "disc_latent",
            &self.opt_latent,
        );
        counters.insert("iterations".to_string(), self.iterations);
        Checkpoint {
            kind: "vae1".into(),
            config: cfg.to_text(),
            rng: RngState::capture(&self.rng),
            counters,
            sections,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Vae1Run> {
        ckpt.expect_kind("vae1")?;
        let cfg = checkpoint_config(ckpt)?;
        let m = &cfg.model;
        let vae = Vae {
            spec: m.vae.clone(),
            params: load_params(
                ckpt,
                "vae1",
                Vae::new(m.vae.clone(), &mut init_rng()).params,
            )?,
        };
        let fresh = ImageDisc::new(m.vae.channels, m.disc_width, &mut init_rng());
        let disc = ImageDisc {
            params: load_params(ckpt, "disc1", fresh.params.clone())?,
            ..fresh
        };
        let fresh = LatentDisc::new(m.vae.latent, m.latent_disc_width, &mut init_rng());
        let latent_disc = LatentDisc {
            params: load_params(ckpt, "disc_latent", fresh.params.clone())?,
            ..fresh
        };
        Ok(Vae1Run {
            opt_vae: get_opt(ckpt, &cfg, "vae1", &vae.params)?,
            opt_disc: get_opt(ckpt, &cfg, "disc1", &disc.params)?,
            opt_latent: get_opt(ckpt, &cfg, "disc_latent", &latent_disc.params)?,
            vae,
            disc,
            latent_disc,
            rng: ckpt.rng.restore(),
            iterations: ckpt.counter("iterations")?,
        })
    }
}

/// VAE₂ with its image discriminator and optimiser state.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae2Run {
    pub vae: Vae,
    pub disc: ImageDisc,
    pub opt_vae: AdamState,
    pub opt_disc: AdamState,
    pub rng: ChaCha8Rng,
    pub iterations: u64,
}

impl Vae2Run {
    pub fn new(cfg: &TrainConfig) -> Self {
        let g = |i| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i));
        let vae = Vae::new(cfg.model.vae.clone(), &mut g(2));
        let disc = ImageDisc::new(cfg.model.vae.channels, cfg.model.disc_width, &mut g(5));
        Vae2Run {
            opt_vae: adam(cfg, &vae.params),
            opt_disc: adam(cfg, &disc.params),
            vae,
            disc,
            rng: g(TAG_VAE2),
            iterations: 0,
        }
    }

    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        y: Tensor,
        lr: f64,
        iter: usize,
    ) -> Result<Vec<(String, f64)>> {
        let ny = noise(cfg, &self.vae, &y, &mut self.rng)?;
        let mut tape = Tape::new();
        let bv = self.vae.params.bind(&mut tape, true);
        let bd = self.disc.params.bind(&mut tape, true);
        let yv = tape.constant(y);
        let fwd = vae_forward(&mut tape, (&self.vae, &bv), yv, ny)?;
        let d = vae_disc_loss(&mut tape, (&self.disc, &bd), &fwd)?;
        let g = tape.backward(d)?;
        update(
            &mut self.disc.params,
            &mut self.opt_disc,
            &bd,
            &g,
            lr,
            cfg.clip,
        )?;
        let bd = self.disc.params.bind(&mut tape, false);
        let (eg, mut terms) = vae_gen_loss(&mut tape, (&self.disc, &bd), &fwd, &cfg.weights)?;
        let g = tape.backward(eg)?;
        update(
            &mut self.vae.params,
            &mut self.opt_vae,
            &bv,
            &g,
            lr,
            cfg.clip,
        )?;
        terms.push(("gan_d".into(), d));
        terms.push(("total".into(), eg));
        self.iterations += 1;
        collect(&tape, "vae2.", &terms, iter, cfg.divergence)
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut sections = BTreeMap::new();
        let mut counters = BTreeMap::new();
        sections.insert("vae2".to_string(), self.vae.params.clone());
        sections.insert("disc2".to_string(), self.disc.params.clone());
        put_opt(&mut sections, &mut counters, "vae2", &self.opt_vae);
        put_opt(&mut sections, &mut counters, "disc2", &self.opt_disc);
        counters.insert("iterations".to_string(), self.iterations);
        Checkpoint {
            kind: "vae2".into(),
            config: cfg.to_text(),
            rng: RngState::capture(&self.rng),
            counters,
            sections,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Vae2Run> {
        ckpt.expect_kind("vae2")?;
        let cfg = checkpoint_config(ckpt)?;
        let m = &cfg.model;
        let vae = Vae {
            spec: m.vae.clone(),
            params: load_params(
                ckpt,
                "vae2",
                Vae::new(m.vae.clone(), &mut init_rng()).params,
            )?,
        };
        let fresh = ImageDisc::new(m.vae.channels, m.disc_width, &mut init_rng());
        let disc = ImageDisc {
            params: load_params(ckpt, "disc2", fresh.params.clone())?,
            ..fresh
        };
        Ok(Vae2Run {
            opt_vae: get_opt(ckpt, &cfg, "vae2", &vae.params)?,
            opt_disc: get_opt(ckpt, &cfg, "disc2", &disc.params)?,
            vae,
            disc,
            rng: ckpt.rng.restore(),
            iterations: ckpt.counter("iterations")?,
        })
    }
}

fn check_images(name: &str, images: &[Image], cfg: &TrainConfig) -> Result<()> {
    if images.is_empty() {
        return Err(Error::DegenerateData(format!("{name} dataset is empty")));
    }
    for img in images {
        if img.channels() != cfg.model.vae.channels
            || img.width() < cfg.crop
            || img.height() < cfg.crop
        {
            return Err(Error::DegenerateData(format!(
                "{name} image {}x{}x{} does not fit crop {} with {} channels",
                img.width(),
                img.height(),
                img.channels(),
                cfg.crop,
                cfg.model.vae.channels
            )));
        }
    }
    Ok(())
}

/// VAE₁ alone on real `r` and synthetic `x` images; one batch of each
/// per iteration.
pub fn train_vae1(
    r: &[Image],
    x: &[Image],
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<Vae1Run> {
    cfg.validate()?;
    check_images("r", r, cfg)?;
    check_images("x", x, cfg)?;
    let mut run = Vae1Run::new(cfg);
    for iter in 0..iterations(cfg, &cfg.stage1) {
        let lr = lr_for(cfg, &cfg.stage1, iter)?;
        let ir = sample_indices(&mut run.rng, r.len(), cfg.batch);
        let rb = image_batch(r, &ir, cfg.crop, cfg.augment, &mut run.rng)?;
        let ix = sample_indices(&mut run.rng, x.len(), cfg.batch);
        let xb = image_batch(x, &ix, cfg.crop, cfg.augment, &mut run.rng)?;
        let values = run.step(cfg, rb, xb, lr, iter)?;
        log_line(log, iter, &values)?;
    }
    Ok(run)
}

/// Stage I: VAE₁ on `r` and `x`, VAE₂ on clean `y`, trained side by side
/// with independent data streams.
pub fn train_stage1(
    r: &[Image],
    x: &[Image],
    y: &[Image],
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<(Vae1Run, Vae2Run)> {
    cfg.validate()?;
    check_images("r", r, cfg)?;
    check_images("x", x, cfg)?;
    check_images("y", y, cfg)?;
    let mut run1 = Vae1Run::new(cfg);
    let mut run2 = Vae2Run::new(cfg);
    for iter in 0..iterations(cfg, &cfg.stage1) {
        let lr = lr_for(cfg, &cfg.stage1, iter)?;
        let ir = sample_indices(&mut run1.rng, r.len(), cfg.batch);
        let rb = image_batch(r, &ir, cfg.crop, cfg.augment, &mut run1.rng)?;
        let ix = sample_indices(&mut run1.rng, x.len(), cfg.batch);
        let xb = image_batch(x, &ix, cfg.crop, cfg.augment, &mut run1.rng)?;
        let mut values = run1.step(cfg, rb, xb, lr, iter)?;
        let iy = sample_indices(&mut run2.rng, y.len(), cfg.batch);
        let yb = image_batch(y, &iy, cfg.crop, cfg.augment, &mut run2.rng)?;
        values.extend(run2.step(cfg, yb, lr, iter)?);
        log_line(log, iter, &values)?;
    }
    Ok((run1, run2))
}

/// Encoder means for `images`, one `[1, C_z, h, w]` tensor each.
pub fn encode_means(vae: &Vae, images: &[Image]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let mut tape = Tape::new();
        let b = vae.params.bind(&mut tape, false);
        let x = tape.constant(img.to_tensor());
        let code = vae.encode(&mut tape, &b, x, Noise::Zero)?;
        out.push(tape.value(code.mu).clone());
    }
    Ok(out)
}

/// `G(mu)` for each latent tensor.
pub fn decode_all(vae: &Vae, latents: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(latents.len());
    for z in latents {
        let mut tape = Tape::new();
        let b = vae.params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let y = vae.decode(&mut tape, &b, zv)?;
        out.push(tape.value(y).clone());
    }
    Ok(out)
}

/// `[1, C, h, w]` window of a single-sample tensor.
fn crop_sample(t: &Tensor, ox: usize, oy: usize, size: usize) -> Result<Tensor> {
    let (_, c, h, w) = t.dims4("crop")?;
    if ox + size > w || oy + size > h {
        return Err(Error::shape(
            "crop",
            format!("{size} window at ({ox}, {oy}) in {w}x{h}"),
        ));
    }
    let d = t.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in oy..oy + size {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&d[row + ox..row + ox + size]);
        }
    }
    Tensor::new(vec![1, c, size, size], out)
}

/// Frozen per-pair inputs of the mapping stage.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPairs {
    pub z_x: Vec<Tensor>,
    pub z_y: Vec<Tensor>,
    pub y_rec: Vec<Tensor>,
    pub masks: Vec<Tensor>,
}

impl LatentPairs {
    pub fn encode(pairs: &[DegradedPair], vae1: &Vae, vae2: &Vae) -> Result<LatentPairs> {
        let x: Vec<Image> = pairs.iter().map(|p| p.degraded.clone()).collect();
        let y: Vec<Image> = pairs.iter().map(|p| p.clean.clone()).collect();
        let z_y = encode_means(vae2, &y)?;
        Ok(LatentPairs {
            z_x: encode_means(vae1, &x)?,
            y_rec: decode_all(vae2, &z_y)?,
            z_y,
            masks: pairs
                .iter()
                .map(|p| latent_masks(std::slice::from_ref(&p.mask)))
                .collect::<Result<_>>()?,
        })
    }

    /// Batch of aligned crops: latent windows of `crop / 4`.
    fn batch(&self, idx: &[usize], crop: usize, rng: &mut ChaCha8Rng) -> Result<[Tensor; 4]> {
        let mut parts: [Vec<Tensor>; 4] = Default::default();
        let lc = crop / 4;
        for &i in idx {
            let (_, _, lh, lw) = self.z_x[i].dims4("latent batch")?;
            let (ox, oy) = super::data::crop_origin(rng, lw, lh, lc, 1)?;
            parts[0].push(crop_sample(&self.z_x[i], ox, oy, lc)?);
            parts[1].push(crop_sample(&self.z_y[i], ox, oy, lc)?);
            parts[2].push(crop_sample(&self.y_rec[i], 4 * ox, 4 * oy, crop)?);
            parts[3].push(crop_sample(&self.masks[i], ox, oy, lc)?);
        }
        Ok([
            Tensor::stack(&parts[0])?,
            Tensor::stack(&parts[1])?,
            Tensor::stack(&parts[2])?,
            Tensor::stack(&parts[3])?,
        ])
    }
}

/// Mapping network and its discriminator, with optimiser state and the
/// fingerprints of the VAEs it was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingRun {
    pub mapping: Mapping,
    pub disc: ImageDisc,
    pub opt_mapping: AdamState,
    pub opt_disc: AdamState,
    pub rng: ChaCha8Rng,
    pub iterations: u64,
    pub vae1_fingerprint: u64,
    pub vae2_fingerprint: u64,
}

impl MappingRun {
    pub fn new(cfg: &TrainConfig, vae1: &Vae, vae2: &Vae) -> Self {
        let g = |i| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i));
        let mut mspec = cfg.model.mapping.clone();
        mspec.latent = cfg.model.vae.latent;
        let mapping = Mapping::new(mspec, &mut g(3));
        let disc = ImageDisc::new(cfg.model.vae.channels, cfg.model.disc_width, &mut g(7));
        MappingRun {
            opt_mapping: adam(cfg, &mapping.params),
            opt_disc: adam(cfg, &disc.params),
            mapping,
            disc,
            rng: g(TAG_MAPPING),
            iterations: 0,
            vae1_fingerprint: vae1.params.fingerprint(),
            vae2_fingerprint: vae2.params.fingerprint(),
        }
    }

    /// Discriminator first, then the mapping against the updated
    /// discriminator. `vae2` stays frozen.
    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        vae2: &Vae,
        batch: &MappingBatch,
        lr: f64,
        iter: usize,
    ) -> Result<Vec<(String, f64)>> {
        let mut tape = Tape::new();
        let bm = self.mapping.params.bind(&mut tape, true);
        let b2 = vae2.params.bind(&mut tape, false);
        let bd = self.disc.params.bind(&mut tape, true);
        let fwd = mapping_forward(&mut tape, (&self.mapping, &bm), (vae2, &b2), batch)?;
        let d = mapping_disc_loss(&mut tape, (&self.disc, &bd), &fwd)?;
        let g = tape.backward(d)?;
        update(
            &mut self.disc.params,
            &mut self.opt_disc,
            &bd,
            &g,
            lr,
            cfg.clip,
        )?;
        let bd = self.disc.params.bind(&mut tape, false);
        let (gen, mut terms) = mapping_gen_loss(&mut tape, (&self.disc, &bd), &fwd, &cfg.weights)?;
        let g = tape.backward(gen)?;
        update(
            &mut self.mapping.params,
            &mut self.opt_mapping,
            &bm,
            &g,
            lr,
            cfg.clip,
        )?;
        terms.push(("gan_d".into(), d));
        terms.push(("total".into(), gen));
        self.iterations += 1;
        collect(&tape, "map.", &terms, iter, cfg.divergence)
    }

    /// Fails unless `vae1`/`vae2` are the networks this mapping was trained on.
    pub fn check_frozen(&self, vae1: &Vae, vae2: &Vae) -> Result<()> {
        for (name, want, got) in [
            ("vae1", self.vae1_fingerprint, vae1.params.fingerprint()),
            ("vae2", self.vae2_fingerprint, vae2.params.fingerprint()),
        ] {
            if want != got {
                return Err(Error::Contract(format!(
                    "{name} parameters changed: fingerprint {want:016x} vs {got:016x}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut sections = BTreeMap::new();
        let mut counters = BTreeMap::new();
        sections.insert("mapping".to_string(), self.mapping.params.clone());
        sections.insert("disc_map".to_string(), self.disc.params.clone());
        put_opt(&mut sections, &mut counters, "mapping", &self.opt_mapping);
        put_opt(&mut sections, &mut counters, "disc_map", &self.opt_disc);
        counters.insert("iterations".to_string(), self.iterations);
        counters.insert("fingerprint.vae1".to_string(), self.vae1_fingerprint);
        counters.insert("fingerprint.vae2".to_string(), self.vae2_fingerprint);
        Checkpoint {
            kind: "mapping".into(),
            config: cfg.to_text(),
            rng: RngState::capture(&self.rng),
            counters,
            sections,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<MappingRun> {
        ckpt.expect_kind("mapping")?;
        let cfg = checkpoint_config(ckpt)?;
        let m = &cfg.model;
        let mut mspec = m.mapping.clone();
        mspec.latent = m.vae.latent;
        let fresh = Mapping::new(mspec, &mut init_rng());
        let mapping = Mapping {
            params: load_params(ckpt, "mapping", fresh.params.clone())?,
            ..fresh
        };
        let fresh = ImageDisc::new(m.vae.channels, m.disc_width, &mut init_rng());
        let disc = ImageDisc {
            params: load_params(ckpt, "disc_map", fresh.params.clone())?,
            ..fresh
        };
        Ok(MappingRun {
            opt_mapping: get_opt(ckpt, &cfg, "mapping", &mapping.params)?,
            opt_disc: get_opt(ckpt, &cfg, "disc_map", &disc.params)?,
            mapping,
            disc,
            rng: ckpt.rng.restore(),
            iterations: ckpt.counter("iterations")?,
            vae1_fingerprint: ckpt.counter("fingerprint.vae1")?,
            vae2_fingerprint: ckpt.counter("fingerprint.vae2")?,
        })
    }
}

/// Stage II: learns the latent mapping from `E_X(x)` to `E_Y(y)` on paired
/// data with both VAEs frozen.
pub fn train_stage2(
    pairs: &[DegradedPair],
    vae1: &Vae,
    vae2: &Vae,
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<MappingRun> {
    cfg.validate()?;
    let degraded: Vec<Image> = pairs.iter().map(|p| p.degraded.clone()).collect();
    check_images("pairs", &degraded, cfg)?;
    let before = (vae1.params.fingerprint(), vae2.params.fingerprint());
    let latents = LatentPairs::encode(
        &dihedral_pairs(&reseeded_pairs(pairs, cfg.reseed)?, cfg.augment)?,
        vae1,
        vae2,
    )?;
    let mut run = MappingRun::new(cfg, vae1, vae2);
    for iter in 0..iterations(cfg, &cfg.stage2) {
        let lr = lr_for(cfg, &cfg.stage2, iter)?;
        let idx = sample_indices(&mut run.rng, latents.z_x.len(), cfg.batch);
        let [z_x, z_y, y_rec, mask] = latents.batch(&idx, cfg.crop, &mut run.rng)?;
        let batch = MappingBatch {
            z_x: &z_x,
            z_y: &z_y,
            y_rec: &y_rec,
            mask: &mask,
        };
        let values = run.step(cfg, vae2, &batch, lr, iter)?;
        log_line(log, iter, &values)?;
    }
    if before != (run.vae1_fingerprint, run.vae2_fingerprint) {
        return Err(Error::Contract(
            "frozen VAE fingerprints drifted during stage 2".into(),
        ));
    }
    run.check_frozen(vae1, vae2)?;
    Ok(run)
}

/// Loads the VAE stored under `section` of a stage-1 checkpoint.
pub fn load_vae(ckpt: &Checkpoint, section: &str) -> Result<Vae> {
    let cfg = checkpoint_config(ckpt)?;
    let spec = cfg.model.vae.clone();
    Ok(Vae {
        params: load_params(
            ckpt,
            section,
            Vae::new(spec.clone(), &mut init_rng()).params,
        )?,
        spec,
    })
}
