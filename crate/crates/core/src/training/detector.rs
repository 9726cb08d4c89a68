use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::checkpoint::{Checkpoint, RngState};
use super::config::{Schedule, TrainConfig};
use super::data::{crop_origin, dihedral, dihedral_mask, sample_indices};
use super::stages::{adam, checkpoint_config, collect, iterations, log_line, lr_for, update};
use crate::degrade::{derive_seed, DegradedPair};
use crate::error::{Error, Result};
use crate::losses::focal_loss;
use crate::metrics::roc_auc;
use crate::nets::{detect_logits, Unet};
use crate::tensor::{Tape, Tensor};

const TAG_DETECTOR: u64 = 104;

/// Held-out AUCs after one detector phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub phase: String,
    pub synthetic_auc: f64,
    pub pseudo_real_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorRun {
    pub unet: Unet,
    pub opt: AdamState,
    pub rng: ChaCha8Rng,
    pub iterations: u64,
    pub phases: Vec<PhaseReport>,
}

/// Pixel-level ROC AUC of the detector over `pairs`.
pub fn detector_auc(unet: &Unet, pairs: &[DegradedPair]) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for p in pairs {
        scores.extend(detect_logits(unet, &p.degraded)?);
        labels.extend(p.mask.binary().iter().map(|&b| b == 1));
    }
    Ok(roc_auc(&scores, &labels)?.auc)
}

fn check_pairs(name: &str, pairs: &[DegradedPair], cfg: &TrainConfig) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::DegenerateData(format!(
            "{name} detector set is empty"
        )));
    }
    if pairs.iter().all(|p| p.mask.count() == 0) {
        return Err(Error::DegenerateData(format!(
            "{name} detector set has no defect pixels"
        )));
    }
    for p in pairs {
        let img = &p.degraded;
        if img.channels() != cfg.model.unet.channels
            || img.width() < cfg.crop
            || img.height() < cfg.crop
        {
            return Err(Error::DegenerateData(format!(
                "{name} image {}x{}x{} does not fit the detector",
                img.width(),
                img.height(),
                img.channels()
            )));
        }
    }
    Ok(())
}

impl DetectorRun {
    pub fn new(cfg: &TrainConfig) -> Self {
        let g = |i| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i));
        let mut spec = cfg.model.unet.clone();
        spec.channels = cfg.model.vae.channels;
        let unet = Unet::new(spec, &mut g(8));
        DetectorRun {
            opt: adam(cfg, &unet.params),
            unet,
            rng: g(TAG_DETECTOR),
            iterations: 0,
            phases: Vec::new(),
        }
    }

    fn batch(&mut self, pairs: &[DegradedPair], cfg: &TrainConfig) -> Result<(Tensor, Tensor)> {
        let idx = sample_indices(&mut self.rng, pairs.len(), cfg.batch);
        let mut xs = Vec::with_capacity(idx.len());
        let mut ms = Vec::with_capacity(idx.len());
        for i in idx {
            let p = &pairs[i];
            let (w, h) = (p.degraded.width(), p.degraded.height());
            let (ox, oy) = crop_origin(&mut self.rng, w, h, cfg.crop, 1)?;
            let k = if cfg.augment {
                self.rng.random_range(0..8)
            } else {
                0
            };
            xs.push(dihedral(&p.degraded.crop(ox, oy, cfg.crop, cfg.crop)?, k)?.to_tensor());
            ms.push(dihedral_mask(&p.mask.crop(ox, oy, cfg.crop, cfg.crop)?, k)?.to_tensor());
        }
        Ok((Tensor::stack(&xs)?, Tensor::stack(&ms)?))
    }

    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        x: Tensor,
        target: &Tensor,
        lr: f64,
        iter: usize,
    ) -> Result<Vec<(String, f64)>> {
        let mut tape = Tape::new();
        let b = self.unet.params.bind(&mut tape, true);
        let xv = tape.constant(x);
        let logits = self.unet.forward(&mut tape, &b, xv)?;
        let loss = focal_loss(&mut tape, logits, target, &cfg.focal)?;
        let g = tape.backward(loss)?;
        update(&mut self.unet.params, &mut self.opt, &b, &g, lr, cfg.clip)?;
        self.iterations += 1;
        collect(
            &tape,
            "det.",
            &[("focal".to_string(), loss)],
            iter,
            cfg.divergence,
        )
    }

    fn phase(
        &mut self,
        name: &str,
        train: &[DegradedPair],
        schedule: &Schedule,
        cfg: &TrainConfig,
        iter0: usize,
        log: &mut dyn Write,
    ) -> Result<usize> {
        let n = iterations(cfg, schedule);
        for i in 0..n {
            let lr = lr_for(cfg, schedule, i)?;
            let (x, m) = self.batch(train, cfg)?;
            let mut values = self.step(cfg, x, &m, lr, iter0 + i)?;
            for v in &mut values {
                v.0 = v.0.replacen("det.", &format!("det.{name}."), 1);
            }
            log_line(log, iter0 + i, &values)?;
        }
        Ok(iter0 + n)
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut sections = BTreeMap::new();
        let mut counters = BTreeMap::new();
        sections.insert("unet".to_string(), self.unet.params.clone());
        sections.insert("opt.unet.m".to_string(), self.opt.m.clone());
        sections.insert("opt.unet.v".to_string(), self.opt.v.clone());
        counters.insert("opt.unet.t".to_string(), self.opt.t);
        counters.insert("iterations".to_string(), self.iterations);
        Checkpoint {
            kind: "detector".into(),
            config: cfg.to_text(),
            rng: RngState::capture(&self.rng),
            counters,
            sections,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<DetectorRun> {
        ckpt.expect_kind("detector")?;
        let cfg = checkpoint_config(ckpt)?;
        let mut fresh = DetectorRun::new(&cfg);
        let wrap = |e: Error| Error::Checkpoint {
            field: "section",
            detail: format!("`unet`: {e}"),
        };
        fresh
            .unet
            .params
            .assign(ckpt.section("unet")?)
            .map_err(wrap)?;
        fresh
            .opt
            .m
            .assign(ckpt.section("opt.unet.m")?)
            .map_err(wrap)?;
        fresh
            .opt
            .v
            .assign(ckpt.section("opt.unet.v")?)
            .map_err(wrap)?;
        fresh.opt.t = ckpt.counter("opt.unet.t")?;
        fresh.iterations = ckpt.counter("iterations")?;
        fresh.rng = ckpt.rng.restore();
        Ok(fresh)
    }
}

/// Two-phase detector training: synthetic pairs first, then a finetune on
/// pseudo-real pairs. Held-out AUCs are recorded after each phase.
pub fn train_detector(
    synthetic: &[DegradedPair],
    pseudo_real: &[DegradedPair],
    held_synthetic: &[DegradedPair],
    held_pseudo_real: &[DegradedPair],
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<DetectorRun> {
    cfg.validate()?;
    check_pairs("synthetic", synthetic, cfg)?;
    check_pairs("held-out synthetic", held_synthetic, cfg)?;
    check_pairs("held-out pseudo-real", held_pseudo_real, cfg)?;
    let finetune = iterations(cfg, &cfg.finetune) > 0;
    if finetune {
        check_pairs("pseudo-real", pseudo_real, cfg)?;
    }
    let mut run = DetectorRun::new(cfg);
    let report = |run: &DetectorRun, phase: &str| -> Result<PhaseReport> {
        Ok(PhaseReport {
            phase: phase.into(),
            synthetic_auc: detector_auc(&run.unet, held_synthetic)?,
            pseudo_real_auc: detector_auc(&run.unet, held_pseudo_real)?,
        })
    };
    let iter = run.phase("synthetic", synthetic, &cfg.detector, cfg, 0, log)?;
    run.phases.push(report(&run, "synthetic")?);
    if finetune {
        run.phase("finetune", pseudo_real, &cfg.finetune, cfg, iter, log)?;
        run.phases.push(report(&run, "finetune")?);
    }
    Ok(run)
}
