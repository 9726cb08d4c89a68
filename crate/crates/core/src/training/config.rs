use crate::error::{Error, Result};
use crate::losses::{FocalParams, LossWeights};
use crate::nets::ModelSpec;

/// Learning-rate schedule of one training phase, in epochs of
/// [`TrainConfig::epoch_iters`] iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub epochs: usize,
    /// Last epoch at full rate; the rate then falls linearly to 0 at `epochs`.
    pub decay_start: usize,
}

impl Schedule {
    pub fn new(lr: f64, epochs: usize, decay_start: usize) -> Self {
        Schedule {
            lr,
            epochs,
            decay_start,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Parameter(format!(
                "{name}.lr must be a non-negative number"
            )));
        }
        if self.decay_start > self.epochs {
            return Err(Error::Parameter(format!(
                "{name}.decay_start {} exceeds {name}.epochs {}",
                self.decay_start, self.epochs
            )));
        }
        Ok(())
    }

    /// Rate at a (possibly fractional) epoch in `[0, epochs]`. A schedule
    /// with `decay_start == epochs` never decays.
    pub fn lr_at(&self, epoch: f64) -> Result<f64> {
        if !(epoch >= 0.0 && epoch <= self.epochs as f64) {
            return Err(Error::Parameter(format!(
                "epoch {epoch} outside [0, {}]",
                self.epochs
            )));
        }
        let start = self.decay_start as f64;
        if epoch <= start || self.decay_start == self.epochs {
            return Ok(self.lr);
        }
        let span = (self.epochs - self.decay_start) as f64;
        Ok(self.lr * ((self.epochs as f64 - epoch) / span).max(0.0))
    }
}

pub fn lr_at(schedule: &Schedule, epoch: f64) -> Result<f64> {
    schedule.lr_at(epoch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch: usize,
    /// Square training crop; must be divisible by 4.
    pub crop: usize,
    pub epoch_iters: usize,
    pub stage1: Schedule,
    pub stage2: Schedule,
    /// Detector phase on synthetic pairs.
    pub detector: Schedule,
    /// Detector finetune phase on pseudo-real pairs.
    pub finetune: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip: f64,
    /// Loss values above this abort training.
    pub divergence: f64,
    pub weights: LossWeights,
    /// Sample `z` during VAE training; off gives deterministic codes.
    pub sample_latent: bool,
    /// Random flips and quarter turns of stage-1 crops.
    pub augment: bool,
    /// Extra re-seeded degradations of each stage-2 training pair.
    pub reseed: usize,
    pub focal: FocalParams,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            batch: 8,
            crop: 32,
            epoch_iters: 10,
            stage1: Schedule::new(2e-3, 100, 50),
            stage2: Schedule::new(2e-3, 100, 50),
            detector: Schedule::new(2e-3, 150, 100),
            finetune: Schedule::new(5e-4, 30, 15),
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip: 10.0,
            divergence: 1e6,
            weights: LossWeights {
                kl: 0.02,
                gan: 0.1,
                ..LossWeights::default()
            },
            sample_latent: true,
            augment: true,
            reseed: 7,
            focal: FocalParams::default(),
            model: toy_model(),
        }
    }
}

/// Wider VAEs than [`ModelSpec::default`], sized for the 32×32 toy corpus.
fn toy_model() -> ModelSpec {
    let mut m = ModelSpec::default();
    m.vae.width1 = 32;
    m.vae.width2 = 48;
    m.vae.latent = 32;
    m.mapping.latent = 32;
    m
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epoch_iters == 0 {
            return Err(Error::Parameter(
                "batch and epoch_iters must be positive".into(),
            ));
        }
        if self.crop == 0 || self.crop % 4 != 0 {
            return Err(Error::Parameter(format!(
                "crop {} must be a positive multiple of 4",
                self.crop
            )));
        }
        for (name, s) in self.schedules() {
            s.validate(name)?;
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.adam_eps <= 0.0
        {
            return Err(Error::Parameter(
                "Adam betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        if !(self.clip > 0.0 && self.divergence > 0.0) {
            return Err(Error::Parameter(
                "clip and divergence thresholds must be positive".into(),
            ));
        }
        self.weights.validate()?;
        let f = &self.focal;
        if !(f.gamma >= 0.0 && f.alpha_pos >= 0.0 && f.alpha_neg >= 0.0) {
            return Err(Error::Parameter(
                "focal parameters must be non-negative".into(),
            ));
        }
        let m = &self.model;
        let widths = [
            m.vae.channels,
            m.vae.width1,
            m.vae.width2,
            m.vae.latent,
            m.disc_width,
            m.latent_disc_width,
            m.unet.width,
        ];
        if widths.contains(&0) {
            return Err(Error::Parameter("network widths must be positive".into()));
        }
        if m.vae.channels != 1 && m.vae.channels != 3 {
            return Err(Error::Parameter("model.channels must be 1 or 3".into()));
        }
        Ok(())
    }

    fn schedules(&self) -> [(&'static str, &Schedule); 4] {
        [
            ("stage1", &self.stage1),
            ("stage2", &self.stage2),
            ("detector", &self.detector),
            ("finetune", &self.finetune),
        ]
    }

    /// Every setting as `(key, value)`, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("seed", self.seed.to_string());
        put("batch", self.batch.to_string());
        put("crop", self.crop.to_string());
        put("epoch_iters", self.epoch_iters.to_string());
        for (name, s) in self.schedules() {
            put(&format!("{name}.lr"), s.lr.to_string());
            put(&format!("{name}.epochs"), s.epochs.to_string());
            put(&format!("{name}.decay_start"), s.decay_start.to_string());
        }
        put("adam.beta1", self.beta1.to_string());
        put("adam.beta2", self.beta2.to_string());
        put("adam.eps", self.adam_eps.to_string());
        put("clip", self.clip.to_string());
        put("divergence", self.divergence.to_string());
        let w = &self.weights;
        put("weights.alpha", w.alpha.to_string());
        put("weights.lambda1", w.lambda1.to_string());
        put("weights.lambda2", w.lambda2.to_string());
        put("weights.kl", w.kl.to_string());
        put("weights.gan", w.gan.to_string());
        put("weights.latent_adv", w.latent_adv.to_string());
        put("sample_latent", self.sample_latent.to_string());
        put("augment", self.augment.to_string());
        put("reseed", self.reseed.to_string());
        put("focal.gamma", self.focal.gamma.to_string());
        put("focal.alpha_pos", self.focal.alpha_pos.to_string());
        put("focal.alpha_neg", self.focal.alpha_neg.to_string());
        let m = &self.model;
        put("model.channels", m.vae.channels.to_string());
        put("model.vae.width1", m.vae.width1.to_string());
        put("model.vae.width2", m.vae.width2.to_string());
        put("model.vae.latent", m.vae.latent.to_string());
        put("model.vae.res_blocks", m.vae.res_blocks.to_string());
        put(
            "model.mapping.local_blocks",
            m.mapping.local_blocks.to_string(),
        );
        put(
            "model.mapping.global_blocks",
            m.mapping.global_blocks.to_string(),
        );
        put("model.disc_width", m.disc_width.to_string());
        put("model.latent_disc_width", m.latent_disc_width.to_string());
        put("model.unet.width", m.unet.width.to_string());
        out
    }

    /// Sets one key. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if let Some((head, field)) = key.split_once('.') {
            let s = match head {
                "stage1" => Some(&mut self.stage1),
                "stage2" => Some(&mut self.stage2),
                "detector" => Some(&mut self.detector),
                "finetune" => Some(&mut self.finetune),
                _ => None,
            };
            if let Some(s) = s {
                match field {
                    "lr" => s.lr = parse(key, value)?,
                    "epochs" => s.epochs = parse(key, value)?,
                    "decay_start" => s.decay_start = parse(key, value)?,
                    _ => return Ok(false),
                }
                return Ok(true);
            }
        }
        let m = &mut self.model;
        let w = &mut self.weights;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "crop" => self.crop = parse(key, value)?,
            "epoch_iters" => self.epoch_iters = parse(key, value)?,
            "adam.beta1" => self.beta1 = parse(key, value)?,
            "adam.beta2" => self.beta2 = parse(key, value)?,
            "adam.eps" => self.adam_eps = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "divergence" => self.divergence = parse(key, value)?,
            "weights.alpha" => w.alpha = parse(key, value)?,
            "weights.lambda1" => w.lambda1 = parse(key, value)?,
            "weights.lambda2" => w.lambda2 = parse(key, value)?,
            "weights.kl" => w.kl = parse(key, value)?,
            "weights.gan" => w.gan = parse(key, value)?,
            "weights.latent_adv" => w.latent_adv = parse(key, value)?,
            "sample_latent" => self.sample_latent = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "reseed" => self.reseed = parse(key, value)?,
            "focal.gamma" => self.focal.gamma = parse(key, value)?,
            "focal.alpha_pos" => self.focal.alpha_pos = parse(key, value)?,
            "focal.alpha_neg" => self.focal.alpha_neg = parse(key, value)?,
            "model.channels" => {
                m.vae.channels = parse(key, value)?;
                m.unet.channels = m.vae.channels;
            }
            "model.vae.width1" => m.vae.width1 = parse(key, value)?,
            "model.vae.width2" => m.vae.width2 = parse(key, value)?,
            "model.vae.latent" => {
                m.vae.latent = parse(key, value)?;
                m.mapping.latent = m.vae.latent;
            }
            "model.vae.res_blocks" => m.vae.res_blocks = parse(key, value)?,
            "model.mapping.local_blocks" => m.mapping.local_blocks = parse(key, value)?,
            "model.mapping.global_blocks" => m.mapping.global_blocks = parse(key, value)?,
            "model.disc_width" => m.disc_width = parse(key, value)?,
            "model.latent_disc_width" => m.latent_disc_width = parse(key, value)?,
            "model.unet.width" => m.unet.width = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key = value` lines of [`entries`](Self::entries).
    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses text produced by [`to_text`](Self::to_text), starting from
    /// defaults. Unknown keys are errors.
    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                detail: format!("expected `key = value`, got `{line}`"),
            })?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("unknown key `{}`", k.trim()),
                });
            }
        }
        Ok(cfg)
    }
}
