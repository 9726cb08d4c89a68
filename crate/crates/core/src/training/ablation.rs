use std::fmt;
use std::io::Write;

use super::config::TrainConfig;
use super::data::position_vectors;
use super::stages::{encode_means, train_vae1};
use crate::error::Result;
use crate::image::Image;
use crate::metrics::sliced_wasserstein;
use crate::nets::Vae;

pub const GAP_PROJECTIONS: usize = 128;

/// The three VAE₁ training recipes compared by the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// No KL term and deterministic codes.
    PlainAe,
    Vae,
    VaeLatentAdv,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::PlainAe, Variant::Vae, Variant::VaeLatentAdv];

    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::PlainAe => {
                cfg.weights.kl = 0.0;
                cfg.weights.latent_adv = 0.0;
                cfg.sample_latent = false;
            }
            Variant::Vae => {
                cfg.weights.latent_adv = 0.0;
            }
            Variant::VaeLatentAdv => {}
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::PlainAe => "ae",
            Variant::Vae => "vae",
            Variant::VaeLatentAdv => "vae+adv",
        })
    }
}

/// Sliced Wasserstein distance between the encoder means of `r` and `x`,
/// pooling every latent position of every image.
pub fn latent_gap(vae: &Vae, r: &[Image], x: &[Image], seed: u64) -> Result<f64> {
    let collect = |imgs: &[Image]| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for t in encode_means(vae, imgs)? {
            out.extend(position_vectors(&t)?);
        }
        Ok(out)
    };
    sliced_wasserstein(&collect(r)?, &collect(x)?, GAP_PROJECTIONS, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// `Err` holds the divergence message.
    pub distance: std::result::Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub slack: f64,
}

impl AblationReport {
    pub fn diverged(&self) -> bool {
        self.rows.iter().any(|r| r.distance.is_err())
    }

    /// `w(AE) ≥ (1 - slack)·w(VAE)` and `w(VAE) ≥ (1 - slack)·w(VAE+adv)`.
    pub fn trend_holds(&self) -> bool {
        let w: Vec<f64> = match self.rows.iter().map(|r| r.distance.clone()).collect() {
            Ok(w) => w,
            Err(_) => return false,
        };
        w.windows(2).all(|p| p[0] >= (1.0 - self.slack) * p[1])
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            match &r.distance {
                Ok(d) => s.push_str(&format!("{} = {d}\n", r.variant)),
                Err(e) => s.push_str(&format!("{} = diverged ({e})\n", r.variant)),
            }
        }
        s.push_str(&format!("slack = {}\n", self.slack));
        s.push_str(&format!(
            "trend = {}\n",
            if self.trend_holds() {
                "holds"
            } else {
                "violated"
            }
        ));
        s
    }
}

/// Trains VAE₁ under each [`Variant`] on the same data and measures the
/// latent domain gap between `r` and `x`.
pub fn run_ablation(
    r: &[Image],
    x: &[Image],
    base: &TrainConfig,
    slack: f64,
    log: &mut dyn Write,
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let cfg = v.configure(base);
        writeln!(log, "# variant {v}")?;
        let distance = match train_vae1(r, x, &cfg, log) {
            Ok(run) => Ok(latent_gap(&run.vae, r, x, base.seed)?),
            Err(e @ crate::Error::Divergence { .. })
            | Err(e @ crate::Error::NonFiniteGradient { .. }) => Err(e.to_string()),
            Err(e) => return Err(e),
        };
        rows.push(AblationRow {
            variant: v,
            distance,
        });
    }
    Ok(AblationReport { rows, slack })
}
