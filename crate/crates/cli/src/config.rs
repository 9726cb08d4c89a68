//! The run configuration file: every [`TrainConfig`] key plus dataset,
//! ablation and path settings, one `key = value` per line.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use relens_core::degrade::RecipeRange;
use relens_core::training::TrainConfig;
use relens_core::{Error, Result};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "RETRO_SEED";

/// Named recipe ranges selectable from the config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecipePreset {
    Synthetic,
    PseudoReal,
}

impl RecipePreset {
    pub fn range(self) -> RecipeRange {
        match self {
            RecipePreset::Synthetic => RecipeRange::synthetic(),
            RecipePreset::PseudoReal => RecipeRange::pseudo_real(),
        }
    }
}

impl fmt::Display for RecipePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecipePreset::Synthetic => "synthetic",
            RecipePreset::PseudoReal => "pseudo_real",
        })
    }
}

impl FromStr for RecipePreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "synthetic" => Ok(RecipePreset::Synthetic),
            "pseudo_real" => Ok(RecipePreset::PseudoReal),
            _ => Err(format!(
                "unknown recipe preset `{s}` (synthetic, pseudo_real)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Pairs written by `synth` when `--count` is absent.
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    /// Recipes for the synthetic pairs (domains X and Y).
    pub recipes: RecipePreset,
    /// Recipes for the pseudo-real set (domain R).
    pub real_recipes: RecipePreset,
    /// Trailing entries of a dataset kept out of training for AUC reports.
    pub held_out: usize,
    pub ablate_images: usize,
    pub ablate_slack: f64,
    /// Use the synthetic recipes for both domains.
    pub ablate_control: bool,
    /// Fallbacks for `--data` and `--out`; empty means unset.
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            count: 64,
            size: 32,
            channels: 3,
            recipes: RecipePreset::Synthetic,
            real_recipes: RecipePreset::PseudoReal,
            held_out: 16,
            ablate_images: 32,
            ablate_slack: 0.05,
            ablate_control: false,
            data: PathBuf::new(),
            out: PathBuf::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Parameter(format!("invalid value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = self.train.entries();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("synth.count", self.count.to_string());
        put("synth.size", self.size.to_string());
        put("synth.channels", self.channels.to_string());
        put("synth.recipes", self.recipes.to_string());
        put("synth.real_recipes", self.real_recipes.to_string());
        put("data.held_out", self.held_out.to_string());
        put("ablate.images", self.ablate_images.to_string());
        put("ablate.slack", self.ablate_slack.to_string());
        put("ablate.control", self.ablate_control.to_string());
        put("paths.data", self.data.display().to_string());
        put("paths.out", self.out.display().to_string());
        out
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.train.set(key, value)? {
            if key == "model.channels" {
                self.channels = self.train.model.vae.channels;
            }
            return Ok(());
        }
        match key {
            "synth.count" => self.count = parse(key, value)?,
            "synth.size" => self.size = parse(key, value)?,
            "synth.channels" => {
                self.channels = parse(key, value)?;
                self.train.model.vae.channels = self.channels;
                self.train.model.unet.channels = self.channels;
            }
            "synth.recipes" => self.recipes = parse(key, value)?,
            "synth.real_recipes" => self.real_recipes = parse(key, value)?,
            "data.held_out" => self.held_out = parse(key, value)?,
            "ablate.images" => self.ablate_images = parse(key, value)?,
            "ablate.slack" => self.ablate_slack = parse(key, value)?,
            "ablate.control" => self.ablate_control = parse(key, value)?,
            "paths.data" => self.data = value.into(),
            "paths.out" => self.out = value.into(),
            _ => return Err(Error::Parameter(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                detail: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Defaults, then the file, then `RETRO_SEED`, then `overrides` in order.
    pub fn resolve(
        file: Option<&std::path::Path>,
        env_seed: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig> {
        let mut cfg = match file {
            Some(p) => RunConfig::from_text(&std::fs::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        if let Some(s) = env_seed {
            cfg.train.seed = parse(SEED_ENV, s.trim())?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_idempotent() {
        let mut cfg = RunConfig::default();
        cfg.set("synth.count", "7").unwrap();
        cfg.set("ablate.control", "true").unwrap();
        cfg.set("paths.out", "/tmp/x").unwrap();
        cfg.set("weights.kl", "0.25").unwrap();
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg =
            RunConfig::from_text("# header\n\nsynth.count = 3 # trailing\n  seed=9\n").unwrap();
        assert_eq!(cfg.count, 3);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = RunConfig::from_text("synth.count = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn bad_values_are_errors() {
        assert!(RunConfig::from_text("synth.recipes = sepia\n").is_err());
        assert!(RunConfig::from_text("batch = -1\n").is_err());
        assert!(RunConfig::from_text("no equals sign\n").is_err());
    }

    #[test]
    fn precedence_flag_over_env_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed = 5\nsynth.count = 2\n").unwrap();
        let file_only = RunConfig::resolve(Some(&path), None, &[]).unwrap();
        assert_eq!((file_only.train.seed, file_only.count), (5, 2));
        let env = RunConfig::resolve(Some(&path), Some("6"), &[]).unwrap();
        assert_eq!(env.train.seed, 6);
        let flag =
            RunConfig::resolve(Some(&path), Some("6"), &[("seed".into(), "7".into())]).unwrap();
        assert_eq!(flag.train.seed, 7);
        assert_eq!(
            RunConfig::resolve(None, None, &[]).unwrap(),
            RunConfig::default()
        );
        assert!(RunConfig::resolve(None, Some("x"), &[]).is_err());
    }

    #[test]
    fn channels_stay_in_sync() {
        let mut cfg = RunConfig::default();
        cfg.set("synth.channels", "1").unwrap();
        assert_eq!(cfg.train.model.vae.channels, 1);
        assert_eq!(cfg.train.model.unet.channels, 1);
        cfg.set("model.channels", "3").unwrap();
        assert_eq!(cfg.channels, 3);
    }

    proptest! {
        #[test]
        fn parse_serialize_parse(count in 0usize..500, slack in 0.0f64..1.0, seed in any::<u64>(), control: bool, lr in 1e-6f64..1.0) {
            let mut cfg = RunConfig::default();
            cfg.count = count;
            cfg.ablate_slack = slack;
            cfg.ablate_control = control;
            cfg.train.seed = seed;
            cfg.train.stage2.lr = lr;
            let once = RunConfig::from_text(&cfg.to_text()).unwrap();
            prop_assert_eq!(&once, &cfg);
            prop_assert_eq!(RunConfig::from_text(&once.to_text()).unwrap().to_text(), once.to_text());
        }
    }
}
