use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use relens_core::degrade::{derive_seed, shapes_corpus, DegradedPair, RecipeRange};
use relens_core::image::{DefectMask, Image};
use relens_core::io::{
    read_manifest, read_mask, read_png, write_manifest, write_mask_pgm, write_png, ManifestEntry,
};
use relens_core::metrics::{format_summary, psnr, ssim, SSIM_WINDOW};
use relens_core::nets::{detect_mask, restore};
use relens_core::training::{
    data::degrade_all, run_ablation, train_detector, train_stage1, train_stage2, Checkpoint,
    DetectorRun, MappingRun, ToyData, Vae1Run, Vae2Run,
};

use crate::config::RunConfig;
use crate::CliError;

pub const PAIRS_MANIFEST: &str = "manifest.txt";
pub const REAL_MANIFEST: &str = "real.txt";
pub const VAE1_CKPT: &str = "vae1.ckpt";
pub const VAE2_CKPT: &str = "vae2.ckpt";
pub const MAPPING_CKPT: &str = "mapping.ckpt";
pub const DETECTOR_CKPT: &str = "detector.ckpt";
/// Sigmoid probability at or above which `--mask auto` marks a defect.
pub const AUTO_MASK_THRESHOLD: f64 = 0.5;

type Outcome = std::result::Result<(), CliError>;

/// Writes the resolved configuration, one `# key = value` line each.
pub fn log_config(cfg: &RunConfig, log: &mut dyn Write) -> std::io::Result<()> {
    for (k, v) in cfg.entries() {
        writeln!(log, "# {k} = {v}")?;
    }
    Ok(())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes one domain as `<dir>/{clean,degraded,mask}/NNNN.*` plus a manifest.
fn write_domain(out: &Path, dir: &str, manifest: &str, pairs: &[DegradedPair]) -> Outcome {
    let mut entries = Vec::new();
    for sub in ["clean", "degraded", "mask"] {
        create_dir(&out.join(dir).join(sub))?;
    }
    for (i, p) in pairs.iter().enumerate() {
        let rel = |sub: &str, ext: &str| PathBuf::from(dir).join(sub).join(format!("{i:04}.{ext}"));
        let e = ManifestEntry {
            clean: rel("clean", "png"),
            degraded: rel("degraded", "png"),
            mask: rel("mask", "pgm"),
            seed: p.recipe.seed,
        };
        write_png(&out.join(&e.clean), &p.clean)?;
        write_png(&out.join(&e.degraded), &p.degraded)?;
        write_mask_pgm(&out.join(&e.mask), &p.mask)?;
        entries.push(e);
    }
    write_manifest(&out.join(manifest), &entries)?;
    Ok(())
}

/// Synthetic pairs go to `pairs/` with `manifest.txt`; the pseudo-real set
/// goes to `real/` with `real.txt`.
pub fn synth(cfg: &RunConfig, out: &Path, count: usize, log: &mut dyn Write) -> Outcome {
    create_dir(out)?;
    let seed = cfg.train.seed;
    let clean_xy = shapes_corpus(count, cfg.size, cfg.channels, derive_seed(seed, 11));
    let clean_r = shapes_corpus(count, cfg.size, cfg.channels, derive_seed(seed, 12));
    let pairs = degrade_all(&clean_xy, &cfg.recipes.range(), derive_seed(seed, 13))?;
    let real = degrade_all(&clean_r, &cfg.real_recipes.range(), derive_seed(seed, 14))?;
    write_domain(out, "pairs", PAIRS_MANIFEST, &pairs)?;
    write_domain(out, "real", REAL_MANIFEST, &real)?;
    writeln!(
        log,
        "wrote {count} pairs and {count} pseudo-real images to {}",
        out.display()
    )?;
    Ok(())
}

fn load_domain(
    dir: &Path,
    manifest: &str,
    range: &RecipeRange,
) -> std::result::Result<Vec<DegradedPair>, CliError> {
    let path = dir.join(manifest);
    if !path.exists() {
        return Err(CliError::io(format!(
            "{}: no such manifest",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for e in read_manifest(&path)? {
        out.push(DegradedPair {
            clean: read_png(&dir.join(&e.clean))?,
            degraded: read_png(&dir.join(&e.degraded))?,
            mask: read_mask(&dir.join(&e.mask))?,
            recipe: range.sample(e.seed)?,
        });
    }
    Ok(out)
}

/// Reads a `synth` output directory, split into training and held-out parts.
pub fn load_dataset(
    cfg: &RunConfig,
    dir: &Path,
) -> std::result::Result<(ToyData, ToyData), CliError> {
    let data = ToyData {
        pairs: load_domain(dir, PAIRS_MANIFEST, &cfg.recipes.range())?,
        real: load_domain(dir, REAL_MANIFEST, &cfg.real_recipes.range())?,
    };
    let held = cfg
        .held_out
        .min(data.pairs.len().saturating_sub(1))
        .min(data.real.len().saturating_sub(1));
    Ok(data.split(held)?)
}

fn require(path: &Path, hint: &str) -> std::result::Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::missing(format!(
            "missing checkpoint {} ({hint})",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Detector,
}

/// Trains one stage into `out`, logging one line per iteration to
/// `<out>/<stage>.log` after the resolved configuration.
pub fn train(cfg: &RunConfig, stage: Stage, data: &Path, out: &Path) -> Outcome {
    let mut cfg = cfg.clone();
    let (v1, v2) = (out.join(VAE1_CKPT), out.join(VAE2_CKPT));
    let stage1 = if stage == Stage::Two {
        let a = Vae1Run::from_checkpoint(&require(&v1, "run `train --stage 1` first")?)?;
        let b = Vae2Run::from_checkpoint(&require(&v2, "run `train --stage 1` first")?)?;
        cfg.train.model.vae = a.vae.spec.clone();
        cfg.train.model.mapping.latent = a.vae.spec.latent;
        Some((a, b))
    } else {
        None
    };
    let (train, held) = load_dataset(&cfg, data)?;
    create_dir(out)?;
    let name = match stage {
        Stage::One => "stage1",
        Stage::Two => "stage2",
        Stage::Detector => "detector",
    };
    let log_path = out.join(format!("{name}.log"));
    let mut log =
        std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    log_config(&cfg, &mut log)?;
    let t = &cfg.train;
    match stage {
        Stage::One => {
            let (a, b) = train_stage1(
                &train.real_degraded(),
                &train.degraded(),
                &train.clean(),
                t,
                &mut log,
            )?;
            a.to_checkpoint(t).save(&v1)?;
            b.to_checkpoint(t).save(&v2)?;
        }
        Stage::Two => {
            let (a, b) = stage1.expect("loaded above");
            let run = train_stage2(&train.pairs, &a.vae, &b.vae, t, &mut log)?;
            run.to_checkpoint(t).save(&out.join(MAPPING_CKPT))?;
        }
        Stage::Detector => {
            let run = train_detector(
                &train.pairs,
                &train.real,
                &held.pairs,
                &held.real,
                t,
                &mut log,
            )?;
            for p in &run.phases {
                writeln!(
                    log,
                    "# auc {} synthetic={} pseudo_real={}",
                    p.phase, p.synthetic_auc, p.pseudo_real_auc
                )?;
            }
            run.to_checkpoint(t).save(&out.join(DETECTOR_CKPT))?;
        }
    }
    log.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskSource {
    Auto,
    File(PathBuf),
    None,
}

pub fn restore_image(
    input: &Path,
    ckpt_dir: &Path,
    mask: &MaskSource,
    out: &Path,
    log: &mut dyn Write,
) -> Outcome {
    let hint = "run `train --stage 1` and `train --stage 2` first";
    let v1 = Vae1Run::from_checkpoint(&require(&ckpt_dir.join(VAE1_CKPT), hint)?)?;
    let v2 = Vae2Run::from_checkpoint(&require(&ckpt_dir.join(VAE2_CKPT), hint)?)?;
    let map = MappingRun::from_checkpoint(&require(&ckpt_dir.join(MAPPING_CKPT), hint)?)?;
    let image = read_png(input)?;
    let auto = matches!(mask, MaskSource::Auto);
    let m = match mask {
        MaskSource::Auto => {
            let det = DetectorRun::from_checkpoint(&require(
                &ckpt_dir.join(DETECTOR_CKPT),
                "run `train --stage detector` first",
            )?)?;
            let m = detect_mask(&det.unet, &image, AUTO_MASK_THRESHOLD)?;
            writeln!(
                log,
                "mask: auto, detector threshold {AUTO_MASK_THRESHOLD}, {} defect pixels",
                m.count()
            )?;
            m
        }
        MaskSource::File(p) => {
            let m = read_mask(p)?;
            writeln!(log, "mask: file {}, detector skipped", p.display())?;
            m
        }
        MaskSource::None => {
            writeln!(log, "mask: none, detector skipped, local branch only")?;
            DefectMask::empty(image.width(), image.height())
        }
    };
    let restored = match restore(&image, &v1.vae, &map.mapping, &v2.vae, &m) {
        // A detected mask that covers every latent position leaves the
        // global branch nothing to attend to.
        Err(relens_core::Error::FullyMasked) if auto => {
            writeln!(
                log,
                "mask: detector masked every latent position, falling back to local branch only"
            )?;
            let empty = DefectMask::empty(image.width(), image.height());
            restore(&image, &v1.vae, &map.mapping, &v2.vae, &empty)?
        }
        r => r?,
    };
    write_png(out, &restored)?;
    writeln!(log, "restored {} -> {}", input.display(), out.display())?;
    Ok(())
}

/// `*.png` files of a directory in name order, or the lines of a list file.
fn restored_list(path: &Path) -> std::result::Result<Vec<PathBuf>, CliError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        files.sort();
        return Ok(files);
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

/// Per-image and mean PSNR/SSIM of the restored and degraded images
/// against the clean ones. Identical images give `psnr=inf`.
pub fn eval(pairs: &Path, restored: &Path) -> std::result::Result<String, CliError> {
    let dir = pairs.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(pairs)?;
    let outputs = restored_list(restored)?;
    if outputs.len() != entries.len() {
        return Err(CliError::input(format!(
            "{} lists {} pairs but {} restored images were given",
            pairs.display(),
            entries.len(),
            outputs.len()
        )));
    }
    let mut rows = Vec::new();
    let mut sums = [0.0; 4];
    for (i, (e, o)) in entries.iter().zip(&outputs).enumerate() {
        let clean = read_png(&dir.join(&e.clean))?;
        let degraded = read_png(&dir.join(&e.degraded))?;
        let out: Image = read_png(o)?;
        let vals = [
            psnr(&out, &clean, 1.0)?,
            ssim(&out, &clean, SSIM_WINDOW, 1.0)?,
            psnr(&degraded, &clean, 1.0)?,
            ssim(&degraded, &clean, SSIM_WINDOW, 1.0)?,
        ];
        for (k, v) in ["psnr", "ssim", "degraded.psnr", "degraded.ssim"]
            .iter()
            .zip(vals)
        {
            rows.push((format!("image.{i:04}.{k}"), v));
        }
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
    }
    let n = entries.len().max(1) as f64;
    let mut summary = vec![("count".to_string(), entries.len() as f64)];
    for (k, s) in [
        "mean.psnr",
        "mean.ssim",
        "mean.degraded.psnr",
        "mean.degraded.ssim",
    ]
    .iter()
    .zip(sums)
    {
        summary.push((k.to_string(), s / n));
    }
    summary.extend(rows);
    Ok(format_summary(&summary))
}

/// Trains the three VAE₁ variants on toy data and writes the report to
/// `out`. Divergence or a violated trend is an ablation failure.
pub fn ablate(cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> Outcome {
    let t = &cfg.train;
    let real = if cfg.ablate_control {
        cfg.recipes
    } else {
        cfg.real_recipes
    };
    let data = ToyData::generate(
        cfg.ablate_images,
        cfg.size,
        cfg.channels,
        t.seed,
        &cfg.recipes.range(),
        &real.range(),
    )?;
    let report = run_ablation(
        &data.real_degraded(),
        &data.degraded(),
        t,
        cfg.ablate_slack,
        log,
    )?;
    let mut text = String::new();
    for (k, v) in cfg.entries() {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    text.push_str(&report.render());
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, &text).map_err(|e| io_err(out, e))?;
    if report.diverged() {
        return Err(CliError::ablation(format!(
            "a variant diverged; see {}",
            out.display()
        )));
    }
    if !report.trend_holds() {
        return Err(CliError::ablation(format!(
            "trend violated; see {}",
            out.display()
        )));
    }
    Ok(())
}
