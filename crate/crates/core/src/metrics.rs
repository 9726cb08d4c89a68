//! Image-quality, distribution-gap and detection metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;

fn check_same(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            op,
            format!(
                "{}x{}x{} vs {}x{}x{}",
                a.width(),
                a.height(),
                a.channels(),
                b.width(),
                b.height(),
                b.channels()
            ),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    check_same(a, b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 8;

/// Mean SSIM over every `window × window` patch (stride 1) and channel,
/// with uniform weights and constants `(0.01 peak)²`, `(0.03 peak)²`.
pub fn ssim(a: &Image, b: &Image, window: usize, peak: f64) -> Result<f64> {
    check_same(a, b, "ssim")?;
    if window == 0 || a.width() < window || a.height() < window {
        return Err(Error::shape(
            "ssim",
            format!(
                "{}x{} image smaller than window {window}",
                a.width(),
                a.height()
            ),
        ));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        for y0 in 0..=a.height() - window {
            for x0 in 0..=a.width() - window {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + window {
                    for x in x0..x0 + window {
                        let (u, v) = (a.get(x, y, c), b.get(x, y, c));
                        sa += u;
                        sb += v;
                        saa += u * u;
                        sbb += v * v;
                        sab += u * v;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = saa / n - ma * ma;
                let vb = sbb / n - mb * mb;
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// 1-D Wasserstein-1 distance between empirical distributions,
/// `∫ |F_a(t) − F_b(t)| dt`. Both slices must be sorted.
fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut dist = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        dist += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        prev = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    dist
}

/// Mean over `projections` random unit directions of the 1-D transport
/// distance between the projected sets.
pub fn sliced_wasserstein(
    set_a: &[Vec<f64>],
    set_b: &[Vec<f64>],
    projections: usize,
    seed: u64,
) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::DegenerateData(
            "sliced Wasserstein needs non-empty sets".into(),
        ));
    }
    if projections == 0 {
        return Err(Error::Parameter("projections must be positive".into()));
    }
    let d = set_a[0].len();
    if d == 0 || set_a.iter().chain(set_b).any(|v| v.len() != d) {
        return Err(Error::shape(
            "sliced_wasserstein",
            "every vector must share one non-zero dimension",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..projections {
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let project = |set: &[Vec<f64>]| {
            let mut p: Vec<f64> = set
                .iter()
                .map(|v| v.iter().zip(&u).map(|(x, y)| x * y).sum())
                .collect();
            p.sort_by(f64::total_cmp);
            p
        };
        total += wasserstein_1d(&project(set_a), &project(set_b));
    }
    Ok(total / projections as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// Decreasing score thresholds; the point `(0, 0)` uses `+∞`.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// ROC over every unique score, predicting positive when `score >= t`.
/// Tied scores move along a diagonal, which averages their ordering.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "roc_auc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateData(
            "ROC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        thresholds.push(t);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    let auc = (1..tpr.len())
        .map(|i| (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) / 2.0)
        .sum();
    Ok(RocCurve {
        thresholds,
        tpr,
        fpr,
        auc,
    })
}

/// `name=value` lines, in the given order.
pub fn format_summary(entries: &[(String, f64)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::shapes_corpus;
    use proptest::prelude::*;
    use rand::Rng;

    fn grey(w: usize, h: usize, data: Vec<f64>) -> Image {
        Image::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = grey(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = grey(2, 2, a.data().iter().map(|v| v + 16.0 / 255.0).collect());
        let expected = 20.0 * (255.0f64 / 16.0).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 24.03).abs() < 0.05);
        assert!(psnr(&a, &grey(1, 4, vec![0.0; 4]), 1.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = grey(
            16,
            16,
            (0..256).map(|_| rng.random_range(0.2..0.8)).collect(),
        );
        let noise: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for level in [0.01, 0.02, 0.05, 0.1] {
            let noisy = grey(
                16,
                16,
                base.data()
                    .iter()
                    .zip(&noise)
                    .map(|(v, n)| v + level * n)
                    .collect(),
            );
            let p = psnr(&base, &noisy, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_examples() {
        let corpus = shapes_corpus(8, 32, 3, 5);
        for a in &corpus {
            assert!((ssim(a, a, SSIM_WINDOW, 1.0).unwrap() - 1.0).abs() < 1e-12);
            let inv = Image::new(32, 32, 3, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
            let s = ssim(a, &inv, SSIM_WINDOW, 1.0).unwrap();
            assert!(s < 0.5, "inverted ssim {s}");
            assert!((s - ssim(&inv, a, SSIM_WINDOW, 1.0).unwrap()).abs() < 1e-12);
        }
        let small = grey(4, 4, vec![0.5; 16]);
        assert!(ssim(&small, &small, SSIM_WINDOW, 1.0).is_err());
    }

    #[test]
    fn sliced_wasserstein_examples() {
        let a = vec![vec![0.0, 1.0], vec![2.0, -1.0]];
        assert_eq!(sliced_wasserstein(&a, &a, 16, 3).unwrap(), 0.0);
        let d = sliced_wasserstein(&[vec![1.5]], &[vec![-0.5]], 8, 3).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert!(sliced_wasserstein(&a, &[vec![1.0]], 4, 0).is_err());
        assert!(sliced_wasserstein(&a, &[], 4, 0).is_err());
    }

    #[test]
    fn sliced_wasserstein_shifted_gaussian() {
        let dim = 4;
        let delta = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<Vec<f64>> {
            (0..256)
                .map(|_| {
                    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                    v[0] += shift;
                    v
                })
                .collect()
        };
        let a = sample(&mut rng, 0.0);
        let b = sample(&mut rng, delta);
        // E|u_1| for u uniform on the unit sphere, by Monte Carlo.
        let mut acc = 0.0;
        let trials = 200_000;
        for _ in 0..trials {
            let u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = u.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            acc += u[0].abs() / n;
        }
        let expected = delta * acc / trials as f64;
        let got = sliced_wasserstein(&a, &b, 64, 7).unwrap();
        assert!(
            (got - expected).abs() / expected < 0.2,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn unequal_sizes_match_replicated_points() {
        let a = vec![vec![0.0], vec![1.0]];
        let b = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        assert!(sliced_wasserstein(&a, &b, 4, 1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn roc_examples() {
        let r = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        let rev = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(rev.auc, 0.0);
        let tied = roc_auc(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn roc_random_labels_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..10_000).map(|_| rng.random()).collect();
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        assert!((0.47..=0.53).contains(&auc), "auc {auc}");
    }

    proptest! {
        #[test]
        fn roc_invariants(raw in proptest::collection::vec((0u8..20, any::<bool>()), 4..60)) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let r = roc_auc(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.auc));
            prop_assert!(r.tpr.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(r.fpr.windows(2).all(|w| w[0] <= w[1]));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flipped = roc_auc(&neg, &labels).unwrap();
            prop_assert!((flipped.auc - (1.0 - r.auc)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() + 2.0).collect();
            prop_assert!((roc_auc(&warped, &labels).unwrap().auc - r.auc).abs() < 1e-12);
        }

        #[test]
        fn sliced_wasserstein_symmetric(
            a in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..12),
            b in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..12),
        ) {
            let ab = sliced_wasserstein(&a, &b, 8, 5).unwrap();
            let ba = sliced_wasserstein(&b, &a, 8, 5).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
        }
    }
}
