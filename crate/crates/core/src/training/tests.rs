use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::degrade::RecipeRange;
use crate::nets::{MappingSpec, ParamSet, UnetSpec, VaeSpec};
use crate::tensor::Tensor;
use crate::Error;

fn one_param(values: &[f64]) -> ParamSet {
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::from_vec(values.to_vec()));
    ps
}

fn grads(values: &[f64]) -> BTreeMap<String, Tensor> {
    BTreeMap::from([("w".to_string(), Tensor::from_vec(values.to_vec()))])
}

#[test]
fn adam_zero_gradient_keeps_parameters_and_decays_moments() {
    let mut ps = one_param(&[1.0, -2.0]);
    let mut st = AdamState::new(&ps, 0.5, 0.999, 1e-8);
    adam_step(&mut st, &mut ps, &grads(&[0.3, -0.1]), 0.01).unwrap();
    let after_first = ps.clone();
    let m1 = st.m.get("w").unwrap().data().to_vec();
    // A fresh state with zero gradient leaves parameters alone.
    let mut fresh = one_param(&[1.0, -2.0]);
    let mut fst = AdamState::new(&fresh, 0.5, 0.999, 1e-8);
    adam_step(&mut fst, &mut fresh, &grads(&[0.0, 0.0]), 0.01).unwrap();
    assert_eq!(fresh, one_param(&[1.0, -2.0]));
    // With momentum already present, a zero gradient decays the moments.
    adam_step(&mut st, &mut ps, &grads(&[0.0, 0.0]), 0.0).unwrap();
    assert_eq!(ps, after_first);
    let m2 = st.m.get("w").unwrap().data();
    assert_eq!(m2[0], 0.5 * m1[0]);
    assert_eq!(m2[1], 0.5 * m1[1]);
}

#[test]
fn adam_first_step_moves_by_lr_against_the_sign() {
    let mut ps = one_param(&[0.0, 0.0, 0.0]);
    let mut st = AdamState::new(&ps, 0.5, 0.999, 1e-8);
    let lr = 2e-4;
    adam_step(&mut st, &mut ps, &grads(&[3.0, -0.02, 150.0]), lr).unwrap();
    for (&p, s) in ps.get("w").unwrap().data().iter().zip([-1.0, 1.0, -1.0]) {
        assert!((p - s * lr).abs() < lr * 1e-5, "{p}");
    }
}

#[test]
fn adam_step_counter_advances_once_per_call() {
    let mut ps = one_param(&[0.5]);
    let mut st = AdamState::new(&ps, 0.9, 0.999, 1e-8);
    let g = grads(&[0.7]);
    adam_step(&mut st, &mut ps, &g, 0.1).unwrap();
    adam_step(&mut st, &mut ps, &g, 0.1).unwrap();
    assert_eq!(st.t, 2);
    // Two calls are not the same as one call with the counter bumped twice.
    let mut ps2 = one_param(&[0.5]);
    let mut st2 = AdamState::new(&ps2, 0.9, 0.999, 1e-8);
    st2.t = 1;
    adam_step(&mut st2, &mut ps2, &g, 0.1).unwrap();
    assert_ne!(ps, ps2);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut ps = one_param(&[0.5, 0.1]);
    let mut st = AdamState::new(&ps, 0.9, 0.999, 1e-8);
    let err = adam_step(&mut st, &mut ps, &grads(&[0.1, f64::NAN]), 0.1).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient { ref name, step: 1 } if name == "w"));
    assert_eq!(st.t, 0);
    assert_eq!(ps, one_param(&[0.5, 0.1]));
}

/// Scalar Adam written out longhand.
fn reference_adam(p0: f64, gs: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (i, &g) in gs.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    p
}

#[test]
fn adam_matches_scalar_reference_on_random_problems() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p0: f64 = r.random_range(-3.0..3.0);
        let gs: Vec<f64> = (0..25).map(|_| r.random_range(-2.0..2.0)).collect();
        let lr = r.random_range(1e-4..1e-1);
        let mut ps = one_param(&[p0]);
        let mut st = AdamState::new(&ps, 0.5, 0.999, 1e-8);
        for &g in &gs {
            adam_step(&mut st, &mut ps, &grads(&[g]), lr).unwrap();
        }
        let got = ps.get("w").unwrap().data()[0];
        let want = reference_adam(p0, &gs, lr, 0.5, 0.999, 1e-8);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn gradient_clipping_caps_the_joint_norm() {
    let mut g = BTreeMap::from([
        ("a".to_string(), Tensor::from_vec(vec![3.0])),
        ("b".to_string(), Tensor::from_vec(vec![4.0])),
    ]);
    assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
    assert_eq!(g["a"].data(), &[3.0]);
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((g["a"].data()[0] - 0.6).abs() < 1e-15 && (g["b"].data()[0] - 0.8).abs() < 1e-15);
}

#[test]
fn lr_schedule_examples() {
    let s = Schedule::new(2e-4, 100, 50);
    assert_eq!(lr_at(&s, 0.0).unwrap(), 2e-4);
    assert_eq!(s.lr_at(50.0).unwrap(), 2e-4);
    assert!((s.lr_at(75.0).unwrap() - 1e-4).abs() < 1e-18);
    assert_eq!(s.lr_at(100.0).unwrap(), 0.0);
    assert!(s.lr_at(-1.0).is_err());
    assert!(s.lr_at(100.5).is_err());
    assert!(Schedule::new(1e-3, 5, 6).validate("s").is_err());
    let flat = Schedule::new(1e-3, 5, 5);
    assert_eq!(flat.lr_at(5.0).unwrap(), 1e-3);
}

proptest! {
    #[test]
    fn lr_is_non_increasing(epochs in 1usize..200, frac in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let decay = ((epochs as f64) * frac) as usize;
        let s = Schedule::new(2e-4, epochs, decay.min(epochs - 1));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let e = epochs as f64;
        prop_assert!(s.lr_at(lo * e).unwrap() >= s.lr_at(hi * e).unwrap());
        prop_assert_eq!(s.lr_at(e).unwrap(), 0.0);
    }
}

#[test]
fn config_text_round_trips() {
    let mut cfg = TrainConfig::default();
    cfg.seed = 99;
    cfg.weights.lambda1 = 0.1 + 0.2;
    cfg.stage2.decay_start = 7;
    cfg.model.vae.latent = 8;
    cfg.sample_latent = false;
    let text = cfg.to_text();
    let back = TrainConfig::from_text(&text).unwrap();
    assert_eq!(back.weights.lambda1, 0.1 + 0.2);
    assert_eq!(back.model.mapping.latent, 8);
    assert_eq!(back.to_text(), text);
    assert_eq!(TrainConfig::from_text("").unwrap(), TrainConfig::default());
    let with_comments = "# header\nseed = 5 # trailing\n\n  batch=2\n";
    let c = TrainConfig::from_text(with_comments).unwrap();
    assert_eq!((c.seed, c.batch), (5, 2));
    assert!(matches!(
        TrainConfig::from_text("nope = 1"),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(TrainConfig::from_text("seed = x").is_err());
    assert!(TrainConfig::from_text("seed 4").is_err());
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig {
            crop: 30,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            stage1: Schedule::new(1e-3, 3, 4),
            ..TrainConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err());
    }
}

fn sample_checkpoint() -> Checkpoint {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let _: u64 = r.random();
    let mut ps = ParamSet::new();
    ps.insert("a.w", Tensor::randn(&[2, 3, 1, 1], 1.0, &mut r));
    ps.insert("b", Tensor::from_vec(vec![f64::MIN_POSITIVE, -0.0, 1e300]));
    Checkpoint {
        kind: "vae1".into(),
        config: TrainConfig::default().to_text(),
        rng: RngState::capture(&r),
        counters: BTreeMap::from([("iterations".to_string(), 17)]),
        sections: BTreeMap::from([("vae1".to_string(), ps.clone()), ("extra".to_string(), ps)]),
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let ck = sample_checkpoint();
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn checkpoint_rng_state_resumes_the_stream() {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..37 {
        let _: u32 = r.random();
    }
    let mut restored = RngState::capture(&r).restore();
    let a: Vec<u64> = (0..10).map(|_| r.random()).collect();
    let b: Vec<u64> = (0..10).map(|_| restored.random()).collect();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_rejects_corruption() {
    let bytes = sample_checkpoint().to_bytes();
    for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint { .. })
            ),
            "cut at {cut}"
        );
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() - 20;
    flipped[mid] ^= 0x10;
    assert!(matches!(
        Checkpoint::from_bytes(&flipped),
        Err(Error::Checkpoint {
            field: "checksum",
            ..
        })
    ));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(Checkpoint::from_bytes(&longer).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&wrong_magic),
        Err(Error::Checkpoint { field: "magic", .. })
    ));
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&bumped).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains(&VERSION.to_string()) && msg.contains(&(VERSION + 1).to_string()),
        "{msg}"
    );
}

/// Tiny networks on 16×16 images so full stages run in well under a second.
fn tiny_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        batch: 2,
        crop: 16,
        epoch_iters: 2,
        ..TrainConfig::default()
    };
    cfg.stage1 = Schedule::new(1e-3, 3, 1);
    cfg.stage2 = Schedule::new(1e-3, 3, 1);
    cfg.detector = Schedule::new(2e-3, 3, 1);
    cfg.finetune = Schedule::new(1e-3, 2, 1);
    cfg.model.vae = VaeSpec {
        channels: 3,
        width1: 4,
        width2: 6,
        latent: 4,
        res_blocks: 1,
    };
    cfg.model.mapping = MappingSpec {
        latent: 4,
        local_blocks: 1,
        global_blocks: 1,
    };
    cfg.model.disc_width = 3;
    cfg.model.latent_disc_width = 4;
    cfg.model.unet = UnetSpec {
        channels: 3,
        width: 3,
    };
    cfg
}

fn tiny_data() -> ToyData {
    ToyData::standard(6, 16, 4).unwrap()
}

#[test]
fn stage1_is_deterministic_and_checkpoints_round_trip() {
    let cfg = tiny_config(2);
    let d = tiny_data();
    let run = |log: &mut Vec<u8>| {
        train_stage1(&d.real_degraded(), &d.degraded(), &d.clean(), &cfg, log).unwrap()
    };
    let mut log_a = Vec::new();
    let (a1, a2) = run(&mut log_a);
    let mut log_b = Vec::new();
    let (b1, b2) = run(&mut log_b);
    assert_eq!(log_a, log_b);
    assert_eq!(
        a1.to_checkpoint(&cfg).to_bytes(),
        b1.to_checkpoint(&cfg).to_bytes()
    );
    assert_eq!(
        a2.to_checkpoint(&cfg).to_bytes(),
        b2.to_checkpoint(&cfg).to_bytes()
    );

    let text = String::from_utf8(log_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("iter=0 loss.vae1."));
    for key in [
        "vae1.lat.e",
        "vae1.lat.d",
        "vae1.img.d",
        "vae2.l1",
        "vae2.gan_d",
    ] {
        assert!(lines[5].contains(&format!(" loss.{key}=")), "{key}");
    }

    let ck = a1.to_checkpoint(&cfg);
    let back = Vae1Run::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
    assert_eq!(back, a1);
    let back2 = Vae2Run::from_checkpoint(&a2.to_checkpoint(&cfg)).unwrap();
    assert_eq!(back2, a2);
    assert!(Vae2Run::from_checkpoint(&ck).is_err());
    assert_eq!(load_vae(&ck, "vae1").unwrap(), a1.vae);
}

#[test]
fn vae1_alone_matches_the_stage1_vae1() {
    let cfg = tiny_config(3);
    let d = tiny_data();
    let (both, _) = train_stage1(
        &d.real_degraded(),
        &d.degraded(),
        &d.clean(),
        &cfg,
        &mut std::io::sink(),
    )
    .unwrap();
    let alone = train_vae1(
        &d.real_degraded(),
        &d.degraded(),
        &cfg,
        &mut std::io::sink(),
    )
    .unwrap();
    assert_eq!(both, alone);
}

#[test]
fn checkpoint_with_mismatched_shapes_is_rejected() {
    let cfg = tiny_config(4);
    let run = Vae1Run::new(&cfg);
    let mut ck = run.to_checkpoint(&cfg);
    let mut other = cfg.clone();
    other.model.vae.width2 = 7;
    ck.config = other.to_text();
    assert!(matches!(
        Vae1Run::from_checkpoint(&ck),
        Err(Error::Checkpoint { .. })
    ));
}

#[test]
fn stage2_keeps_vaes_frozen_and_is_deterministic() {
    let cfg = tiny_config(5);
    let d = tiny_data();
    let (r1, r2) = train_stage1(
        &d.real_degraded(),
        &d.degraded(),
        &d.clean(),
        &cfg,
        &mut std::io::sink(),
    )
    .unwrap();
    let before = (r1.vae.params.fingerprint(), r2.vae.params.fingerprint());
    let mut log = Vec::new();
    let m = train_stage2(&d.pairs, &r1.vae, &r2.vae, &cfg, &mut log).unwrap();
    assert_eq!(
        before,
        (r1.vae.params.fingerprint(), r2.vae.params.fingerprint())
    );
    assert_eq!((m.vae1_fingerprint, m.vae2_fingerprint), before);
    m.check_frozen(&r1.vae, &r2.vae).unwrap();
    assert!(m.check_frozen(&r2.vae, &r1.vae).is_err());
    let again = train_stage2(&d.pairs, &r1.vae, &r2.vae, &cfg, &mut std::io::sink()).unwrap();
    assert_eq!(
        m.to_checkpoint(&cfg).to_bytes(),
        again.to_checkpoint(&cfg).to_bytes()
    );
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), 6);
    for key in ["map.l1", "map.gan_g", "map.fm", "map.gan_d"] {
        assert!(text.lines().all(|l| l.contains(&format!(" loss.{key}="))));
    }
    assert_eq!(
        MappingRun::from_checkpoint(&m.to_checkpoint(&cfg)).unwrap(),
        m
    );
}

#[test]
fn divergence_guard_aborts_training() {
    let mut cfg = tiny_config(6);
    cfg.divergence = 1e-6;
    let d = tiny_data();
    let err = train_vae1(
        &d.real_degraded(),
        &d.degraded(),
        &cfg,
        &mut std::io::sink(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Divergence { iter: 0, .. }), "{err}");
}

#[test]
fn empty_data_is_rejected() {
    let cfg = tiny_config(7);
    let d = tiny_data();
    assert!(matches!(
        train_vae1(&[], &d.degraded(), &cfg, &mut std::io::sink()),
        Err(Error::DegenerateData(_))
    ));
}

#[test]
fn detector_reports_both_phases_deterministically() {
    let cfg = tiny_config(8);
    let d = tiny_data();
    let run = || {
        train_detector(
            &d.pairs,
            &d.real,
            &d.pairs,
            &d.real,
            &cfg,
            &mut std::io::sink(),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.to_checkpoint(&cfg).to_bytes(),
        b.to_checkpoint(&cfg).to_bytes()
    );
    assert_eq!(a.phases, b.phases);
    assert_eq!(a.phases.len(), 2);
    assert_eq!(a.iterations, 10);
    for p in &a.phases {
        assert!((0.0..=1.0).contains(&p.synthetic_auc) && (0.0..=1.0).contains(&p.pseudo_real_auc));
    }
    assert_eq!(
        DetectorRun::from_checkpoint(&a.to_checkpoint(&cfg))
            .unwrap()
            .unet,
        a.unet
    );
}

#[test]
fn detector_needs_positive_pixels() {
    let cfg = tiny_config(9);
    let mut clean_range = RecipeRange::synthetic();
    clean_range.scratch_count = (0, 0);
    clean_range.hole_count = (0, 0);
    let d = ToyData::generate(4, 16, 3, 1, &clean_range, &clean_range).unwrap();
    let err = train_detector(
        &d.pairs,
        &d.real,
        &d.pairs,
        &d.real,
        &cfg,
        &mut std::io::sink(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::DegenerateData(_)));
}

#[test]
fn ablation_variants_configure_weights() {
    let base = TrainConfig::default();
    let ae = Variant::PlainAe.configure(&base);
    assert_eq!(
        (ae.weights.kl, ae.weights.latent_adv, ae.sample_latent),
        (0.0, 0.0, false)
    );
    let vae = Variant::Vae.configure(&base);
    assert_eq!(
        (vae.weights.kl, vae.weights.latent_adv, vae.sample_latent),
        (base.weights.kl, 0.0, true)
    );
    assert_eq!(Variant::VaeLatentAdv.configure(&base), base);
}

#[test]
fn ablation_report_trend_with_slack() {
    let rows = |w: [f64; 3]| AblationReport {
        rows: Variant::ALL
            .iter()
            .zip(w)
            .map(|(&variant, d)| AblationRow {
                variant,
                distance: Ok(d),
            })
            .collect(),
        slack: 0.05,
    };
    assert!(rows([3.0, 2.0, 1.0]).trend_holds());
    assert!(rows([1.96, 2.0, 1.0]).trend_holds());
    assert!(!rows([1.8, 2.0, 1.0]).trend_holds());
    let mut diverged = rows([3.0, 2.0, 1.0]);
    diverged.rows[1].distance = Err("boom".into());
    assert!(diverged.diverged() && !diverged.trend_holds());
    assert!(rows([3.0, 2.0, 1.0]).render().contains("trend = holds"));
}

#[test]
fn latent_gap_is_zero_for_identical_sets() {
    let cfg = tiny_config(10);
    let d = tiny_data();
    let run = Vae1Run::new(&cfg);
    let x = d.degraded();
    assert_eq!(latent_gap(&run.vae, &x, &x, 1).unwrap(), 0.0);
    assert!(latent_gap(&run.vae, &d.real_degraded(), &x, 1).unwrap() > 0.0);
}
