use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::grad_check;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_vae() -> VaeSpec {
    VaeSpec {
        channels: 3,
        width1: 4,
        width2: 6,
        latent: 4,
        res_blocks: 1,
    }
}

/// Scalar evaluation of the partial nonlocal block for one sample.
/// `f` is `[c][hw]`, weights are read straight out of the parameter set.
fn nonlocal_oracle(ps: &ParamSet, prefix: &str, f: &[Vec<f64>], m: &[f64]) -> Vec<Vec<f64>> {
    let c = f.len();
    let hw = f[0].len();
    let proj = |name: &str, out: usize| -> Vec<Vec<f64>> {
        let w = ps.get(&format!("{prefix}.{name}.w")).unwrap().data();
        let b = ps.get(&format!("{prefix}.{name}.b")).unwrap().data();
        (0..out)
            .map(|o| {
                (0..hw)
                    .map(|p| b[o] + (0..c).map(|i| w[o * c + i] * f[i][p]).sum::<f64>())
                    .collect()
            })
            .collect()
    };
    let e = embed_channels(c);
    let th = proj("theta", e);
    let ph = proj("phi", e);
    let mu = proj("mu", c);
    let mut agg = vec![vec![0.0; hw]; c];
    for i in 0..hw {
        let aff: Vec<f64> = (0..hw)
            .map(|j| (0..e).map(|k| th[k][i] * ph[k][j]).sum::<f64>())
            .collect();
        let peak = (0..hw)
            .filter(|&j| m[j] == 0.0)
            .map(|j| aff[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = (0..hw)
            .map(|j| (1.0 - m[j]) * (aff[j] - peak).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for ch in 0..c {
            agg[ch][i] = (0..hw).map(|j| weights[j] / total * mu[ch][j]).sum();
        }
    }
    let w = ps.get(&format!("{prefix}.nu.w")).unwrap().data();
    let b = ps.get(&format!("{prefix}.nu.b")).unwrap().data();
    (0..c)
        .map(|o| {
            (0..hw)
                .map(|p| b[o] + (0..c).map(|i| w[o * c + i] * agg[i][p]).sum::<f64>())
                .collect()
        })
        .collect()
}

#[test]
fn zero_noise_gives_mean_code() {
    let vae = Vae::new(tiny_vae(), &mut rng(1));
    let mut tape = Tape::new();
    let b = vae.params.bind(&mut tape, false);
    let x = tape.constant(Tensor::rand_uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut rng(2)));
    let code = vae.encode(&mut tape, &b, x, Noise::Zero).unwrap();
    assert_eq!(tape.value(code.z), tape.value(code.mu));
    assert_eq!(tape.value(code.mu).shape(), &[2, 4, 2, 2]);
    assert_eq!(tape.value(code.logvar).shape(), &[2, 4, 2, 2]);
}

#[test]
fn vanishing_variance_collapses_to_mean() {
    let mut tape = Tape::new();
    let mu = tape.constant(Tensor::randn(&[1, 2, 2, 2], 1.0, &mut rng(3)));
    let lv = tape.constant(Tensor::full(&[1, 2, 2, 2], -40.0));
    let eps = Tensor::randn(&[1, 2, 2, 2], 1.0, &mut rng(4));
    let z = reparameterize(&mut tape, mu, lv, &eps).unwrap();
    for (a, b) in tape.value(z).data().iter().zip(tape.value(mu).data()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn reparameterization_gradient_matches_closed_form() {
    let eps = Tensor::randn(&[1, 2, 2, 2], 1.0, &mut rng(5));
    let mu = Tensor::randn(&[1, 2, 2, 2], 1.0, &mut rng(6));
    let lv = Tensor::randn(&[1, 2, 2, 2], 0.5, &mut rng(7));
    let mut tape = Tape::new();
    let m = tape.constant(mu.clone());
    let l = tape.param(lv.clone());
    let z = reparameterize(&mut tape, m, l, &eps).unwrap();
    let s = tape.sum(z);
    let g = tape.backward(s).unwrap();
    for ((gv, lvv), e) in g
        .get(l)
        .unwrap()
        .data()
        .iter()
        .zip(lv.data())
        .zip(eps.data())
    {
        assert!((gv - 0.5 * (0.5 * lvv).exp() * e).abs() < 1e-12);
    }
    let report = grad_check(
        |t, x| {
            let m = t.constant(mu.clone());
            let z = reparameterize(t, m, x, &eps)?;
            Ok(t.sum(z))
        },
        &lv,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn decode_shape_and_range() {
    let vae = Vae::new(tiny_vae(), &mut rng(8));
    let mut tape = Tape::new();
    let b = vae.params.bind(&mut tape, false);
    let z = tape.constant(Tensor::randn(&[3, 4, 3, 5], 3.0, &mut rng(9)));
    let out = vae.decode(&mut tape, &b, z).unwrap();
    assert_eq!(tape.value(out).shape(), &[3, 3, 12, 20]);
    assert!(tape
        .value(out)
        .data()
        .iter()
        .all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn encode_rejects_indivisible_size() {
    let vae = Vae::new(tiny_vae(), &mut rng(1));
    let mut tape = Tape::new();
    let b = vae.params.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&[1, 3, 6, 8]));
    assert!(matches!(
        vae.encode(&mut tape, &b, x, Noise::Zero),
        Err(Error::Shape { .. })
    ));
}

fn nonlocal_params(c: usize, seed: u64) -> ParamSet {
    let mut ps = ParamSet::new();
    add_nonlocal(&mut ps, &mut rng(seed), "nl", c);
    ps
}

#[test]
fn nonlocal_uniform_attention_over_equal_keys() {
    let c = 4;
    let mut ps = nonlocal_params(c, 10);
    let mut eye = vec![0.0; c * c];
    for i in 0..c {
        eye[i * c + i] = 1.0;
    }
    ps.insert("nl.nu.w", Tensor::new(vec![c, c, 1, 1], eye).unwrap());
    ps.insert("nl.nu.b", Tensor::zeros(&[c]));
    let column = [0.3, -1.2, 0.7, 2.0];
    let mut data = Vec::new();
    for v in column {
        data.extend(std::iter::repeat_n(v, 9));
    }
    let mut tape = Tape::new();
    let b = ps.bind(&mut tape, false);
    let f = tape.constant(Tensor::new(vec![1, c, 3, 3], data).unwrap());
    let out = partial_nonlocal(&mut tape, &b, "nl", f, &Tensor::zeros(&[1, 1, 3, 3])).unwrap();
    let mu_w = ps.get("nl.mu.w").unwrap().data();
    let mu_b = ps.get("nl.mu.b").unwrap().data();
    for o in 0..c {
        let expect = mu_b[o] + (0..c).map(|i| mu_w[o * c + i] * column[i]).sum::<f64>();
        for p in 0..9 {
            assert!((tape.value(out.output).data()[o * 9 + p] - expect).abs() < 1e-12);
        }
    }
    let attn = tape.value(out.affinity[0]);
    assert!(attn.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
}

#[test]
fn nonlocal_matches_scalar_oracle_on_2x2() {
    let c = 2;
    let mut ps = ParamSet::new();
    let set = |ps: &mut ParamSet, name: &str, out: usize, w: Vec<f64>, b: Vec<f64>| {
        ps.insert(
            format!("nl.{name}.w"),
            Tensor::new(vec![out, c, 1, 1], w).unwrap(),
        );
        ps.insert(format!("nl.{name}.b"), Tensor::from_vec(b));
    };
    set(&mut ps, "theta", 1, vec![0.5, -1.0], vec![0.1]);
    set(&mut ps, "phi", 1, vec![2.0, 0.25], vec![-0.2]);
    set(&mut ps, "mu", 2, vec![1.0, 0.5, -0.5, 2.0], vec![0.0, 0.3]);
    set(&mut ps, "nu", 2, vec![0.7, 0.1, 0.2, -1.1], vec![0.05, 0.0]);
    let f = vec![vec![0.2, -0.4, 1.0, 0.6], vec![-1.3, 0.8, 0.0, 0.5]];
    for m in [
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0, 0.0],
    ] {
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, false);
        let fv = tape.constant(Tensor::new(vec![1, c, 2, 2], f.concat()).unwrap());
        let mask = Tensor::new(vec![1, 1, 2, 2], m.to_vec()).unwrap();
        let out = partial_nonlocal(&mut tape, &b, "nl", fv, &mask).unwrap();
        let expect = nonlocal_oracle(&ps, "nl", &f, &m);
        for ch in 0..c {
            for p in 0..4 {
                let got = tape.value(out.output).data()[ch * 4 + p];
                assert!((got - expect[ch][p]).abs() < 1e-10, "mask {m:?}");
            }
        }
    }
}

#[test]
fn masked_positions_do_not_feed_other_queries() {
    let c = 4;
    let ps = nonlocal_params(c, 12);
    let masked = 5;
    let mut m = vec![0.0; 16];
    m[masked] = 1.0;
    m[10] = 1.0;
    let mask = Tensor::new(vec![1, 1, 4, 4], m).unwrap();
    let weights = Tensor::randn(&[1, c, 4, 4], 1.0, &mut rng(13));
    let mut tape = Tape::new();
    let b = ps.bind(&mut tape, false);
    let f = tape.param(Tensor::randn(&[1, c, 4, 4], 1.0, &mut rng(14)));
    let out = partial_nonlocal(&mut tape, &b, "nl", f, &mask).unwrap();
    // Loss over every output position except the masked one.
    let mut sel = weights.clone();
    for ch in 0..c {
        sel.data_mut()[ch * 16 + masked] = 0.0;
    }
    let sel = tape.constant(sel);
    let prod = tape.mul(out.output, sel).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss).unwrap();
    let gf = g.get(f).unwrap();
    for ch in 0..c {
        assert_eq!(gf.data()[ch * 16 + masked], 0.0);
    }
    assert!(gf.data().iter().any(|&v| v != 0.0));
    let attn = tape.value(out.affinity[0]);
    for i in 0..16 {
        assert_eq!(attn.data()[i * 16 + masked], 0.0);
        assert_eq!(attn.data()[i * 16 + 10], 0.0);
    }
}

#[test]
fn fully_masked_nonlocal_errors() {
    let ps = nonlocal_params(2, 1);
    let mut tape = Tape::new();
    let b = ps.bind(&mut tape, false);
    let f = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
    let r = partial_nonlocal(&mut tape, &b, "nl", f, &Tensor::ones(&[1, 1, 2, 2]));
    assert!(matches!(r, Err(Error::FullyMasked)));
}

fn small_mapping(seed: u64) -> Mapping {
    Mapping::new(
        MappingSpec {
            latent: 4,
            local_blocks: 2,
            global_blocks: 2,
        },
        &mut rng(seed),
    )
}

#[test]
fn unmasked_fusion_equals_local_branch() {
    let map = small_mapping(20);
    let input = Tensor::randn(&[2, 4, 4, 4], 1.0, &mut rng(21));
    let mut tape = Tape::new();
    let b = map.params.bind(&mut tape, false);
    let f = tape.constant(input.clone());
    let out = map
        .forward(&mut tape, &b, f, &Tensor::zeros(&[2, 1, 4, 4]))
        .unwrap();

    let mut solo = Tape::new();
    let b2 = map.params.bind(&mut solo, false);
    let f2 = solo.constant(input);
    let local = map.local_branch(&mut solo, &b2, f2).unwrap();
    let a: Vec<u64> = tape
        .value(out.fused)
        .data()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    let e: Vec<u64> = solo
        .value(local)
        .data()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    assert_eq!(a, e);
}

#[test]
fn checkerboard_fusion_selects_branches() {
    let map = small_mapping(22);
    let mut m = vec![0.0; 16];
    for y in 0..4 {
        for x in 0..4 {
            m[y * 4 + x] = ((x + y) % 2) as f64;
        }
    }
    let mask = Tensor::new(vec![1, 1, 4, 4], m.clone()).unwrap();
    let mut tape = Tape::new();
    let b = map.params.bind(&mut tape, false);
    let f = tape.constant(Tensor::randn(&[1, 4, 4, 4], 1.0, &mut rng(23)));
    let out = map.forward(&mut tape, &b, f, &mask).unwrap();
    let (fu, lo, gl) = (
        tape.value(out.fused),
        tape.value(out.local),
        tape.value(out.global),
    );
    for ch in 0..4 {
        for p in 0..16 {
            let i = ch * 16 + p;
            let expect = if m[p] == 1.0 {
                gl.data()[i]
            } else {
                lo.data()[i]
            };
            assert_eq!(fu.data()[i], expect);
        }
    }
    let mut all = Tape::new();
    let b = map.params.bind(&mut all, false);
    let f = all.constant(Tensor::zeros(&[1, 4, 4, 4]));
    assert!(matches!(
        map.forward(&mut all, &b, f, &Tensor::ones(&[1, 1, 4, 4])),
        Err(Error::FullyMasked)
    ));
}

#[test]
fn unet_shape_and_live_gradients() {
    let net = Unet::new(
        UnetSpec {
            channels: 3,
            width: 4,
        },
        &mut rng(30),
    );
    let mut tape = Tape::new();
    let b = net.params.bind(&mut tape, true);
    let x = tape.constant(Tensor::rand_uniform(&[2, 3, 8, 12], 0.0, 1.0, &mut rng(31)));
    let logits = net.forward(&mut tape, &b, x).unwrap();
    assert_eq!(tape.value(logits).shape(), &[2, 1, 8, 12]);
    let s = tape.sum(logits);
    let g = tape.backward(s).unwrap();
    for (name, grad) in b.grads(&g) {
        assert!(
            grad.data().iter().any(|&v| v != 0.0),
            "dead parameter {name}"
        );
    }
}

#[test]
fn default_models_fit_parameter_budget() {
    let models = Models::new(&ModelSpec::default(), 0);
    let n = models.num_scalars();
    assert!(n <= 200_000, "{n} parameters");
}

#[test]
fn untrained_restore_is_valid_and_deterministic() {
    let spec = ModelSpec {
        vae: tiny_vae(),
        mapping: MappingSpec {
            latent: 4,
            local_blocks: 1,
            global_blocks: 1,
        },
        ..ModelSpec::default()
    };
    let models = Models::new(&spec, 3);
    let mut r = rng(40);
    for (w, h) in [(16, 16), (10, 14)] {
        let data = (0..w * h * 3).map(|_| r.random::<f64>()).collect();
        let img = Image::new(w, h, 3, data).unwrap();
        let mut bits = vec![false; w * h];
        bits[3] = true;
        let mask = DefectMask::from_binary(w, h, &bits).unwrap();
        let a = restore(&img, &models.vae1, &models.mapping, &models.vae2, &mask).unwrap();
        let b = restore(&img, &models.vae1, &models.mapping, &models.vae2, &mask).unwrap();
        assert_eq!((a.width(), a.height(), a.channels()), (w, h, 3));
        assert!(a.in_unit_range());
        assert_eq!(a, b);
    }
}

#[test]
fn restoration_composite_passes_grad_check() {
    let spec = ModelSpec {
        vae: VaeSpec {
            channels: 3,
            width1: 3,
            width2: 4,
            latent: 4,
            res_blocks: 1,
        },
        mapping: MappingSpec {
            latent: 4,
            local_blocks: 1,
            global_blocks: 1,
        },
        ..ModelSpec::default()
    };
    let models = Models::new(&spec, 5);
    let mask = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    let probe = Tensor::randn(&[1, 3, 8, 8], 1.0, &mut rng(50));
    let point = Tensor::rand_uniform(&[1, 3, 8, 8], 0.1, 0.9, &mut rng(51));
    let report = grad_check(
        |t, x| {
            let b1 = models.vae1.params.bind(t, false);
            let bm = models.mapping.params.bind(t, false);
            let b2 = models.vae2.params.bind(t, false);
            let out = restore_graph(
                t,
                (&models.vae1, &b1),
                (&models.mapping, &bm),
                (&models.vae2, &b2),
                x,
                &mask,
            )?;
            let p = t.constant(probe.clone());
            let prod = t.mul(out, p)?;
            Ok(t.sum(prod))
        },
        &point,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "max rel error {}", report.max_rel_error);
}
