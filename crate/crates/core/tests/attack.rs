use advcat::attack::*;
use advcat::detect::SurrogateModel;
use advcat::fixtures::{cylinder_fixture, shirt_fixture};
use advcat::render::CameraRig;
use advcat::scene::*;
use advcat::texture::{ControlPoints, Palette, SynthSettings, TexParams, TextureGenerator};
use advcat::warp::Preset;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Tiny {
    assets: SceneAssets,
    generator: TextureGenerator,
    init: TexParams,
    model: SurrogateModel,
    backgrounds: Vec<advcat::render::Image>,
}

/// A 64 x 64 scene with a random-weight surrogate: small enough for a few
/// epochs in a unit test.
fn tiny() -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rig = CameraRig {
        width: 64,
        image_height: 64,
        ..Default::default()
    };
    let assets = SceneAssets::new(mannequin().unwrap(), rig, (32, 32)).unwrap();
    let settings = SynthSettings {
        width: 32,
        height: 32,
        n_points: 6,
        ..Default::default()
    };
    let generator = TextureGenerator::new(Palette::woodland(), settings).unwrap();
    let init = generator.init_params(&mut rng);
    let mut model = SurrogateModel::zeros(small_shapes());
    for w in model.weights.iter_mut() {
        for v in w.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    Tiny {
        assets,
        generator,
        init,
        model,
        backgrounds: background_set(1, 4, 64, 64),
    }
}

fn tiny_config() -> AttackConfig {
    AttackConfig {
        epochs: 3,
        batch_size: 2,
        ring_size: 9,
        checkpoint_every: 1,
        ..AttackConfig::desk_scale()
    }
}

fn run(t: &Tiny, cfg: &AttackConfig) -> (AttackOutcome, Vec<usize>) {
    let mut seen = Vec::new();
    let out = optimize(cfg, &t.generator, t.init.clone(), &t.assets, &t.model, &t.backgrounds, None, |e, _| {
        seen.push(e);
        Ok(())
    })
    .unwrap();
    (out, seen)
}

#[test]
fn optimization_is_deterministic_and_checkpoints() {
    let t = tiny();
    let cfg = tiny_config();
    let (a, seen) = run(&t, &cfg);
    let (b, _) = run(&t, &cfg);
    assert_eq!(seen, vec![1, 2, 3]);
    assert_eq!(a.params, b.params);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.len(), 3);
    assert!(a.trace.iter().all(|r| (0.0..=1.0).contains(&r.mean_conf) && r.loss.is_finite()));
    assert_ne!(a.params.control.coords, t.init.control.coords);
    let p = a.sampler.probabilities();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_rates_freeze_the_texture() {
    let t = tiny();
    let cfg = AttackConfig {
        lr_points: 0.0,
        lr_seeds: 0.0,
        checkpoint_every: 0,
        ..tiny_config()
    };
    let (out, seen) = run(&t, &cfg);
    assert!(seen.is_empty());
    assert_eq!(out.params.control.coords, t.init.control.coords);
}

#[test]
fn invalid_configs_are_rejected() {
    let t = tiny();
    for cfg in [
        AttackConfig { epochs: 0, ..tiny_config() },
        AttackConfig { tau: 0.0, ..tiny_config() },
        AttackConfig { lambda: 1.5, ..tiny_config() },
        AttackConfig { lr_points: -1.0, ..tiny_config() },
        AttackConfig { sigma_con: Some(0.0), ..tiny_config() },
    ] {
        assert!(matches!(cfg.validate(), Err(advcat::Error::Validation(_))));
    }
    let r = optimize(&tiny_config(), &t.generator, t.init.clone(), &t.assets, &t.model, &[], None, |_, _| Ok(()));
    assert!(r.is_err());
}

#[test]
fn evaluation_is_deterministic_and_consistent() {
    let t = tiny();
    let tex = t.generator.hard(&t.init).unwrap();
    let cfg = EvalConfig {
        ring_size: 5,
        per_angle: 2,
        preset: Preset::Mild,
        ..Default::default()
    };
    let a = evaluate(&t.assets, &t.model, &tex.pixels, None, &t.backgrounds, &cfg).unwrap();
    let b = evaluate(&t.assets, &t.model, &tex.pixels, None, &t.backgrounds, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 10);
    // Stricter overlap thresholds can only add successes.
    let rates: Vec<f64> = advcat::detect::TAU_IOUS.iter().map(|&k| a.asr(k).unwrap()).collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]));
    let per = a.per_angle(0.1).unwrap();
    assert_eq!(per.len(), 5);
    let mean: f64 = per.iter().map(|p| p.1).sum::<f64>() / 5.0;
    assert!((mean - a.asr(0.1).unwrap()).abs() < 1e-12);
    assert!(a.asr(0.2).is_err());
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = end_to_end_grad_check(32, seed).unwrap();
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn topo_warp_never_samples_outside_the_pieces() {
    for g in [cylinder_fixture(), shirt_fixture()] {
        for angle in [0.0, 90.0] {
            let cam = framing_camera(&g.mesh, 64, angle);
            let mesh = if g.mesh.topo.is_some() {
                g.mesh.clone()
            } else {
                let mut m = g.mesh.clone();
                let z = advcat::topoproj::zip_projection(&g.mesh, &g.seams, &g.zip_init, &Default::default()).unwrap();
                m.topo = Some(z.topo);
                m
            };
            let plain = warped_samples(&mesh, &cam, WarpMode::Plain, 0.2).unwrap().counts();
            let topo = warped_samples(&mesh, &cam, WarpMode::Topo, 0.2).unwrap().counts();
            assert_eq!(plain.leaked, 0);
            assert_eq!(topo.leaked, 0);
            assert_eq!(plain.garment_pixels, topo.garment_pixels);
        }
    }
    // The cylinder's seam is visible from the back: shearing its layout
    // directly pulls samples off the piece.
    let g = cylinder_fixture();
    let cam = framing_camera(&g.mesh, 64, 180.0);
    let naive = warped_samples(&g.mesh, &cam, WarpMode::Naive, 0.2).unwrap().counts();
    assert!(naive.leaked > 0, "{naive:?}");
}

#[test]
fn angle_sampler_prefers_confident_angles() {
    let mut s = AngleSampler::new(9, 0.5, 0.1);
    let p0 = s.probabilities();
    assert!(p0.iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-15));
    s.update(4, 1.0);
    s.update(4, 1.0);
    assert!((s.scores[4] - 0.75).abs() < 1e-15);
    let p = s.probabilities();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p[4] > 0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hits = (0..1000).filter(|_| s.sample(&mut rng) == 4).count();
    assert!(hits > 980);
}

#[test]
fn adam_first_step_moves_by_the_rate() {
    let mut adam = Adam::new(3);
    let mut x = vec![1.0, -2.0, 0.5];
    adam.step(&mut x, &[4.0, -0.001, 0.0], 0.1);
    assert!((x[0] - 0.9).abs() < 1e-6);
    assert!((x[1] + 1.9).abs() < 1e-4);
    assert_eq!(x[2], 0.5);
}

#[test]
fn grad_check_reports_relative_error() {
    let f = |x: &[f64]| Ok(x[0] * x[0] + 3.0 * x[1]);
    let x = [2.0, 1.0];
    assert!(grad_check(f, &x, &[4.0, 3.0], &[0, 1], 1e-5, 1e-8).unwrap() < 1e-8);
    let bad = grad_check(f, &x, &[5.0, 3.0], &[0, 1], 1e-5, 1e-8).unwrap();
    assert!((bad - 0.2).abs() < 1e-6);
    assert!(grad_check(f, &x, &[4.0, 3.0], &[0], 0.0, 1e-8).is_err());
}

#[test]
fn flatten_round_trips() {
    let t = tiny();
    let v = flatten_params(&t.init);
    assert_eq!(unflatten_params(&t.init, &v), t.init);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn concentration_gradient_matches_finite_differences(seed in any::<u64>(), sigma in 1.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_colors, n_points) = (3, 4);
        let coords = (0..n_colors * n_points)
            .map(|_| [rng.random_range(0.0..16.0), rng.random_range(0.0..16.0)])
            .collect();
        let cp = ControlPoints { width: 16, height: 16, n_colors, n_points, coords };
        let (l, g) = concentration_loss(&cp, sigma).unwrap();
        prop_assert!(l >= 0.0 && l <= (n_colors * n_points * (n_points - 1) / 2) as f64);
        let h = 1e-6;
        for i in 0..cp.coords.len() {
            for k in 0..2 {
                let (mut up, mut down) = (cp.clone(), cp.clone());
                up.coords[i][k] += h;
                down.coords[i][k] -= h;
                let num = (concentration_loss(&up, sigma).unwrap().0 - concentration_loss(&down, sigma).unwrap().0) / (2.0 * h);
                prop_assert!((num - g[i][k]).abs() < 1e-6, "{num} vs {}", g[i][k]);
            }
        }
        prop_assert!(concentration_loss(&cp, 0.0).is_err());
    }

    #[test]
    fn sampler_probabilities_form_a_distribution(scores in prop::collection::vec(0.0f64..1.0, 1..40), temp in 0.01f64..2.0) {
        let mut s = AngleSampler::new(scores.len(), 0.9, temp);
        s.scores = scores.clone();
        let p = s.probabilities();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        // Order preserving.
        for i in 0..p.len() {
            for j in 0..p.len() {
                if scores[i] > scores[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }
}
