use advcat::detect::*;
use advcat::render::{Image, PixelBox};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::filled(w, h, [0.0; 3]);
    for p in &mut img.pixels {
        *p = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    }
    img
}

fn random_model(shapes: Vec<AnchorShape>, rng: &mut ChaCha8Rng) -> SurrogateModel {
    let mut m = SurrogateModel::zeros(shapes);
    for w in &mut m.weights {
        for v in w.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    for b in &mut m.bias {
        *b = rng.random_range(-0.5..0.5);
    }
    for (mu, s) in m.feature_mean.iter_mut().zip(&mut m.feature_scale) {
        *mu = rng.random_range(0.0..0.5);
        *s = rng.random_range(0.05..0.3);
    }
    m
}

fn small_shapes() -> Vec<AnchorShape> {
    vec![
        AnchorShape { width: 8, height: 12, stride: 3 },
        AnchorShape { width: 10, height: 16, stride: 5 },
    ]
}

/// Pixel-counting IoU on a fine lattice, for boxes with coordinates on a
/// 0.25 grid.
fn iou_by_counting(a: &DetBox, b: &DetBox) -> f64 {
    let (mut inter, mut uni) = (0usize, 0usize);
    for i in 0..160 {
        for j in 0..160 {
            let (x, y) = (i as f64 * 0.25 + 0.125, j as f64 * 0.25 + 0.125);
            let ina = x > a.x_min && x < a.x_max && y > a.y_min && y < a.y_max;
            let inb = x > b.x_min && x < b.x_max && y > b.y_min && y < b.y_max;
            inter += (ina && inb) as usize;
            uni += (ina || inb) as usize;
        }
    }
    if inter == 0 { 0.0 } else { inter as f64 / uni as f64 }
}

fn quarter_box(rng: &mut ChaCha8Rng, conf: f64) -> DetBox {
    let x0 = rng.random_range(0..120) as f64 * 0.25;
    let y0 = rng.random_range(0..120) as f64 * 0.25;
    let x1 = x0 + rng.random_range(1..40) as f64 * 0.25;
    let y1 = y0 + rng.random_range(1..40) as f64 * 0.25;
    DetBox::new(x0, y0, x1, y1, conf).unwrap()
}

#[test]
fn iou_matches_area_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let (a, b) = (quarter_box(&mut rng, 0.0), quarter_box(&mut rng, 0.0));
        assert!((iou(&a, &b) - iou_by_counting(&a, &b)).abs() < 1e-12);
    }
    let a = DetBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
    let b = DetBox::new(1.0, 1.0, 3.0, 3.0, 0.0).unwrap();
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
    assert!(DetBox::new(1.0, 0.0, 1.0, 2.0, 0.0).is_err());
}

/// Straight enumeration of the success rule.
fn success_by_enumeration(boxes: &[DetBox], gt: &DetBox, tau_iou: f64, tau_conf: f64) -> bool {
    for b in boxes {
        let inter_w = (b.x_max.min(gt.x_max) - b.x_min.max(gt.x_min)).max(0.0);
        let inter_h = (b.y_max.min(gt.y_max) - b.y_min.max(gt.y_min)).max(0.0);
        let inter = inter_w * inter_h;
        let union = (b.x_max - b.x_min) * (b.y_max - b.y_min) + (gt.x_max - gt.x_min) * (gt.y_max - gt.y_min)
            - inter;
        let overlap = if inter > 0.0 { inter / union } else { 0.0 };
        if overlap >= tau_iou && b.conf >= tau_conf {
            return false;
        }
    }
    true
}

#[test]
fn asr_matches_enumeration_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..1000 {
        let n = rng.random_range(0..12);
        dets.push((0..n).map(|_| {
            let c = rng.random_range(0.0..1.0);
            quarter_box(&mut rng, c)
        }).collect::<Vec<_>>());
        gts.push(quarter_box(&mut rng, 1.0));
    }
    for tau in TAU_IOUS {
        let spec = EvalSpec::new(tau);
        let want = dets
            .iter()
            .zip(&gts)
            .filter(|(d, g)| success_by_enumeration(d, g, tau, 0.5))
            .count() as f64
            / 1000.0;
        assert_eq!(asr(&dets, &gts, &spec).unwrap(), want, "tau_iou {tau}");
    }
    assert!(asr(&dets[..3], &gts, &EvalSpec::new(0.1)).is_err());
    assert!(asr(&dets, &gts, &EvalSpec::new(0.0)).is_err());
}

#[test]
fn det_loss_takes_the_best_overlap() {
    let gt = DetBox::new(10.0, 10.0, 20.0, 30.0, 1.0).unwrap();
    let boxes = vec![
        DetBox::new(0.0, 0.0, 5.0, 5.0, 0.9).unwrap(),
        DetBox::new(11.0, 10.0, 20.0, 30.0, 0.3).unwrap(),
        DetBox::new(10.0, 10.0, 19.0, 30.0, 0.7).unwrap(),
    ];
    // Boxes 1 and 2 tie; the first wins.
    assert_eq!(det_loss(&boxes, &gt), (0.3, Some(1)));
    assert_eq!(det_loss(&[], &gt), (0.0, None));
}

#[test]
fn anchor_grid_counts() {
    let shapes = SurrogateModel::default_shapes();
    let all = anchors(&shapes, 128, 128);
    let want: usize = [(24, 84), (30, 96), (36, 108)]
        .iter()
        .map(|&(w, h)| ((128 - w) / 4 + 1) * ((128 - h) / 4 + 1))
        .sum();
    assert_eq!(all.len(), want);
    assert!(all.iter().all(|a| a.x + a.w <= 128 && a.y + a.h <= 128));
    assert_eq!(AnchorShape { width: 30, height: 130, stride: 4 }.grid(128, 128), (0, 0));
}

/// Features recomputed from scratch with per-pixel loops.
fn features_directly(img: &Image, a: &Anchor) -> Vec<f64> {
    let lum = |x: usize, y: usize| {
        let c = img.get(x, y);
        (c[0] + c[1] + c[2]) / 3.0
    };
    let ex = |x: usize, y: usize| ((lum((x + 1).min(img.width - 1), y) - lum(x, y)).powi(2) + EDGE_EPS).sqrt();
    let ey = |x: usize, y: usize| ((lum(x, (y + 1).min(img.height - 1)) - lum(x, y)).powi(2) + EDGE_EPS).sqrt();
    let mean = |x0: usize, y0: usize, x1: usize, y1: usize, f: &dyn Fn(usize, usize) -> f64| {
        let mut s = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                s += f(x, y);
            }
        }
        s / ((x1 - x0) * (y1 - y0)) as f64
    };
    let mut out = Vec::new();
    for cy in 0..4 {
        for cx in 0..4 {
            let (x0, x1) = (a.x + cx * a.w / 4, a.x + (cx + 1) * a.w / 4);
            let (y0, y1) = (a.y + cy * a.h / 4, a.y + (cy + 1) * a.h / 4);
            for c in 0..3 {
                out.push(mean(x0, y0, x1, y1, &|x, y| img.get(x, y)[c]));
            }
        }
    }
    out.push(mean(a.x, a.y, a.x + a.w, a.y + a.h, &ex));
    out.push(mean(a.x, a.y, a.x + a.w, a.y + a.h, &ey));
    let (x0, y0, x1, y1) = (a.x + a.w / 4, a.y + a.h / 4, a.x + 3 * a.w / 4, a.y + 3 * a.h / 4);
    out.push(mean(x0, y0, x1, y1, &|x, y| ex(x, y) + ey(x, y)));
    out
}

#[test]
fn pooled_features_match_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(37, 29, &mut rng);
    let maps = FeatureMaps::new(&img);
    for a in anchors(&small_shapes(), 37, 29) {
        let f = maps.features(&a);
        let g = features_directly(&img, &a);
        assert_eq!(g.len(), N_FEATURES);
        for k in 0..N_FEATURES {
            assert!((f[k] - g[k]).abs() < 1e-12, "feature {k} of {a:?}");
        }
    }
}

#[test]
fn zero_model_is_undecided_and_small_images_fail() {
    let m = SurrogateModel::zeros(SurrogateModel::default_shapes());
    m.validate().unwrap();
    let det = surrogate_detect(&m, &Image::filled(128, 128, [0.4; 3])).unwrap();
    assert!(det.boxes.iter().all(|b| b.conf == 0.5));
    assert!(surrogate_detect(&m, &Image::filled(64, 64, [0.4; 3])).is_err());
    let mut bad = m.clone();
    bad.feature_scale[3] = 0.0;
    assert!(bad.validate().is_err());
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (24, 30);
    let img = random_image(w, h, &mut rng);
    let model = random_model(small_shapes(), &mut rng);
    let det = surrogate_detect(&model, &img).unwrap();
    let grads: Vec<(usize, f64)> =
        (0..det.boxes.len()).step_by(3).map(|i| (i, rng.random_range(-1.0..1.0))).collect();
    let objective = |im: &Image| {
        let d = surrogate_detect(&model, im).unwrap();
        grads.iter().map(|&(i, g)| g * d.boxes[i].conf).sum::<f64>()
    };
    let analytic = surrogate_backward(&model, &img, &det, &grads);
    let step = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let p = rng.random_range(0..w * h);
        let c = rng.random_range(0..3);
        let (mut up, mut down) = (img.clone(), img.clone());
        up.pixels[p][c] += step;
        down.pixels[p][c] -= step;
        let num = (objective(&up) - objective(&down)) / (2.0 * step);
        worst = worst.max((num - analytic[p][c]).abs() / (1e-4 + num.abs().max(analytic[p][c].abs())));
    }
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn logistic_fit_separates_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = [1.5, -2.0, 0.5];
    let xs: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<bool> = xs
        .iter()
        .map(|x| x.iter().zip(truth).map(|(a, b)| a * b).sum::<f64>() + 0.2 > 0.0)
        .collect();
    let m = fit_logistic(&xs, &ys, 1e-3, 50).unwrap();
    assert!(m.accuracy(&xs, &ys) > 0.98);
    // The learned direction lines up with the true normal.
    let dot: f64 = m.weights.iter().zip(truth).map(|(a, b)| a * b).sum();
    let nm = m.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(dot / (nm * nt) > 0.98);
    let (_, acc) = fit_logistic_checked(&xs, &ys, 1e-3, 0.9, 0).unwrap();
    assert!(acc > 0.9);
    // Coin-flip labels cannot pass a 0.9 accuracy gate.
    let noise: Vec<bool> = (0..400).map(|_| rng.random_bool(0.5)).collect();
    assert!(matches!(
        fit_logistic_checked(&xs, &noise, 1e-3, 0.9, 0),
        Err(advcat::Error::Training(_))
    ));
}

#[test]
fn logistic_gradient_vanishes_at_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<bool> = xs.iter().map(|x| rng.random_bool(sigmoid(2.0 * x[0] - x[1]))).collect();
    let l2 = 0.1;
    let m = fit_logistic(&xs, &ys, l2, 50).unwrap();
    let mut g = [0.0; 3];
    for (x, &y) in xs.iter().zip(&ys) {
        let r = m.predict(x) - y as u8 as f64;
        g[0] += r * x[0];
        g[1] += r * x[1];
        g[2] += r;
    }
    g[0] += l2 * m.weights[0];
    g[1] += l2 * m.weights[1];
    assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
}

#[test]
fn training_separates_bright_blocks_from_noise() {
    // A person stand-in: a bright vertical bar on a noisy background.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shapes = vec![AnchorShape { width: 10, height: 24, stride: 2 }];
    let mut images = Vec::new();
    for n in 0..60 {
        let mut img = random_image(48, 48, &mut rng);
        if n % 2 == 0 {
            let (x0, y0) = (rng.random_range(2..36), rng.random_range(2..22));
            for y in y0..y0 + 24 {
                for x in x0..x0 + 10 {
                    img.pixels[y * 48 + x] = [0.95, 0.9, 0.85];
                }
            }
            let gt = PixelBox { x_min: x0 as f64, y_min: y0 as f64, x_max: (x0 + 10) as f64, y_max: (y0 + 24) as f64 };
            images.push(TrainImage { image: img, gt: Some(gt) });
        } else {
            images.push(TrainImage { image: img, gt: None });
        }
    }
    let cfg = SurrogateTrainConfig { pos_per_image: 10, ..Default::default() };
    let (model, report) = train_surrogate(&images, shapes, &cfg).unwrap();
    assert!(report.positives >= 200 && report.negatives >= 200);
    assert!(report.accuracy[0] >= 0.9);
    let t = &images[0];
    let det = surrogate_detect(&model, &t.image).unwrap();
    let gt = DetBox::from_pixel_box(&t.gt.unwrap(), 1.0);
    assert!(det_loss(&det.boxes, &gt).0 > 0.5);
    let empty = surrogate_detect(&model, &images[1].image).unwrap();
    assert!(empty.boxes.iter().filter(|b| b.conf > 0.5).count() * 10 < empty.boxes.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn iou_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (quarter_box(&mut rng, 0.0), quarter_box(&mut rng, 0.0));
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn success_is_monotone_in_thresholds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boxes: Vec<DetBox> = (0..8).map(|_| {
            let c = rng.random_range(0.0..1.0);
            quarter_box(&mut rng, c)
        }).collect();
        let gt = quarter_box(&mut rng, 1.0);
        // Raising tau_iou ignores more boxes, so success can only appear.
        let mut prev = false;
        for tau in TAU_IOUS {
            let s = is_success(&boxes, &gt, &EvalSpec::new(tau));
            prop_assert!(!prev || s);
            prev = s;
        }
    }

    #[test]
    fn sigmoid_is_stable(z in -800.0f64..800.0) {
        let s = sigmoid(z);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
    }
}
