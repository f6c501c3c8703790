use advcat::calibrate::*;
use advcat::texture::Rgb;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_colors(n: usize, rng: &mut ChaCha8Rng) -> Vec<Rgb> {
    (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
}

/// A smooth degree-2 map that stays inside [0, 1] on the cube.
fn quadratic(x: Rgb) -> Rgb {
    [
        0.1 + 0.5 * x[0] + 0.2 * x[1] * x[2],
        0.2 + 0.3 * x[1] + 0.2 * x[0] * x[0],
        0.15 + 0.4 * x[2] + 0.1 * x[0] * x[1] + 0.1 * x[2] * x[2],
    ]
}

#[test]
fn monomial_counts_are_binomial() {
    for d in 0..=10u32 {
        let m = monomials(d);
        let n = (d as usize + 1) * (d as usize + 2) * (d as usize + 3) / 6;
        assert_eq!(m.len(), n);
        assert_eq!(monomial_count(d), n);
        assert!(m.iter().all(|e| e.iter().sum::<u32>() <= d));
        let mut sorted = m.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), n);
    }
}

#[test]
fn palette_is_a_lattice() {
    let p = make_palette(3).unwrap();
    assert_eq!(p.len(), 27);
    assert_eq!(p[0], [0.0, 0.0, 0.0]);
    assert_eq!(p[26], [1.0, 1.0, 1.0]);
    assert_eq!(p[1], [0.0, 0.0, 0.5]);
    assert!(make_palette(1).is_err());
    assert!(make_palette(0).is_err());
}

#[test]
fn fit_recovers_an_exact_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<ColorPair> = random_colors(80, &mut rng)
        .into_iter()
        .map(|x| ColorPair {
            digital: x,
            measured: quadratic(x),
        })
        .collect();
    for d in 2..=4 {
        let m = fit_color_model(&pairs, d).unwrap();
        assert!(mse(&m, &pairs) < 1e-16, "degree {d}");
        let probe = [0.3, 0.8, 0.45];
        let (p, q) = (m.predict(probe), quadratic(probe));
        assert!((0..3).all(|c| (p[c] - q[c]).abs() < 1e-7));
    }
    // Too few pairs for the requested degree.
    assert!(matches!(fit_color_model(&pairs[..5], 2), Err(advcat::Error::InvalidInput(_))));
}

#[test]
fn fit_matches_svd_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let printer = SyntheticPrinter::default();
    let pairs = printer.measure(&random_colors(120, &mut rng), &mut rng);
    let d = 3;
    let m = fit_color_model(&pairs, d).unwrap();
    let exps = monomials(d);
    let a = DMatrix::from_fn(pairs.len(), exps.len(), |i, j| {
        let x = pairs[i].digital;
        let e = exps[j];
        x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32)
    });
    for c in 0..3 {
        let b = DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.measured[c]));
        let sol = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        // Compare predictions, which are insensitive to the basis scaling.
        for p in &pairs {
            let x = p.digital;
            let want: f64 = exps
                .iter()
                .zip(sol.iter())
                .map(|(e, s)| s * x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32))
                .sum();
            assert!((m.eval_raw(x)[c] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn selection_prefers_the_true_degree_on_clean_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<ColorPair> = make_palette(6)
        .unwrap()
        .into_iter()
        .map(|x| ColorPair {
            digital: x,
            measured: quadratic(x),
        })
        .collect();
    let sel = select_degree(&pairs, 5, 5, &mut rng).unwrap();
    assert_eq!(sel.degree, 2);
    assert_eq!(sel.val_mse.len(), 6);
    assert!(sel.val_mse[0] > sel.val_mse[1] && sel.val_mse[1] > sel.val_mse[2]);
    assert!(select_degree(&pairs, 3, 0, &mut rng).is_err());
}

#[test]
fn identity_and_constant_models() {
    let id = ColorModel::identity();
    assert_eq!(id.predict([0.2, 0.4, 0.9]), [0.2, 0.4, 0.9]);
    let k = ColorModel::constant([0.3, 0.6, 0.1]);
    assert_eq!(k.predict([0.9, 0.0, 0.5]), [0.3, 0.6, 0.1]);
    let bad = ColorModel {
        degree: 2,
        coeffs: [vec![0.0; 3], vec![0.0; 10], vec![0.0; 10]],
    };
    assert!(bad.validate().is_err());
}

#[test]
fn synthetic_printer_is_in_gamut_and_noisy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = SyntheticPrinter::default();
    let colors = make_palette(5).unwrap();
    let pairs = p.measure(&colors, &mut rng);
    let mut resid = 0.0;
    for pr in &pairs {
        assert!(pr.measured.iter().all(|v| (0.0..=1.0).contains(v)));
        let ideal = p.ideal(pr.digital);
        resid += (0..3).map(|c| (pr.measured[c] - ideal[c]).powi(2)).sum::<f64>();
    }
    let var = resid / (3 * pairs.len()) as f64;
    assert!((var.sqrt() - 0.01).abs() < 0.002, "{}", var.sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn color_model_backward_matches_finite_differences(seed in any::<u64>(), d in 1u32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let printer = SyntheticPrinter::default();
        let pairs = printer.measure(&random_colors(60, &mut rng), &mut rng);
        let m = fit_color_model(&pairs, d).unwrap();
        let x: Rgb = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let dy: Rgb = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let y = m.eval_raw(x);
        // Stay away from the clamp kinks.
        prop_assume!(y.iter().all(|v| *v > 1e-3 && *v < 1.0 - 1e-3));
        let g = apply_color_model_backward(&m, &[x], &[dy])[0];
        let h = 1e-6;
        for k in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let fp = apply_color_model(&m, &[xp])[0];
            let fm = apply_color_model(&m, &[xm])[0];
            let num: f64 = (0..3).map(|c| dy[c] * (fp[c] - fm[c]) / (2.0 * h)).sum();
            prop_assert!((num - g[k]).abs() < 1e-6 * (1.0 + num.abs()), "{num} vs {}", g[k]);
        }
    }

    #[test]
    fn predictions_are_clamped(seed in any::<u64>(), x in prop::array::uniform3(-0.5f64..1.5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = SyntheticPrinter::default().measure(&random_colors(40, &mut rng), &mut rng);
        let m = fit_color_model(&pairs, 3).unwrap();
        prop_assert!(m.predict(x).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
