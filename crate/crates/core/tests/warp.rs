use advcat::fixtures::{cylinder_fixture, shirt_fixture};
use advcat::mesh::{BaryCoord, Vec2, Vec3};
use advcat::topoproj::{zip_projection, ZipParams};
use advcat::warp::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scattered(n: usize, seed: u64) -> Vec<Vec2> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)]).collect()
}

fn affine2(p: Vec2) -> Vec2 {
    [0.3 + 1.2 * p[0] - 0.4 * p[1], -1.1 + 0.25 * p[0] + 0.9 * p[1]]
}

#[test]
fn shear_is_reproduced_exactly() {
    let (lo, hi) = ([-1.0, 0.0], [2.0, 1.5]);
    let tps = shear_warp(lo, hi, 0.1).unwrap();
    for p in scattered(50, 3) {
        let q = tps.eval(p);
        assert!((q[0] - p[0]).abs() < 1e-9);
        assert!((q[1] - (p[1] + 0.1 * (p[0] - 0.5))).abs() < 1e-9);
    }
}

#[test]
fn tps_bends_smoothly_between_controls() {
    // A single displaced interior control point produces a bump that decays
    // with distance and leaves far points nearly in place.
    let src = control_grid_2d([0.0, 0.0], [4.0, 4.0], 5);
    let mut dst = src.clone();
    dst[12][1] += 0.5;
    let tps = TpsMap2D::fit(&src, &dst).unwrap();
    let mid = tps.eval([2.0, 2.5]);
    let near = tps.eval([2.0, 3.0]);
    assert!(mid[1] - 2.5 > near[1] - 3.0);
    assert!(tps.side_condition_residual() < 1e-9);
}

#[test]
fn degenerate_controls_are_rejected() {
    let src = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
    assert!(TpsMap2D::fit(&src, &src).is_err());
    assert!(TpsMap2D::fit(&src[..2], &src[..2]).is_err());
    assert!(TpsMap2D::fit(&src, &src[..2]).is_err());
}

#[test]
fn tps3d_interpolates_and_keeps_affine_maps() {
    let src = control_grid_3d([0.0; 3], [1.0, 2.0, 1.5], 3);
    let aff = |p: Vec3| [1.0 + p[0] + 0.1 * p[2], 2.0 * p[1] - 0.3 * p[0], 0.5 * p[2] + p[1]];
    let dst: Vec<Vec3> = src.iter().map(|&p| aff(p)).collect();
    let tps = Tps3D::fit(&src, &dst).unwrap();
    for (s, d) in src.iter().zip(&dst) {
        let q = tps.eval(*s);
        assert!((0..3).all(|k| (q[k] - d[k]).abs() < 1e-9));
    }
    let p = [0.37, 1.21, 0.9];
    let (q, want) = (tps.eval(p), aff(p));
    assert!((0..3).all(|k| (q[k] - want[k]).abs() < 1e-8));
}

#[test]
fn zero_intensity_changes_nothing() {
    let g = shirt_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (moved, _) = tps3d_perturb(&g.mesh, GRID_3D, &WarpIntensity::NONE, &mut rng).unwrap();
    for (a, b) in moved.vertices.iter().zip(&g.mesh.vertices) {
        assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-9));
    }
    let src = control_grid_2d([0.0, 0.0], [1.0, 1.0], TOPO_GRID);
    let same = sample_polar_perturbation(&src, &WarpIntensity::NONE, &mut rng);
    for (a, b) in same.iter().zip(&src) {
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
}

#[test]
fn perturbation_respects_its_bounds() {
    let g = shirt_fixture();
    let (lo, hi) = g.mesh.bounds3();
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for preset in [Preset::Mild, Preset::Huge] {
        let (_, tps) = tps3d_perturb(&g.mesh, GRID_3D, &preset.intensity(), &mut rng).unwrap();
        // At the control points the displacement is the drawn offset.
        for s in &tps.src {
            let q = tps.eval(*s);
            for k in 0..3 {
                assert!((q[k] - s[k]).abs() <= preset.intensity().eps_tps * diag + 1e-9);
            }
        }
    }
    let center = [0.5, 0.5];
    let p = [1.5, 0.5];
    let q = perturb_polar(p, center, 0.1, 90.0);
    assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 1.6).abs() < 1e-12);
}

#[test]
fn negative_intensity_is_a_domain_error() {
    let g = cylinder_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bad = WarpIntensity::new(0.1, 10.0, -0.1);
    assert!(matches!(
        tps3d_perturb(&g.mesh, GRID_3D, &bad, &mut rng),
        Err(advcat::Error::Domain(_))
    ));
}

#[test]
fn identity_warp_lookup_returns_the_input() {
    let g = shirt_fixture();
    let mut mesh = g.mesh.clone();
    mesh.topo = Some(zip_projection(&g.mesh, &g.seams, &g.zip_init, &ZipParams::default()).unwrap().topo);
    let lookup = TopoLookup::new(&mesh).unwrap();
    let id = TpsMap2D::identity();
    for t in 0..mesh.n_triangles() {
        let b = BaryCoord([0.2, 0.5, 0.3]);
        let want = b.interpolate2(mesh.geo.triangle(t));
        let hit = lookup.warp_lookup(&mesh, t, b, &id).unwrap().expect("inside");
        assert!((hit.point[0] - want[0]).abs() < 1e-6 && (hit.point[1] - want[1]).abs() < 1e-6);
    }
    let no_topo = g.mesh;
    assert!(TopoLookup::new(&no_topo).is_err());
}

#[test]
fn warped_points_stay_on_the_garment() {
    let g = cylinder_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let topo = g.mesh.topo.as_ref().unwrap();
    let lookup = TopoLookup::new(&g.mesh).unwrap();
    let tps = random_topo_warp(topo, &Preset::Huge.intensity(), &mut rng).unwrap();
    for t in 0..g.mesh.n_triangles() {
        if let Some(hit) = lookup.warp_lookup(&g.mesh, t, BaryCoord([1.0 / 3.0; 3]), &tps).unwrap() {
            assert!(hit.bary.is_inside());
            let p = hit.bary.interpolate2(g.mesh.geo.triangle(hit.tri));
            assert!((p[0] - hit.point[0]).abs() < 1e-12 && (p[1] - hit.point[1]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tps_interpolates_its_controls(seed in any::<u64>(), n in 4usize..16) {
        let src = scattered(n, seed);
        let dst = scattered(n, seed ^ 0x5a5a);
        if let Ok(tps) = TpsMap2D::fit(&src, &dst) {
            for (s, d) in src.iter().zip(&dst) {
                let q = tps.eval(*s);
                prop_assert!((q[0] - d[0]).abs() < 1e-9 && (q[1] - d[1]).abs() < 1e-9);
            }
            prop_assert!(tps.side_condition_residual() < 1e-8);
        }
    }

    #[test]
    fn tps_reproduces_affine_maps(seed in any::<u64>(), n in 4usize..16, probe in prop::array::uniform2(-3.0f64..3.0)) {
        let src = scattered(n, seed);
        let dst: Vec<Vec2> = src.iter().map(|&p| affine2(p)).collect();
        if let Ok(tps) = TpsMap2D::fit(&src, &dst) {
            prop_assert!(tps.weights.iter().all(|w| w[0].abs() < 1e-8 && w[1].abs() < 1e-8));
            let (q, want) = (tps.eval(probe), affine2(probe));
            prop_assert!((q[0] - want[0]).abs() < 1e-8 && (q[1] - want[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn polar_perturbation_scales_radius(p in prop::array::uniform2(-2.0f64..2.0), dr in -0.5f64..0.5, dt in -180.0f64..180.0) {
        let c = [0.1, -0.2];
        let q = perturb_polar(p, c, dr, dt);
        let r0 = (p[0] - c[0]).hypot(p[1] - c[1]);
        let r1 = (q[0] - c[0]).hypot(q[1] - c[1]);
        prop_assert!((r1 - r0 * (1.0 + dr)).abs() < 1e-12);
    }
}
