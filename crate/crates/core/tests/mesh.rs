use advcat::fixtures::{cylinder_fixture, shirt_fixture, strip};
use advcat::mesh::io::{
    mesh_from_texts, parse_obj, parse_projection, parse_seams, projection_to_toml, seams_to_toml, write_obj,
};
use advcat::mesh::*;
use advcat::Error;
use proptest::prelude::*;

#[test]
fn grid_index_agrees_with_exhaustive_search() {
    for g in [cylinder_fixture(), shirt_fixture()] {
        let proj = &g.mesh.geo;
        let idx = GridIndex::build(proj);
        let (lo, hi) = proj.bounds();
        let n = 60;
        for i in 0..n {
            for j in 0..n {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.37) / n as f64,
                    lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.61) / n as f64,
                ];
                let a = idx.locate(proj, p).map(|(t, b)| b.interpolate2(proj.triangle(t)));
                let b = proj.locate_exhaustive(p);
                assert_eq!(a.is_some(), b.is_some(), "{p:?}");
                if let Some(q) = a {
                    assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn fixtures_are_valid_meshes() {
    for g in [cylinder_fixture(), shirt_fixture(), strip(12, 4, 0.3, 1.0).unwrap()] {
        g.mesh.check_seams(&g.seams).unwrap();
        assert!(g.mesh.geo.check_orientation(true).is_ok());
        assert_eq!(g.zip_init.len(), g.mesh.geo.points.len());
        for t in 0..g.mesh.n_triangles() {
            let [a, b, c] = g.mesh.triangle3(t);
            assert!(area3(a, b, c) > MIN_AREA_3D);
        }
    }
    assert_eq!(shirt_fixture().mesh.geo.n_pieces(), 2);
}

#[test]
fn obj_and_layout_files_round_trip() {
    let g = shirt_fixture();
    let obj = write_obj(&g.mesh);
    let geo = projection_to_toml(&g.mesh.geo).unwrap();
    let seams = seams_to_toml(&g.seams).unwrap();
    let (mesh, s) = mesh_from_texts(&obj, Some(&geo), None, Some(&seams)).unwrap();
    assert_eq!(mesh.triangles, g.mesh.triangles);
    assert_eq!(mesh.geo, g.mesh.geo);
    assert_eq!(s.unwrap(), g.seams);
    for (a, b) in mesh.vertices.iter().zip(&g.mesh.vertices) {
        assert_eq!(a, b);
    }
    assert_eq!(parse_projection(&geo).unwrap(), g.mesh.geo);
    assert_eq!(parse_seams(&seams).unwrap(), g.seams);
}

#[test]
fn obj_accepts_negative_indices_and_quads() {
    let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf -4/-4 -3/-3 -2/-2 -1/-1\n";
    let obj = parse_obj(text).unwrap();
    assert_eq!(obj.faces, vec![[0, 1, 2], [0, 2, 3]]);
}

#[test]
fn inverted_layout_is_rejected() {
    let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvt 1 1\nf 1/1 2/2 3/3\nf 2/2 3/3 4/4\n";
    // Second face is clockwise in the layout while the first is not.
    assert!(matches!(mesh_from_texts(text, None, None, None), Err(Error::Geometry(_) | Error::Validation(_))));
}

#[test]
fn map_point_between_identical_layouts() {
    let g = cylinder_fixture();
    let b = BaryCoord([0.2, 0.3, 0.5]);
    for t in [0, 7, 15] {
        let p = map_point(&g.mesh.geo, &g.mesh.geo, t, b).unwrap();
        let q = b.interpolate2(g.mesh.geo.triangle(t));
        assert_eq!(p, q);
    }
}

fn triangle() -> impl Strategy<Value = [Vec2; 3]> {
    prop::array::uniform3(prop::array::uniform2(-10.0f64..10.0))
        .prop_filter("non-degenerate", |t| signed_area(t[0], t[1], t[2]).abs() > 1e-2)
}

proptest! {
    #[test]
    fn barycentric_round_trip(t in triangle(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
        let w = [1.0 - u - v, u, v];
        let p = BaryCoord(w).interpolate2(t);
        let b = barycentric(p, t).unwrap();
        for k in 0..3 {
            prop_assert!((b.0[k] - w[k]).abs() < 1e-9);
        }
        prop_assert!((b.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.is_inside());
    }

    #[test]
    fn cross_product_is_orthogonal(a in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform3(-5.0f64..5.0)) {
        let c = cross3(a, b);
        let s = 1.0 + norm3(a) * norm3(b);
        prop_assert!(dot3(a, c).abs() < 1e-12 * s * s);
        prop_assert!(dot3(b, c).abs() < 1e-12 * s * s);
        prop_assert!((2.0 * area3([0.0; 3], a, b) - norm3(c)).abs() < 1e-12 * s);
    }
}
