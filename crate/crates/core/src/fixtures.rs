//! Synthetic garments used for demos, tests and the desk-scale attack.
//!
//! All meshes are unit-scale (meters), y up, the front of a garment facing +z.

use std::f64::consts::PI;

use crate::error::Result;
use crate::mesh::{signed_area2, ClothMesh, Projection2D, SeamPairs, Vec2, Vec3};

/// Incremental mesh builder working on grids of quads.
#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    points: Vec<Vec2>,
    corners: Vec<[usize; 3]>,
}

impl Builder {
    fn vertex(&mut self, v: Vec3) -> usize {
        self.vertices.push(v);
        self.vertices.len() - 1
    }

    /// Adds an `nx` x `ny` quad grid. `geo(i, j)` gives the layout position and
    /// `vert(i, j)` the 3D vertex of grid node `(i, j)`. Returns the geo point
    /// index of every node, `[i][j]`.
    fn grid(
        &mut self,
        nx: usize,
        ny: usize,
        geo: impl Fn(usize, usize) -> Vec2,
        mut vert: impl FnMut(&mut Self, usize, usize) -> usize,
    ) -> Vec<Vec<usize>> {
        let mut pts = vec![vec![0; ny + 1]; nx + 1];
        let mut verts = vec![vec![0; ny + 1]; nx + 1];
        for (i, (col, vcol)) in pts.iter_mut().zip(verts.iter_mut()).enumerate() {
            for j in 0..=ny {
                self.points.push(geo(i, j));
                col[j] = self.points.len() - 1;
                vcol[j] = vert(self, i, j);
            }
        }
        for i in 0..nx {
            for j in 0..ny {
                let quad = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
                // Alternate the diagonal for a more isotropic triangulation.
                let tris = if (i + j) % 2 == 0 {
                    [[0, 1, 2], [0, 2, 3]]
                } else {
                    [[0, 1, 3], [1, 2, 3]]
                };
                for t in tris {
                    let mut c = t.map(|k| pts[quad[k].0][quad[k].1]);
                    let mut v = t.map(|k| verts[quad[k].0][quad[k].1]);
                    let a = signed_area2(self.points[c[0]], self.points[c[1]], self.points[c[2]]);
                    if a < 0.0 {
                        c.swap(1, 2);
                        v.swap(1, 2);
                    }
                    self.corners.push(c);
                    self.triangles.push(v);
                }
            }
        }
        pts
    }

    fn finish(self, topo: Option<Vec<Vec2>>) -> Result<ClothMesh> {
        let geo = Projection2D::new(self.points, self.corners)?;
        let topo = topo.map(|p| geo.with_points(p));
        ClothMesh::new(self.vertices, self.triangles, geo, topo)
    }
}

/// A garment fixture: mesh, seams and a bent starting layout for zipping.
#[derive(Debug, Clone)]
pub struct Garment {
    pub mesh: ClothMesh,
    pub seams: SeamPairs,
    /// Initial layout for the zipping relaxation (pieces bent toward each
    /// other, no flipped triangles).
    pub zip_init: Vec<Vec2>,
}

/// Maps a piece with layout bounds `(u0, v0)`..`(u0+w, v0+h)` onto an annular
/// sector: `u` sweeps the angle from `theta0` to `theta1`, `v` the radius from
/// `r_bottom` to `r_top`. Orientation is preserved when
/// `(theta1 - theta0) * (r_top - r_bottom) < 0`.
#[allow(clippy::too_many_arguments)]
pub fn bend(
    p: Vec2,
    origin: Vec2,
    size: Vec2,
    theta0: f64,
    theta1: f64,
    r_bottom: f64,
    r_top: f64,
) -> Vec2 {
    let s = (p[0] - origin[0]) / size[0];
    let t = (p[1] - origin[1]) / size[1];
    let theta = theta0 + (theta1 - theta0) * s;
    let r = r_bottom + (r_top - r_bottom) * t;
    [r * theta.cos(), r * theta.sin()]
}

/// Open cylinder around the y axis cut into two pieces (front and back).
///
/// `n_around` (even) columns around, `n_rows` rows. The TopoProj is the
/// analytic annulus: angle follows the column, radius shrinks with height.
pub fn cylinder(n_around: usize, n_rows: usize, radius: f64, height: f64) -> Result<Garment> {
    assert!(n_around >= 4 && n_around % 2 == 0 && n_rows >= 1);
    let half = n_around / 2;
    let chord = 2.0 * radius * (PI / n_around as f64).sin();
    let dv = height / n_rows as f64;
    let width = half as f64 * chord;
    let gap = 0.25 * width;
    let mut b = Builder::default();
    // Shared vertex ring per row, column k at angle measured from +z so that
    // column 0..half is the front.
    let mut ring = vec![vec![0; n_rows + 1]; n_around];
    for (k, col) in ring.iter_mut().enumerate() {
        let phi = -PI / 2.0 + 2.0 * PI * k as f64 / n_around as f64;
        for (j, slot) in col.iter_mut().enumerate() {
            *slot = b.vertex([
                radius * phi.sin() * -1.0,
                j as f64 * dv,
                radius * phi.cos(),
            ]);
        }
    }
    let mut pieces = Vec::new();
    for p in 0..2 {
        let x0 = p as f64 * (width + gap);
        let pts = b.grid(
            half,
            n_rows,
            |i, j| [x0 + i as f64 * chord, j as f64 * dv],
            |_, i, j| ring[(p * half + i) % n_around][j],
        );
        pieces.push(pts);
    }
    let mut pairs = Vec::new();
    for j in 0..=n_rows {
        pairs.push((pieces[0][half][j], pieces[1][0][j]));
        pairs.push((pieces[1][half][j], pieces[0][0][j]));
    }
    let r_out = 1.5 * height;
    let r_in = 0.5 * height;
    let annulus = |k: usize, j: usize, gap_angle: f64| -> Vec2 {
        let theta = 2.0 * PI * (k % n_around) as f64 / n_around as f64 + gap_angle;
        let r = r_out - (r_out - r_in) * j as f64 / n_rows as f64;
        [r * theta.cos(), r * theta.sin()]
    };
    let mut topo = vec![[0.0; 2]; b.points.len()];
    let mut init = vec![[0.0; 2]; b.points.len()];
    // Start with each half shrunk to 2/3 of its angular span.
    let shrink = 2.0 / 3.0;
    for (p, pts) in pieces.iter().enumerate() {
        for (i, col) in pts.iter().enumerate() {
            for (j, &idx) in col.iter().enumerate() {
                topo[idx] = annulus(p * half + i, j, 0.0);
                let theta = PI * (p as f64 + 0.5)
                    + PI * shrink * (i as f64 / half as f64 - 0.5);
                let r = r_out - (r_out - r_in) * j as f64 / n_rows as f64;
                init[idx] = [r * theta.cos(), r * theta.sin()];
            }
        }
    }
    // Seam points of the topo annulus must coincide exactly.
    for &(a, c) in &pairs {
        topo[c] = topo[a];
    }
    Ok(Garment {
        mesh: b.finish(Some(topo))?,
        seams: SeamPairs { pairs },
        zip_init: init,
    })
}

/// The 16-triangle two-piece cylinder used throughout the tests.
pub fn cylinder_fixture() -> Garment {
    cylinder(8, 1, 0.5, 1.0).expect("fixture is valid")
}

/// Single rectangular strip whose left and right edges are the same 3D
/// vertices (a cylinder with one seam). The zipping start bends the strip into
/// a C-shape.
pub fn strip(n_around: usize, n_rows: usize, radius: f64, height: f64) -> Result<Garment> {
    assert!(n_around >= 3 && n_rows >= 1);
    let chord = 2.0 * radius * (PI / n_around as f64).sin();
    let dv = height / n_rows as f64;
    let mut b = Builder::default();
    let mut ring = vec![vec![0; n_rows + 1]; n_around];
    for (k, col) in ring.iter_mut().enumerate() {
        let phi = 2.0 * PI * k as f64 / n_around as f64;
        for (j, slot) in col.iter_mut().enumerate() {
            *slot = b.vertex([-radius * phi.sin(), j as f64 * dv, radius * phi.cos()]);
        }
    }
    let pts = b.grid(
        n_around,
        n_rows,
        |i, j| [i as f64 * chord, j as f64 * dv],
        |_, i, j| ring[i % n_around][j],
    );
    let pairs: Vec<_> = (0..=n_rows).map(|j| (pts[0][j], pts[n_around][j])).collect();
    let width = n_around as f64 * chord;
    // C-shape: 300 degrees of arc with the mid radius preserving the length.
    let span = 300f64.to_radians();
    let r_mid = width / span;
    let r_top = r_mid - 0.5 * height.min(r_mid);
    let r_bottom = r_mid + 0.5 * height.min(r_mid);
    let start = PI / 2.0 + (2.0 * PI - span) / 2.0;
    let init = b
        .points
        .iter()
        .map(|&p| bend(p, [0.0, 0.0], [width, height], start, start + span, r_bottom, r_top))
        .collect();
    Ok(Garment {
        mesh: b.finish(None)?,
        seams: SeamPairs { pairs },
        zip_init: init,
    })
}

/// Two-piece "tube shirt": front and back panels joined along both sides and
/// the shoulders, leaving a neck opening and the hem open.
///
/// `nx` columns across each panel (the outer `n_shoulder` columns of the top
/// row form each shoulder seam), `ny` rows.
pub fn tube_shirt(nx: usize, ny: usize, n_shoulder: usize) -> Result<Garment> {
    assert!(nx >= 2 * n_shoulder + 1 && n_shoulder >= 1 && ny >= 1);
    let (half_width, depth, height) = (0.22, 0.12, 0.7);
    let dv = height / ny as f64;
    // Panel layout spacing: mean arc length per column.
    let du = PI * (half_width + depth) / 2.0 / nx as f64;
    let width = nx as f64 * du;
    let is_shoulder = |i: usize| i < n_shoulder || i > nx - n_shoulder;
    let pos = |theta: f64, i: usize, j: usize| -> Vec3 {
        let d = if j == ny {
            if is_shoulder(i) {
                0.0
            } else {
                0.5 * depth
            }
        } else {
            depth
        };
        [half_width * theta.cos(), j as f64 * dv, d * theta.sin()]
    };
    let mut b = Builder::default();
    let mut front_vert = vec![vec![0; ny + 1]; nx + 1];
    let front = b.grid(
        nx,
        ny,
        |i, j| [i as f64 * du, j as f64 * dv],
        |b, i, j| {
            let v = b.vertex(pos(PI - PI * i as f64 / nx as f64, i, j));
            front_vert[i][j] = v;
            v
        },
    );
    let x0 = width * 1.25;
    let back = b.grid(
        nx,
        ny,
        // Seen from outside, the back panel is mirrored.
        |i, j| [x0 + (nx - i) as f64 * du, j as f64 * dv],
        |b, i, j| {
            let shared = i == 0 || i == nx || (j == ny && is_shoulder(i));
            if shared {
                front_vert[i][j]
            } else {
                b.vertex(pos(PI + PI * i as f64 / nx as f64, i, j))
            }
        },
    );
    let mut pairs = Vec::new();
    for j in 0..=ny {
        pairs.push((front[0][j], back[0][j]));
        pairs.push((front[nx][j], back[nx][j]));
    }
    for i in (1..nx).filter(|&i| is_shoulder(i)) {
        pairs.push((front[i][ny], back[i][ny]));
    }
    // Start: front bent over the upper half plane, back over the lower, hem
    // on the inner ring and shoulders outside.
    let r_in = width / PI;
    let r_out = r_in + height;
    let delta = 0.15;
    let mut init = vec![[0.0; 2]; b.points.len()];
    for (i, col) in front.iter().enumerate() {
        for (j, &idx) in col.iter().enumerate() {
            let p = [i as f64 * du, j as f64 * dv];
            init[idx] = bend(p, [0.0, 0.0], [width, height], PI - delta, delta, r_in, r_out);
        }
    }
    for (i, col) in back.iter().enumerate() {
        for (j, &idx) in col.iter().enumerate() {
            let p = [(nx - i) as f64 * du, j as f64 * dv];
            init[idx] = bend(
                p,
                [0.0, 0.0],
                [width, height],
                2.0 * PI - delta,
                PI + delta,
                r_in,
                r_out,
            );
        }
    }
    Ok(Garment {
        mesh: b.finish(None)?,
        seams: SeamPairs { pairs },
        zip_init: init,
    })
}

/// The default shirt fixture.
pub fn shirt_fixture() -> Garment {
    tube_shirt(8, 6, 2).expect("fixture is valid")
}

/// Aspect ratio of a 2D triangle: 1 for equilateral, growing with skew.
pub fn aspect_ratio(t: [Vec2; 3]) -> f64 {
    let e = |a: Vec2, b: Vec2| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let sum = e(t[0], t[1]) + e(t[1], t[2]) + e(t[2], t[0]);
    sum / (4.0 * 3f64.sqrt() * signed_area2(t[0], t[1], t[2]).abs() / 2.0)
}
