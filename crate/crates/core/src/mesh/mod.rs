//! Clothing meshes with two planar layouts of the same triangles.
//!
//! The geometric layout (`geo`) is the printable texture map: pieces are laid
//! out flat, and vertices on a seam appear once per piece. The topological
//! layout (`topo`) keeps adjacency across seams. Both layouts are stored as a
//! corner table: every triangle corner references a 2D point, and points are
//! shared between triangles of the same piece.

mod index;
pub mod io;

pub use index::GridIndex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];

/// Minimum 3D triangle area in square meters.
pub const MIN_AREA_3D: f64 = 1e-12;
/// Minimum absolute 2D signed area for barycentric evaluation.
pub const MIN_AREA_2D: f64 = 1e-12;
/// Barycentric tolerance for point-in-triangle tests.
pub const INSIDE_TOL: f64 = 1e-9;

/// Barycentric coordinates of a point with respect to a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaryCoord(pub [f64; 3]);

impl BaryCoord {
    pub const CENTROID: BaryCoord = BaryCoord([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);

    pub fn min(&self) -> f64 {
        self.0[0].min(self.0[1]).min(self.0[2])
    }

    pub fn is_inside(&self) -> bool {
        self.min() >= -INSIDE_TOL
    }

    pub fn interpolate2(&self, p: [Vec2; 3]) -> Vec2 {
        let l = self.0;
        [
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ]
    }

    pub fn interpolate3(&self, p: [Vec3; 3]) -> Vec3 {
        let l = self.0;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = l[0] * p[0][c] + l[1] * p[1][c] + l[2] * p[2][c];
        }
        out
    }
}

/// Twice the signed area of a 2D triangle (positive when counter-clockwise).
#[inline]
pub fn signed_area2(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Signed area of a 2D triangle.
#[inline]
pub fn signed_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * signed_area2(a, b, c)
}

pub fn area3(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let u = sub3(b, a);
    let v = sub3(c, a);
    0.5 * norm3(cross3(u, v))
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    if n > 0.0 {
        scale3(a, 1.0 / n)
    } else {
        a
    }
}

/// Barycentric coordinates of `p` in `tri`.
pub fn barycentric(p: Vec2, tri: [Vec2; 3]) -> Result<BaryCoord> {
    let area = signed_area2(tri[0], tri[1], tri[2]);
    if area.abs() <= 2.0 * MIN_AREA_2D {
        return Err(Error::Geometry(format!(
            "degenerate triangle {tri:?} (signed area {})",
            0.5 * area
        )));
    }
    let l0 = signed_area2(p, tri[1], tri[2]) / area;
    let l1 = signed_area2(tri[0], p, tri[2]) / area;
    // The third coordinate is derived so the sum is exactly one up to rounding.
    Ok(BaryCoord([l0, l1, 1.0 - l0 - l1]))
}

/// A planar layout of a triangle mesh as a corner table.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    /// 2D points referenced by triangle corners.
    pub points: Vec<Vec2>,
    /// Per triangle, the point index of each corner.
    pub corners: Vec<[usize; 3]>,
    /// Per triangle, the connected piece it belongs to.
    pub piece_id: Vec<usize>,
}

impl Projection2D {
    pub fn new(points: Vec<Vec2>, corners: Vec<[usize; 3]>) -> Result<Self> {
        for (t, c) in corners.iter().enumerate() {
            if let Some(i) = c.iter().find(|&&i| i >= points.len()) {
                return Err(Error::Format(format!(
                    "triangle {t} references point {i} but only {} exist",
                    points.len()
                )));
            }
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Format(format!("2D point {i} is not finite")));
        }
        let piece_id = connected_pieces(points.len(), &corners);
        Ok(Self {
            points,
            corners,
            piece_id,
        })
    }

    pub fn n_triangles(&self) -> usize {
        self.corners.len()
    }

    pub fn n_pieces(&self) -> usize {
        self.piece_id.iter().copied().max().map_or(0, |m| m + 1)
    }

    #[inline]
    pub fn triangle(&self, t: usize) -> [Vec2; 3] {
        let c = self.corners[t];
        [self.points[c[0]], self.points[c[1]], self.points[c[2]]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        signed_area(a, b, c)
    }

    /// Axis-aligned bounds `(min, max)` over all referenced points.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &self.corners {
            for &i in c {
                let p = self.points[i];
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        (lo, hi)
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Same topology with new point positions.
    pub fn with_points(&self, points: Vec<Vec2>) -> Self {
        Self {
            points,
            corners: self.corners.clone(),
            piece_id: self.piece_id.clone(),
        }
    }

    /// Checks that signed areas share one sign within each piece (`per_piece`)
    /// or across the whole layout. Returns the sign per piece.
    pub fn check_orientation(&self, per_piece: bool) -> Result<Vec<f64>> {
        let n_groups = if per_piece { self.n_pieces() } else { 1 };
        let mut sign = vec![0.0f64; n_groups];
        let mut offenders = Vec::new();
        for t in 0..self.n_triangles() {
            let g = if per_piece { self.piece_id[t] } else { 0 };
            let a = self.signed_area(t);
            if a.abs() <= MIN_AREA_2D {
                offenders.push(t);
                continue;
            }
            if sign[g] == 0.0 {
                sign[g] = a.signum();
            } else if a.signum() != sign[g] {
                offenders.push(t);
            }
        }
        if offenders.is_empty() {
            Ok(sign)
        } else {
            Err(Error::Validation(format!(
                "inconsistent or degenerate 2D orientation at triangles {offenders:?}"
            )))
        }
    }

    /// Point location by scanning every triangle (lowest id wins).
    pub fn locate_exhaustive(&self, p: Vec2) -> Option<(usize, BaryCoord)> {
        (0..self.n_triangles()).find_map(|t| {
            let b = barycentric(p, self.triangle(t)).ok()?;
            b.is_inside().then_some((t, b))
        })
    }
}

/// Labels triangles by connected component, where triangles connect through
/// shared 2D points. Components are numbered in order of first triangle.
fn connected_pieces(n_points: usize, corners: &[[usize; 3]]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n_points).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for c in corners {
        let a = find(&mut parent, c[0]);
        for &k in &c[1..] {
            let b = find(&mut parent, k);
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi] = lo;
            }
        }
    }
    let mut label = vec![usize::MAX; n_points];
    let mut next = 0;
    corners
        .iter()
        .map(|c| {
            let r = find(&mut parent, c[0]);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            label[r]
        })
        .collect()
}

/// Pairs of geo-layout points that are the same 3D vertex across a seam.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeamPairs {
    pub pairs: Vec<(usize, usize)>,
}

/// A clothing mesh with its printable layout and optional TopoProj.
#[derive(Debug, Clone)]
pub struct ClothMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub geo: Projection2D,
    pub topo: Option<Projection2D>,
    /// 3D vertex of every geo point.
    pub point_vertex: Vec<usize>,
}

impl ClothMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        geo: Projection2D,
        topo: Option<Projection2D>,
    ) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(i) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::Format(format!(
                    "face {t} references vertex {i} but only {} exist",
                    vertices.len()
                )));
            }
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Format(format!("vertex {i} is not finite")));
        }
        if geo.n_triangles() != triangles.len() {
            return Err(Error::Format(format!(
                "geo projection has {} triangles, mesh has {}",
                geo.n_triangles(),
                triangles.len()
            )));
        }
        if let Some(topo) = &topo {
            if topo.n_triangles() != triangles.len() {
                return Err(Error::Format(format!(
                    "topo projection has {} triangles, mesh has {}",
                    topo.n_triangles(),
                    triangles.len()
                )));
            }
            if topo.corners != geo.corners {
                return Err(Error::Format(
                    "topo projection triangle list differs from the geo projection".into(),
                ));
            }
        }
        let degenerate: Vec<usize> = triangles
            .iter()
            .enumerate()
            .filter(|(_, t)| area3(vertices[t[0]], vertices[t[1]], vertices[t[2]]) <= MIN_AREA_3D)
            .map(|(i, _)| i)
            .collect();
        if !degenerate.is_empty() {
            return Err(Error::Validation(format!(
                "degenerate 3D triangles: {degenerate:?}"
            )));
        }
        let mut point_vertex = vec![usize::MAX; geo.points.len()];
        for (t, (tri, c)) in triangles.iter().zip(&geo.corners).enumerate() {
            for k in 0..3 {
                let slot = &mut point_vertex[c[k]];
                if *slot == usize::MAX {
                    *slot = tri[k];
                } else if *slot != tri[k] {
                    return Err(Error::Validation(format!(
                        "geo point {} maps to vertices {} and {} (face {t})",
                        c[k], *slot, tri[k]
                    )));
                }
            }
        }
        geo.check_orientation(true)?;
        if let Some(topo) = &topo {
            topo.check_orientation(false)?;
        }
        Ok(Self {
            vertices,
            triangles,
            geo,
            topo,
            point_vertex,
        })
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle3(&self, t: usize) -> [Vec3; 3] {
        let c = self.triangles[t];
        [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]]
    }

    /// 3D bounding box `(min, max)`.
    pub fn bounds3(&self) -> (Vec3, Vec3) {
        bounds3(&self.vertices)
    }

    /// Validates seam pairs against this mesh.
    pub fn check_seams(&self, seams: &SeamPairs) -> Result<()> {
        let n = self.geo.points.len();
        let mut piece_of_point = vec![usize::MAX; n];
        for (t, c) in self.geo.corners.iter().enumerate() {
            for &i in c {
                piece_of_point[i] = self.geo.piece_id[t];
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (k, &(a, b)) in seams.pairs.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::Format(format!(
                    "seam pair {k} ({a}, {b}) references a point outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("seam pair {k} pairs point {a} with itself")));
            }
            if self.point_vertex[a] != self.point_vertex[b] {
                return Err(Error::Validation(format!(
                    "seam pair {k} ({a}, {b}) joins different 3D vertices {} and {}",
                    self.point_vertex[a], self.point_vertex[b]
                )));
            }
            if !seen.insert((a, piece_of_point[b])) || !seen.insert((b, piece_of_point[a])) {
                return Err(Error::Validation(format!(
                    "seam pair {k}: a point is paired twice with the same piece"
                )));
            }
        }
        Ok(())
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        Self {
            vertices,
            triangles: self.triangles.clone(),
            geo: self.geo.clone(),
            topo: self.topo.clone(),
            point_vertex: self.point_vertex.clone(),
        }
    }
}

pub fn bounds3(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in points {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (lo, hi)
}

/// Point on `dst` with the same barycentric coordinates in triangle `tri`.
pub fn map_point(src: &Projection2D, dst: &Projection2D, tri: usize, b: BaryCoord) -> Result<Vec2> {
    if tri >= src.n_triangles() || tri >= dst.n_triangles() {
        return Err(Error::Range(format!(
            "triangle {tri} outside 0..{}",
            src.n_triangles().min(dst.n_triangles())
        )));
    }
    Ok(b.interpolate2(dst.triangle(tri)))
}
