//! Thin-plate-spline deformations: 2D warps of the TopoProj texture lookup and
//! 3D perturbation of mesh vertices.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{
    area3, map_point, BaryCoord, ClothMesh, GridIndex, Projection2D, Vec2, Vec3, MIN_AREA_3D,
};

/// Deformation strength: polar perturbation of the 2D control points
/// (`eps_r` fraction of radius, `eps_t` degrees) and the 3D control-grid
/// displacement bound `eps_tps` (fraction of the bounding-box diagonal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpIntensity {
    pub eps_r: f64,
    pub eps_t: f64,
    pub eps_tps: f64,
}

impl WarpIntensity {
    pub const NONE: Self = Self::new(0.0, 0.0, 0.0);
    pub const MILD: Self = Self::new(0.1, 50.0, 0.15);
    pub const MIDDLE: Self = Self::new(0.1, 65.0, 0.22);
    pub const HUGE: Self = Self::new(0.1, 80.0, 0.3);

    pub const fn new(eps_r: f64, eps_t: f64, eps_tps: f64) -> Self {
        Self {
            eps_r,
            eps_t,
            eps_tps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_r", self.eps_r), ("eps_t", self.eps_t), ("eps_tps", self.eps_tps)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Named intensity presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    None,
    Mild,
    Middle,
    Huge,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::None, Preset::Mild, Preset::Middle, Preset::Huge];

    pub fn intensity(self) -> WarpIntensity {
        match self {
            Preset::None => WarpIntensity::NONE,
            Preset::Mild => WarpIntensity::MILD,
            Preset::Middle => WarpIntensity::MIDDLE,
            Preset::Huge => WarpIntensity::HUGE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::None => "none",
            Preset::Mild => "mild",
            Preset::Middle => "middle",
            Preset::Huge => "huge",
        }
    }
}

/// 2D kernel `r^2 log r`, written in terms of `r^2`.
fn u2(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// Solves the bordered TPS system `[K P; P^T 0] [w; a] = [dst; 0]`.
fn solve_tps(k: DMatrix<f64>, poly: &DMatrix<f64>, dst: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let m = poly.ncols();
    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&k);
    a.view_mut((0, n), (n, m)).copy_from(poly);
    a.view_mut((n, 0), (m, n)).copy_from(&poly.transpose());
    let mut rhs = DMatrix::zeros(n + m, dst.ncols());
    rhs.view_mut((0, 0), (n, dst.ncols())).copy_from(dst);
    // The polynomial block must have full column rank (non-collinear /
    // non-coplanar control points).
    let svd = poly.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax.max(1.0)) {
        return Err(Error::Geometry(
            "TPS control points are degenerate (collinear or coplanar)".into(),
        ));
    }
    let lu = a.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Geometry("TPS system is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Geometry("TPS system is singular".into()));
    }
    Ok(sol)
}

fn check_distinct<const D: usize>(src: &[[f64; D]]) -> Result<()> {
    for i in 0..src.len() {
        if src[i].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("control point {i} is not finite")));
        }
        for j in 0..i {
            if src[i] == src[j] {
                return Err(Error::Geometry(format!("control points {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

/// 2D thin-plate spline `f(p) = A [1, x, y] + sum_i w_i U(|p - s_i|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsMap2D {
    pub src: Vec<Vec2>,
    /// Affine part, one row per output coordinate: `[c, a_x, a_y]`.
    pub affine: [[f64; 3]; 2],
    pub weights: Vec<Vec2>,
}

impl TpsMap2D {
    pub fn fit(src: &[Vec2], dst: &[Vec2]) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::InvalidInput(format!(
                "{} source and {} target control points",
                src.len(),
                dst.len()
            )));
        }
        if src.len() < 3 {
            return Err(Error::Geometry("TPS needs at least 3 control points".into()));
        }
        check_distinct(src)?;
        let n = src.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            u2((src[i][0] - src[j][0]).powi(2) + (src[i][1] - src[j][1]).powi(2))
        });
        let poly = DMatrix::from_fn(n, 3, |i, c| if c == 0 { 1.0 } else { src[i][c - 1] });
        let d = DMatrix::from_fn(n, 2, |i, c| dst[i][c]);
        let sol = solve_tps(k, &poly, &d)?;
        Ok(Self {
            src: src.to_vec(),
            affine: [
                [sol[(n, 0)], sol[(n + 1, 0)], sol[(n + 2, 0)]],
                [sol[(n, 1)], sol[(n + 1, 1)], sol[(n + 2, 1)]],
            ],
            weights: (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect(),
        })
    }

    pub fn identity() -> Self {
        Self {
            src: Vec::new(),
            affine: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            weights: Vec::new(),
        }
    }

    pub fn eval(&self, p: Vec2) -> Vec2 {
        let mut out = [
            self.affine[0][0] + self.affine[0][1] * p[0] + self.affine[0][2] * p[1],
            self.affine[1][0] + self.affine[1][1] * p[0] + self.affine[1][2] * p[1],
        ];
        for (s, w) in self.src.iter().zip(&self.weights) {
            let u = u2((p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2));
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    /// Largest violation of the side conditions `sum w = 0`, `sum w x = 0`,
    /// `sum w y = 0`.
    pub fn side_condition_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for c in 0..2 {
            let s0: f64 = self.weights.iter().map(|w| w[c]).sum();
            let sx: f64 = self.weights.iter().zip(&self.src).map(|(w, s)| w[c] * s[0]).sum();
            let sy: f64 = self.weights.iter().zip(&self.src).map(|(w, s)| w[c] * s[1]).sum();
            r = r.max(s0.abs()).max(sx.abs()).max(sy.abs());
        }
        r
    }
}

/// 3D spline with kernel `U(r) = r` and affine part.
#[derive(Debug, Clone, PartialEq)]
pub struct Tps3D {
    pub src: Vec<Vec3>,
    /// Affine part, one row per output coordinate: `[c, a_x, a_y, a_z]`.
    pub affine: [[f64; 4]; 3],
    pub weights: Vec<Vec3>,
}

fn dist3(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Tps3D {
    pub fn fit(src: &[Vec3], dst: &[Vec3]) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::InvalidInput(format!(
                "{} source and {} target control points",
                src.len(),
                dst.len()
            )));
        }
        if src.len() < 4 {
            return Err(Error::Geometry("3D TPS needs at least 4 control points".into()));
        }
        check_distinct(src)?;
        let n = src.len();
        let k = DMatrix::from_fn(n, n, |i, j| dist3(src[i], src[j]));
        let poly = DMatrix::from_fn(n, 4, |i, c| if c == 0 { 1.0 } else { src[i][c - 1] });
        let d = DMatrix::from_fn(n, 3, |i, c| dst[i][c]);
        let sol = solve_tps(k, &poly, &d)?;
        let row = |c: usize| [sol[(n, c)], sol[(n + 1, c)], sol[(n + 2, c)], sol[(n + 3, c)]];
        Ok(Self {
            src: src.to_vec(),
            affine: [row(0), row(1), row(2)],
            weights: (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]]).collect(),
        })
    }

    pub fn eval(&self, p: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let a = self.affine[c];
            *o = a[0] + a[1] * p[0] + a[2] * p[1] + a[3] * p[2];
        }
        for (s, w) in self.src.iter().zip(&self.weights) {
            let u = dist3(p, *s);
            for c in 0..3 {
                out[c] += w[c] * u;
            }
        }
        out
    }
}

/// `n` x `n` grid of control points spanning the bounds.
pub fn control_grid_2d(lo: Vec2, hi: Vec2, n: usize) -> Vec<Vec2> {
    let n = n.max(2);
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let s = i as f64 / (n - 1) as f64;
            let t = j as f64 / (n - 1) as f64;
            pts.push([lo[0] + s * (hi[0] - lo[0]), lo[1] + t * (hi[1] - lo[1])]);
        }
    }
    pts
}

/// `n`^3 grid of control points spanning the bounds.
pub fn control_grid_3d(lo: Vec3, hi: Vec3, n: usize) -> Vec<Vec3> {
    let n = n.max(2);
    let mut pts = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let f = |x: usize, a: f64, b: f64| a + (b - a) * x as f64 / (n - 1) as f64;
                pts.push([f(i, lo[0], hi[0]), f(j, lo[1], hi[1]), f(k, lo[2], hi[2])]);
            }
        }
    }
    pts
}

/// Moves `p` in polar coordinates about `center`: radius scaled by
/// `1 + dr`, angle rotated by `dt_deg` degrees.
pub fn perturb_polar(p: Vec2, center: Vec2, dr: f64, dt_deg: f64) -> Vec2 {
    let (x, y) = (p[0] - center[0], p[1] - center[1]);
    let r = (x * x + y * y).sqrt() * (1.0 + dr);
    let theta = y.atan2(x) + dt_deg.to_radians();
    [center[0] + r * theta.cos(), center[1] + r * theta.sin()]
}

/// Draws one polar perturbation per control point about their centroid.
pub fn sample_polar_perturbation<R: Rng + ?Sized>(
    ctrl: &[Vec2],
    intensity: &WarpIntensity,
    rng: &mut R,
) -> Vec<Vec2> {
    let n = ctrl.len().max(1) as f64;
    let center = ctrl
        .iter()
        .fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
    ctrl.iter()
        .map(|&p| {
            let dr = uniform(rng, intensity.eps_r);
            let dt = uniform(rng, intensity.eps_t);
            perturb_polar(p, center, dr, dt)
        })
        .collect()
}

/// Uniform draw from `[-eps, eps]` (exactly 0 when `eps` is 0).
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, eps: f64) -> f64 {
    if eps > 0.0 {
        rng.random_range(-eps..=eps)
    } else {
        0.0
    }
}

/// Control grid resolution of the TopoProj warp.
pub const TOPO_GRID: usize = 5;

/// Random TopoProj warp: a 5x5 grid over the TopoProj bounds with polar
/// perturbations at the given intensity.
pub fn random_topo_warp<R: Rng + ?Sized>(
    topo: &Projection2D,
    intensity: &WarpIntensity,
    rng: &mut R,
) -> Result<TpsMap2D> {
    let (lo, hi) = topo.bounds();
    let src = control_grid_2d(lo, hi, TOPO_GRID);
    let dst = sample_polar_perturbation(&src, intensity, rng);
    TpsMap2D::fit(&src, &dst)
}

/// Vertical shear `y' = y + s (x - cx)` about the bounds' center, expressed as
/// a TPS fitted on a control grid.
pub fn shear_warp(lo: Vec2, hi: Vec2, s: f64) -> Result<TpsMap2D> {
    let src = control_grid_2d(lo, hi, TOPO_GRID);
    let cx = 0.5 * (lo[0] + hi[0]);
    let dst: Vec<Vec2> = src.iter().map(|p| [p[0], p[1] + s * (p[0] - cx)]).collect();
    TpsMap2D::fit(&src, &dst)
}

/// Point location on a mesh's TopoProj, built once per mesh.
#[derive(Debug, Clone)]
pub struct TopoLookup {
    index: GridIndex,
}

/// Where a warped garment point samples the texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpHit {
    /// Triangle and barycentric coordinate on the GeoProj.
    pub tri: usize,
    pub bary: BaryCoord,
    /// The GeoProj point.
    pub point: Vec2,
}

impl TopoLookup {
    pub fn new(mesh: &ClothMesh) -> Result<Self> {
        let topo = topo_of(mesh)?;
        Ok(Self {
            index: GridIndex::build(topo),
        })
    }

    /// The five-step lookup: geo point (triangle + barycentric) → TopoProj
    /// correspondent → TPS warp → locate on TopoProj → back to GeoProj.
    /// `None` when the warped point leaves the TopoProj.
    pub fn warp_lookup(
        &self,
        mesh: &ClothMesh,
        tri: usize,
        b: BaryCoord,
        tps: &TpsMap2D,
    ) -> Result<Option<WarpHit>> {
        let topo = topo_of(mesh)?;
        let p_topo = map_point(&mesh.geo, topo, tri, b)?;
        let c = tps.eval(p_topo);
        let Some((t2, b2)) = self.index.locate(topo, c) else {
            return Ok(None);
        };
        let point = map_point(topo, &mesh.geo, t2, b2)?;
        Ok(Some(WarpHit {
            tri: t2,
            bary: b2,
            point,
        }))
    }
}

fn topo_of(mesh: &ClothMesh) -> Result<&Projection2D> {
    mesh.topo
        .as_ref()
        .ok_or_else(|| Error::Validation("mesh has no topo projection".into()))
}

/// Convenience wrapper building the point index on every call.
pub fn warp_lookup(
    tri: usize,
    b: BaryCoord,
    mesh: &ClothMesh,
    tps: &TpsMap2D,
) -> Result<Option<Vec2>> {
    Ok(TopoLookup::new(mesh)?
        .warp_lookup(mesh, tri, b, tps)?
        .map(|h| h.point))
}

/// Control grid points per axis for the 3D perturbation.
pub const GRID_3D: usize = 3;

/// Perturbs mesh vertices with a random 3D TPS: every control-grid point
/// (over the padded bounding box) moves by `U[-eps_tps, eps_tps]` times the
/// bounding-box diagonal per axis. Resamples once if a triangle degenerates.
pub fn tps3d_perturb<R: Rng + ?Sized>(
    mesh: &ClothMesh,
    n_grid: usize,
    intensity: &WarpIntensity,
    rng: &mut R,
) -> Result<(ClothMesh, Tps3D)> {
    intensity.validate()?;
    let (lo, hi) = mesh.bounds3();
    let diag = dist3(lo, hi);
    // Pad so a flat mesh still gets a non-coplanar grid.
    let pad = 0.05 * diag;
    let lo = [lo[0] - pad, lo[1] - pad, lo[2] - pad];
    let hi = [hi[0] + pad, hi[1] + pad, hi[2] + pad];
    let grid = control_grid_3d(lo, hi, n_grid);
    for _attempt in 0..2 {
        let dst: Vec<Vec3> = grid
            .iter()
            .map(|p| {
                let mut q = *p;
                for v in &mut q {
                    *v += uniform(rng, intensity.eps_tps) * diag;
                }
                q
            })
            .collect();
        let tps = Tps3D::fit(&grid, &dst)?;
        let moved: Vec<Vec3> = mesh.vertices.iter().map(|&v| tps.eval(v)).collect();
        let ok = mesh
            .triangles
            .iter()
            .all(|t| area3(moved[t[0]], moved[t[1]], moved[t[2]]) > MIN_AREA_3D);
        if ok {
            return Ok((mesh.with_vertices(moved), tps));
        }
    }
    Err(Error::Geometry(
        "3D TPS perturbation produced degenerate triangles twice".into(),
    ))
}
