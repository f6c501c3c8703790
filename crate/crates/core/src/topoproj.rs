//! Zipping: relaxes a geometric layout into a topologically plausible one.
//!
//! Seam pairs are pulled together while every triangle is pushed back toward
//! its rest shape. The time step is chosen per iteration so that no triangle
//! can reach zero area, which keeps every triangle's orientation fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{signed_area2, ClothMesh, Projection2D, SeamPairs, Vec2, MIN_AREA_2D};

/// Relaxation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZipParams {
    /// Fraction of the largest flip-free step actually taken.
    pub gamma: f64,
    /// Upper bound on the time step.
    pub beta_max: f64,
    /// Linear spring coefficient between paired points.
    pub k_pair: f64,
    /// Convergence threshold on the largest pair distance. `None` means
    /// `1e-3` times the initial layout diagonal.
    pub tol_pair: Option<f64>,
    pub max_iters: usize,
}

impl Default for ZipParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            beta_max: 0.1,
            k_pair: 1.0e4,
            tol_pair: None,
            max_iters: 20_000,
        }
    }
}

impl ZipParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Domain(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(self.beta_max > 0.0) {
            return Err(Error::Domain(format!("beta_max {} must be > 0", self.beta_max)));
        }
        if let Some(t) = self.tol_pair {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("tol_pair {t} must be > 0")));
            }
        }
        if !(self.k_pair >= 0.0) {
            return Err(Error::Domain(format!("k_pair {} must be >= 0", self.k_pair)));
        }
        Ok(())
    }
}

/// Mutable relaxation state.
#[derive(Debug, Clone)]
pub struct ZipState {
    pub coords: Vec<Vec2>,
    pub step: usize,
    pub max_pair_distance: f64,
    pub flip_count: usize,
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZipTraceRow {
    pub step: usize,
    pub beta: f64,
    pub max_pair_distance: f64,
    pub flip_count: usize,
}

/// Result of a successful relaxation.
#[derive(Debug, Clone)]
pub struct ZipOutcome {
    pub topo: Projection2D,
    pub iterations: usize,
    pub final_pair_distance: f64,
    pub trace: Vec<ZipTraceRow>,
}

/// Altitude vector from the edge `(pj, pl)` to `pi`.
///
/// With `a = pi - pj`, `b = pi - pl`, `c = pj - pl` this is
/// `((b.c) a - (a.c) b) / (c.c)`.
pub fn altitude(pi: Vec2, pj: Vec2, pl: Vec2) -> Vec2 {
    let a = [pi[0] - pj[0], pi[1] - pj[1]];
    let b = [pi[0] - pl[0], pi[1] - pl[1]];
    let c = [pj[0] - pl[0], pj[1] - pl[1]];
    let bc = b[0] * c[0] + b[1] * c[1];
    let ac = a[0] * c[0] + a[1] * c[1];
    let cc = c[0] * c[0] + c[1] * c[1];
    [(bc * a[0] - ac * b[0]) / cc, (bc * a[1] - ac * b[1]) / cc]
}

/// Rest corner `ri` carried by the rigid motion that maps rest edge
/// `(rj, rl)` onto the deformed edge `(dj, dl)`: directions aligned, midpoints
/// coincident.
pub fn aligned_rest_corner(ri: Vec2, rj: Vec2, rl: Vec2, dj: Vec2, dl: Vec2) -> Vec2 {
    let re = [rl[0] - rj[0], rl[1] - rj[1]];
    let de = [dl[0] - dj[0], dl[1] - dj[1]];
    let theta = de[1].atan2(de[0]) - re[1].atan2(re[0]);
    let (s, c) = theta.sin_cos();
    let rm = [0.5 * (rj[0] + rl[0]), 0.5 * (rj[1] + rl[1])];
    let dm = [0.5 * (dj[0] + dl[0]), 0.5 * (dj[1] + dl[1])];
    let v = [ri[0] - rm[0], ri[1] - rm[1]];
    [dm[0] + c * v[0] - s * v[1], dm[1] + s * v[0] + c * v[1]]
}

/// Zipping problem: rest shapes, seam pairs and per-triangle orientation.
pub struct Zipper<'a> {
    proj: &'a Projection2D,
    pairs: Vec<(usize, usize)>,
    /// Rest triangle per face, mirrored when its initial orientation differs
    /// from the geo layout so a rigid motion can match it.
    rest: Vec<[Vec2; 3]>,
    sign: Vec<f64>,
}

impl<'a> Zipper<'a> {
    /// `init` supplies the starting coordinates of every geo point.
    pub fn new(mesh: &'a ClothMesh, seams: &SeamPairs, init: &[Vec2]) -> Result<Self> {
        mesh.check_seams(seams)?;
        let proj = &mesh.geo;
        if init.len() != proj.points.len() {
            return Err(Error::Validation(format!(
                "initial layout has {} points, geo projection has {}",
                init.len(),
                proj.points.len()
            )));
        }
        let mut sign = Vec::with_capacity(proj.n_triangles());
        let mut global = 0.0;
        let mut offenders = Vec::new();
        for (t, c) in proj.corners.iter().enumerate() {
            let a = signed_area2(init[c[0]], init[c[1]], init[c[2]]);
            if a.abs() <= 2.0 * MIN_AREA_2D {
                offenders.push(t);
                sign.push(0.0);
                continue;
            }
            if global == 0.0 {
                global = a.signum();
            }
            if a.signum() != global {
                offenders.push(t);
            }
            sign.push(a.signum());
        }
        if !offenders.is_empty() {
            return Err(Error::Validation(format!(
                "initial layout has flipped or degenerate triangles: {offenders:?}"
            )));
        }
        let rest = proj
            .corners
            .iter()
            .zip(&sign)
            .map(|(c, &s)| {
                let tri = [proj.points[c[0]], proj.points[c[1]], proj.points[c[2]]];
                let rs = signed_area2(tri[0], tri[1], tri[2]).signum();
                if rs == s {
                    tri
                } else {
                    tri.map(|p| [p[0], -p[1]])
                }
            })
            .collect();
        Ok(Self {
            proj,
            pairs: seams.pairs.clone(),
            rest,
            sign,
        })
    }

    pub fn max_pair_distance(&self, x: &[Vec2]) -> f64 {
        self.pairs
            .iter()
            .map(|&(a, b)| ((x[a][0] - x[b][0]).powi(2) + (x[a][1] - x[b][1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    /// Restoring plus seam forces on every point.
    pub fn forces(&self, x: &[Vec2], k_pair: f64) -> Result<Vec<Vec2>> {
        let mut f = vec![[0.0; 2]; x.len()];
        for (t, c) in self.proj.corners.iter().enumerate() {
            let d = [x[c[0]], x[c[1]], x[c[2]]];
            let r = self.rest[t];
            for i in 0..3 {
                let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                let h = altitude(d[i], d[j], d[l]);
                let hn = (h[0] * h[0] + h[1] * h[1]).sqrt();
                if !(hn > 0.0) || !hn.is_finite() {
                    return Err(Error::Numeric(format!(
                        "triangle {t} is degenerate in the current layout"
                    )));
                }
                let target = aligned_rest_corner(r[i], r[j], r[l], d[j], d[l]);
                f[c[i]][0] += (target[0] - d[i][0]) / hn;
                f[c[i]][1] += (target[1] - d[i][1]) / hn;
            }
        }
        for &(a, b) in &self.pairs {
            let dx = x[b][0] - x[a][0];
            let dy = x[b][1] - x[a][1];
            f[a][0] += k_pair * dx;
            f[a][1] += k_pair * dy;
            f[b][0] -= k_pair * dx;
            f[b][1] -= k_pair * dy;
        }
        Ok(f)
    }

    /// Smallest positive time at which some triangle reaches zero area when
    /// every point moves as `x + beta * f`.
    pub fn first_collapse(&self, x: &[Vec2], f: &[Vec2]) -> Option<f64> {
        self.proj
            .corners
            .iter()
            .filter_map(|c| collapse_time(c.map(|i| x[i]), c.map(|i| f[i])))
            .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.min(b))))
    }

    pub fn flips(&self, x: &[Vec2]) -> usize {
        self.proj
            .corners
            .iter()
            .zip(&self.sign)
            .filter(|(c, &s)| signed_area2(x[c[0]], x[c[1]], x[c[2]]) * s <= 0.0)
            .count()
    }
}

/// Smallest positive root of the signed area of a linearly moving triangle.
fn collapse_time(p: [Vec2; 3], v: [Vec2; 3]) -> Option<f64> {
    // A(beta) = cross(e1 + beta w1, e2 + beta w2)
    let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
    let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
    let w1 = [v[1][0] - v[0][0], v[1][1] - v[0][1]];
    let w2 = [v[2][0] - v[0][0], v[2][1] - v[0][1]];
    let cross = |a: [f64; 2], b: [f64; 2]| a[0] * b[1] - a[1] * b[0];
    let qa = cross(w1, w2);
    let qb = cross(e1, w2) + cross(w1, e2);
    let qc = cross(e1, e2);
    smallest_positive_root(qa, qb, qc)
}

/// Smallest strictly positive real root of `a x^2 + b x + c`.
pub fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return None;
    }
    let mut roots = [f64::NAN; 2];
    if a.abs() <= 1e-14 * scale {
        if b != 0.0 {
            roots[0] = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        // Numerically stable pair of roots.
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        if q != 0.0 {
            roots[0] = q / a;
            roots[1] = c / q;
        } else {
            roots[0] = 0.0;
        }
    }
    roots
        .into_iter()
        .filter(|r| r.is_finite() && *r > 0.0)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))))
}

/// Restoring and seam forces for a state.
pub fn restoring_force(
    state: &ZipState,
    mesh: &ClothMesh,
    seams: &SeamPairs,
    k_pair: f64,
) -> Result<Vec<Vec2>> {
    Zipper::new(mesh, seams, &state.coords)?.forces(&state.coords, k_pair)
}

/// Flip-free step: `gamma * min(collapse times, beta_max)`.
pub fn adaptive_step(
    coords: &[Vec2],
    forces: &[Vec2],
    proj: &Projection2D,
    params: &ZipParams,
) -> f64 {
    let first = proj
        .corners
        .iter()
        .filter_map(|c| collapse_time(c.map(|i| coords[i]), c.map(|i| forces[i])))
        .fold(params.beta_max, f64::min);
    params.gamma * first
}

/// Runs the relaxation from `init` until every seam pair is closer than the
/// tolerance, then merges each group of paired points at its centroid.
///
/// Restoring forces are integrated explicitly. The seam springs are
/// integrated implicitly (backward Euler), which keeps stiff springs stable
/// at the step sizes the flip bound allows; the equilibrium gap of a pair is
/// about `|F_b - F_a| / (2 k_pair)`, so closing seams needs a stiff spring.
pub fn zip_projection(
    mesh: &ClothMesh,
    seams: &SeamPairs,
    init: &[Vec2],
    params: &ZipParams,
) -> Result<ZipOutcome> {
    params.validate()?;
    let zipper = Zipper::new(mesh, seams, init)?;
    let init_proj = mesh.geo.with_points(init.to_vec());
    let tol = params.tol_pair.unwrap_or(1e-3 * init_proj.diagonal());
    let components = pair_components(init.len(), &seams.pairs);
    let mut state = ZipState {
        coords: init.to_vec(),
        step: 0,
        max_pair_distance: zipper.max_pair_distance(init),
        flip_count: 0,
    };
    let mut trace = Vec::new();
    while state.max_pair_distance >= tol {
        if state.step >= params.max_iters {
            return Err(Error::Convergence {
                message: format!("zipping did not converge in {} iterations", params.max_iters),
                final_distance: state.max_pair_distance,
            });
        }
        let restoring = zipper.forces(&state.coords, 0.0)?;
        let advance = |beta: f64| -> Vec<Vec2> {
            let mut y: Vec<Vec2> = state
                .coords
                .iter()
                .zip(&restoring)
                .map(|(x, g)| [x[0] + beta * g[0], x[1] + beta * g[1]])
                .collect();
            for comp in &components {
                solve_springs(comp, beta * params.k_pair, &mut y);
            }
            y
        };
        // The flip bound is evaluated on the velocity of the actual update;
        // it shrinks monotonically, so a few refinements settle it.
        let mut beta = params.gamma * params.beta_max;
        for _ in 0..8 {
            let next = advance(beta);
            let v: Vec<Vec2> = next
                .iter()
                .zip(&state.coords)
                .map(|(n, x)| [(n[0] - x[0]) / beta, (n[1] - x[1]) / beta])
                .collect();
            let limit = zipper.first_collapse(&state.coords, &v).unwrap_or(f64::INFINITY);
            let b = params.gamma * limit.min(params.beta_max);
            if b >= beta * (1.0 - 1e-12) {
                break;
            }
            beta = b;
        }
        let mut next;
        // Rounding or the nonlinear spring update can still shrink the
        // margin; halve until no triangle flips.
        loop {
            next = advance(beta);
            if zipper.flips(&next) == 0 {
                break;
            }
            beta *= 0.5;
            if beta < 1e-300 {
                return Err(Error::Numeric("no flip-free step exists".into()));
            }
        }
        state.coords = next;
        state.step += 1;
        state.max_pair_distance = zipper.max_pair_distance(&state.coords);
        state.flip_count = zipper.flips(&state.coords);
        trace.push(ZipTraceRow {
            step: state.step,
            beta,
            max_pair_distance: state.max_pair_distance,
            flip_count: state.flip_count,
        });
    }
    let merged = merge_pairs(&state.coords, &seams.pairs);
    let topo = mesh.geo.with_points(merged);
    Ok(ZipOutcome {
        topo,
        iterations: state.step,
        final_pair_distance: state.max_pair_distance,
        trace,
    })
}

/// Connected components of the pair graph: member points and the edges as
/// local index pairs. Singletons are omitted.
struct Component {
    points: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

fn pair_components(n: usize, pairs: &[(usize, usize)]) -> Vec<Component> {
    let roots = {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(a, b) in pairs {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        (0..n).map(|i| find(&mut parent, i)).collect::<Vec<_>>()
    };
    let mut by_root: std::collections::BTreeMap<usize, Component> = Default::default();
    let mut local = vec![usize::MAX; n];
    for &(a, b) in pairs {
        let comp = by_root.entry(roots[a]).or_insert_with(|| Component {
            points: Vec::new(),
            edges: Vec::new(),
        });
        for p in [a, b] {
            if local[p] == usize::MAX {
                local[p] = comp.points.len();
                comp.points.push(p);
            }
        }
        comp.edges.push((local[a], local[b]));
    }
    by_root.into_values().collect()
}

/// Solves `(I + s L) x = y` on one component, `L` its graph Laplacian.
fn solve_springs(comp: &Component, s: f64, y: &mut [Vec2]) {
    let m = comp.points.len();
    if m == 2 && comp.edges.len() == 1 {
        let (a, b) = (comp.points[0], comp.points[1]);
        for d in 0..2 {
            let mid = 0.5 * (y[a][d] + y[b][d]);
            let half = 0.5 * (y[b][d] - y[a][d]) / (1.0 + 2.0 * s);
            y[a][d] = mid - half;
            y[b][d] = mid + half;
        }
        return;
    }
    let mut a = nalgebra::DMatrix::<f64>::identity(m, m);
    for &(i, j) in &comp.edges {
        a[(i, i)] += s;
        a[(j, j)] += s;
        a[(i, j)] -= s;
        a[(j, i)] -= s;
    }
    let lu = a.lu();
    for d in 0..2 {
        let rhs = nalgebra::DVector::from_iterator(m, comp.points.iter().map(|&p| y[p][d]));
        // I + sL is symmetric positive definite, so the solve cannot fail.
        let x = lu.solve(&rhs).expect("spring system is positive definite");
        for (k, &p) in comp.points.iter().enumerate() {
            y[p][d] = x[k];
        }
    }
}

/// Moves every group of (transitively) paired points to its centroid.
pub fn merge_pairs(coords: &[Vec2], pairs: &[(usize, usize)]) -> Vec<Vec2> {
    let mut parent: Vec<usize> = (0..coords.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut sum = vec![[0.0; 2]; coords.len()];
    let mut count = vec![0usize; coords.len()];
    for i in 0..coords.len() {
        let r = find(&mut parent, i);
        sum[r][0] += coords[i][0];
        sum[r][1] += coords[i][1];
        count[r] += 1;
    }
    (0..coords.len())
        .map(|i| {
            let r = find(&mut parent, i);
            [sum[r][0] / count[r] as f64, sum[r][1] / count[r] as f64]
        })
        .collect()
}

/// Rigid motion of a piece: rotation by `angle` (radians) then translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angle: f64,
    pub translation: Vec2,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        angle: 0.0,
        translation: [0.0, 0.0],
    };

    pub fn apply(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.angle.sin_cos();
        [
            c * p[0] - s * p[1] + self.translation[0],
            s * p[0] + c * p[1] + self.translation[1],
        ]
    }

    /// Least-squares rotation + translation taking `src` onto `dst`.
    pub fn fit(src: &[Vec2], dst: &[Vec2]) -> Self {
        let n = src.len().max(1) as f64;
        let cs = src.iter().fold([0.0; 2], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
        let cd = dst.iter().fold([0.0; 2], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (p, q) in src.iter().zip(dst) {
            let u = [p[0] - cs[0], p[1] - cs[1]];
            let v = [q[0] - cd[0], q[1] - cd[1]];
            sxx += u[0] * v[0] + u[1] * v[1];
            sxy += u[0] * v[1] - u[1] * v[0];
        }
        let angle = if sxx == 0.0 && sxy == 0.0 { 0.0 } else { sxy.atan2(sxx) };
        let (s, c) = angle.sin_cos();
        let rc = [c * cs[0] - s * cs[1], s * cs[0] + c * cs[1]];
        RigidTransform {
            angle,
            translation: [cd[0] - rc[0], cd[1] - rc[1]],
        }
    }
}

/// Applies one rigid transform per geo piece.
pub fn place_pieces(mesh: &ClothMesh, transforms: &[RigidTransform]) -> Result<Vec<Vec2>> {
    let n_pieces = mesh.geo.n_pieces();
    if transforms.len() != n_pieces {
        return Err(Error::Validation(format!(
            "{} piece transforms for {n_pieces} pieces",
            transforms.len()
        )));
    }
    let piece = point_pieces(&mesh.geo);
    Ok(mesh
        .geo
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| match piece[i] {
            Some(k) => transforms[k].apply(*p),
            None => *p,
        })
        .collect())
}

fn point_pieces(proj: &Projection2D) -> Vec<Option<usize>> {
    let mut piece = vec![None; proj.points.len()];
    for (t, c) in proj.corners.iter().enumerate() {
        for &i in c {
            piece[i] = Some(proj.piece_id[t]);
        }
    }
    piece
}

/// Heuristic initial layout: pieces are placed greedily (most seam pairs
/// first), each by the least-squares rigid fit of its paired points onto the
/// partners already placed.
pub fn rigid_init(mesh: &ClothMesh, seams: &SeamPairs) -> Result<Vec<RigidTransform>> {
    mesh.check_seams(seams)?;
    let n = mesh.geo.n_pieces();
    let piece = point_pieces(&mesh.geo);
    let mut counts = vec![0usize; n];
    for &(a, b) in &seams.pairs {
        if let (Some(pa), Some(pb)) = (piece[a], piece[b]) {
            if pa != pb {
                counts[pa] += 1;
                counts[pb] += 1;
            }
        }
    }
    let mut transforms = vec![None; n];
    let first = (0..n).max_by_key(|&k| (counts[k], usize::MAX - k)).unwrap_or(0);
    if n > 0 {
        transforms[first] = Some(RigidTransform::IDENTITY);
    }
    for _ in 1..n {
        // Unplaced piece with the most pairs into placed pieces.
        let mut best: Option<(usize, Vec<Vec2>, Vec<Vec2>)> = None;
        for k in (0..n).filter(|&k| transforms[k].is_none()) {
            let mut src = Vec::new();
            let mut dst = Vec::new();
            for &(a, b) in &seams.pairs {
                for (p, q) in [(a, b), (b, a)] {
                    if piece[p] == Some(k) {
                        if let Some(tq) = piece[q].and_then(|pq| transforms[pq]) {
                            src.push(mesh.geo.points[p]);
                            dst.push(tq.apply(mesh.geo.points[q]));
                        }
                    }
                }
            }
            if best.as_ref().is_none_or(|b| src.len() > b.1.len()) {
                best = Some((k, src, dst));
            }
        }
        let (k, src, dst) = best.expect("an unplaced piece exists");
        transforms[k] = Some(if src.is_empty() {
            RigidTransform::IDENTITY
        } else {
            RigidTransform::fit(&src, &dst)
        });
    }
    Ok(transforms.into_iter().map(|t| t.unwrap_or(RigidTransform::IDENTITY)).collect())
}
