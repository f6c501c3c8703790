//! Desk-scale scene assets: a low-poly mannequin wearing a cylinder shirt,
//! procedural backgrounds and the per-image augmentation sampler.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::{cylinder, Garment};
use crate::mesh::{ClothMesh, GridIndex, Vec3};
use crate::render::{
    rasterize, shade, Body, Camera, CameraRig, Image, LightRanges, LightSpec, SceneGeometry, Shaded,
    TexFrame, TextureSource, GARMENT_BASE,
};
use crate::texture::Rgb;
use crate::warp::{random_topo_warp, shear_warp, tps3d_perturb, Preset, TopoLookup, TpsMap2D, WarpIntensity, GRID_3D};

const SKIN: Rgb = [0.80, 0.62, 0.50];
const HAIR: Rgb = [0.22, 0.14, 0.09];
const PANTS: Rgb = [0.16, 0.19, 0.32];
const SHOES: Rgb = [0.10, 0.09, 0.08];

/// Tunic bottom height and size: the textured garment covers the torso and
/// most of the legs.
const SHIRT_Y: f64 = 0.38;
const SHIRT_RADIUS: f64 = 0.2;
const SHIRT_HEIGHT: f64 = 1.04;

/// A standing figure: untextured body parts plus the textured shirt.
#[derive(Debug, Clone)]
pub struct Mannequin {
    pub body: Body,
    pub shirt: Garment,
}

#[derive(Default)]
struct BodyBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    albedo: Vec<Rgb>,
}

impl BodyBuilder {
    fn tri(&mut self, t: [usize; 3], c: Rgb) {
        self.triangles.push(t);
        self.albedo.push(c);
    }

    /// Vertical capped cylinder with its bottom center at `base`.
    fn cylinder(&mut self, base: Vec3, radius: f64, height: f64, n: usize, color: Rgb) {
        let start = self.vertices.len();
        for j in 0..2 {
            for k in 0..n {
                let a = 2.0 * PI * k as f64 / n as f64;
                self.vertices.push([
                    base[0] + radius * a.sin(),
                    base[1] + j as f64 * height,
                    base[2] + radius * a.cos(),
                ]);
            }
        }
        let bottom = self.vertices.len();
        self.vertices.push(base);
        self.vertices.push([base[0], base[1] + height, base[2]]);
        for k in 0..n {
            let k1 = (k + 1) % n;
            let (a, b, c, d) = (start + k, start + k1, start + n + k1, start + n + k);
            self.tri([a, b, c], color);
            self.tri([a, c, d], color);
            self.tri([bottom, b, a], color);
            self.tri([bottom + 1, d, c], color);
        }
    }

    /// UV sphere; `color(latitude)` with latitude in [-pi/2, pi/2] and the
    /// azimuth's z component (front = +1).
    fn sphere(&mut self, center: Vec3, radius: f64, n_lat: usize, n_lon: usize, color: impl Fn(f64, f64) -> Rgb) {
        let start = self.vertices.len();
        for i in 0..=n_lat {
            let lat = -PI / 2.0 + PI * i as f64 / n_lat as f64;
            for k in 0..n_lon {
                let a = 2.0 * PI * k as f64 / n_lon as f64;
                self.vertices.push([
                    center[0] + radius * lat.cos() * a.sin(),
                    center[1] + radius * lat.sin(),
                    center[2] + radius * lat.cos() * a.cos(),
                ]);
            }
        }
        for i in 0..n_lat {
            let lat = -PI / 2.0 + PI * (i as f64 + 0.5) / n_lat as f64;
            for k in 0..n_lon {
                let k1 = (k + 1) % n_lon;
                let az = 2.0 * PI * (k as f64 + 0.5) / n_lon as f64;
                let c = color(lat, az.cos());
                let v = |ii: usize, kk: usize| start + ii * n_lon + kk;
                // Pole rows collapse to zero-area triangles; skip them.
                if i > 0 {
                    self.tri([v(i, k), v(i, k1), v(i + 1, k1)], c);
                }
                if i + 1 < n_lat {
                    self.tri([v(i, k), v(i + 1, k1), v(i + 1, k)], c);
                }
            }
        }
    }
}

/// The mannequin fixture (about 1.75 m tall, facing +z).
pub fn mannequin() -> Result<Mannequin> {
    let mut b = BodyBuilder::default();
    for x in [-0.1, 0.1] {
        b.cylinder([x, 0.0, 0.02], 0.06, 0.07, 8, SHOES);
        b.cylinder([x, 0.07, 0.0], 0.075, 0.5, 10, PANTS);
        b.cylinder([x * 2.55, 0.84, 0.0], 0.045, 0.56, 8, SKIN);
    }
    b.cylinder([0.0, SHIRT_Y + SHIRT_HEIGHT - 0.02, 0.0], 0.055, 0.1, 8, SKIN);
    b.sphere([0.0, 1.62, 0.0], 0.115, 8, 12, |lat, front| {
        if lat > 0.35 || (front < -0.2 && lat > -0.5) {
            HAIR
        } else {
            SKIN
        }
    });
    let mut shirt = cylinder(16, 10, SHIRT_RADIUS, SHIRT_HEIGHT)?;
    let moved: Vec<Vec3> = shirt
        .mesh
        .vertices
        .iter()
        .map(|v| [v[0], v[1] + SHIRT_Y, v[2]])
        .collect();
    shirt.mesh = shirt.mesh.with_vertices(moved);
    Ok(Mannequin {
        body: Body {
            vertices: b.vertices,
            triangles: b.triangles,
            albedo: b.albedo,
        },
        shirt,
    })
}

/// Procedural outdoor-ish background: sky/ground gradient, trunks, bushes,
/// blocks and low-frequency noise.
pub fn background<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> Image {
    let (w, h) = (width as f64, height as f64);
    let jitter = |rng: &mut R, c: Rgb, s: f64| -> Rgb {
        c.map(|v| (v + rng.random_range(-s..=s)).clamp(0.0, 1.0))
    };
    let sky = jitter(rng, [0.62, 0.74, 0.86], 0.12);
    let ground = jitter(rng, [0.42, 0.40, 0.30], 0.12);
    let horizon = rng.random_range(0.35..0.7) * h;
    let mut px = vec![[0.0; 3]; width * height];
    for y in 0..height {
        for x in 0..width {
            let t = ((y as f64 - horizon) / (0.08 * h)).tanh() * 0.5 + 0.5;
            px[y * width + x] = [0, 1, 2].map(|c| sky[c] * (1.0 - t) + ground[c] * t);
        }
    }
    let n_shapes = rng.random_range(4..10);
    for _ in 0..n_shapes {
        match rng.random_range(0..4) {
            0 => {
                // Tree trunk with a crown.
                let cx = rng.random_range(0.0..w);
                let tw = rng.random_range(3.0..10.0);
                let top = rng.random_range(0.0..horizon.max(1.0));
                let trunk = jitter(rng, [0.35, 0.25, 0.16], 0.08);
                fill_rect(&mut px, width, height, cx - tw / 2.0, top, cx + tw / 2.0, h, trunk);
                let crown = jitter(rng, [0.22, 0.40, 0.18], 0.1);
                let r = rng.random_range(10.0..24.0);
                fill_ellipse(&mut px, width, height, cx, top, r, r * 0.8, crown);
            }
            1 => {
                let c = jitter(rng, [0.28, 0.45, 0.22], 0.12);
                let cx = rng.random_range(0.0..w);
                let cy = rng.random_range(horizon..h.max(horizon + 1.0));
                let rx = rng.random_range(8.0..30.0);
                fill_ellipse(&mut px, width, height, cx, cy, rx, rx * rng.random_range(0.4..0.8), c);
            }
            2 => {
                let g = rng.random_range(0.35..0.8);
                let c = jitter(rng, [g, g * 0.97, g * 0.92], 0.06);
                let x0 = rng.random_range(-10.0..w);
                let bw = rng.random_range(15.0..50.0);
                let top = rng.random_range(0.1 * h..horizon + 0.1 * h);
                fill_rect(&mut px, width, height, x0, top, x0 + bw, horizon + 0.15 * h, c);
            }
            _ => {
                // Path or road band.
                let c = jitter(rng, [0.55, 0.52, 0.48], 0.1);
                let y0 = rng.random_range(horizon..h);
                let bh = rng.random_range(4.0..20.0);
                fill_rect(&mut px, width, height, 0.0, y0, w, y0 + bh, c);
            }
        }
    }
    // Low-frequency value noise on an 8x8 lattice.
    let g = 8;
    let lattice: Vec<f64> = (0..(g + 1) * (g + 1)).map(|_| rng.random_range(-0.06..0.06)).collect();
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / w * g as f64;
            let fy = y as f64 / h * g as f64;
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (ax, ay) = (fx - ix as f64, fy - iy as f64);
            let at = |i: usize, j: usize| lattice[j.min(g) * (g + 1) + i.min(g)];
            let n = at(ix, iy) * (1.0 - ax) * (1.0 - ay)
                + at(ix + 1, iy) * ax * (1.0 - ay)
                + at(ix, iy + 1) * (1.0 - ax) * ay
                + at(ix + 1, iy + 1) * ax * ay;
            let p = &mut px[y * width + x];
            for c in p.iter_mut() {
                *c = (*c + n + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
            }
        }
    }
    Image {
        width,
        height,
        pixels: px,
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_rect(px: &mut [Rgb], w: usize, h: usize, x0: f64, y0: f64, x1: f64, y1: f64, c: Rgb) {
    for y in 0..h {
        let fy = y as f64 + 0.5;
        if fy < y0 || fy >= y1 {
            continue;
        }
        for x in 0..w {
            let fx = x as f64 + 0.5;
            if fx >= x0 && fx < x1 {
                px[y * w + x] = c;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_ellipse(px: &mut [Rgb], w: usize, h: usize, cx: f64, cy: f64, rx: f64, ry: f64, c: Rgb) {
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                px[y * w + x] = c;
            }
        }
    }
}

/// `n` backgrounds from a seed; training and held-out sets use different
/// seeds.
pub fn background_set(seed: u64, n: usize, width: usize, height: usize) -> Vec<Image> {
    use rand::SeedableRng;
    (0..n)
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            background(&mut rng, width, height)
        })
        .collect()
}

/// Which mesh augmentations the attack samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugStrategy {
    NoAug,
    AugTps,
    AugTopo,
    AugTpsTopo,
}

impl AugStrategy {
    pub const ALL: [AugStrategy; 4] = [
        AugStrategy::NoAug,
        AugStrategy::AugTps,
        AugStrategy::AugTopo,
        AugStrategy::AugTpsTopo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugStrategy::NoAug => "NoAug",
            AugStrategy::AugTps => "AugTPS",
            AugStrategy::AugTopo => "AugTopo",
            AugStrategy::AugTpsTopo => "AugTPS+AugTopo",
        }
    }

    pub fn tps(self) -> bool {
        matches!(self, AugStrategy::AugTps | AugStrategy::AugTpsTopo)
    }

    pub fn topo(self) -> bool {
        matches!(self, AugStrategy::AugTopo | AugStrategy::AugTpsTopo)
    }
}

/// Everything needed to render the mannequin from any angle.
#[derive(Debug, Clone)]
pub struct SceneAssets {
    pub mannequin: Mannequin,
    pub lookup: TopoLookup,
    pub rig: CameraRig,
    pub tex_size: (usize, usize),
    pub lights: LightRanges,
}

impl SceneAssets {
    pub fn new(mannequin: Mannequin, rig: CameraRig, tex_size: (usize, usize)) -> Result<Self> {
        let lookup = TopoLookup::new(&mannequin.shirt.mesh)?;
        Ok(Self {
            mannequin,
            lookup,
            rig,
            tex_size,
            lights: LightRanges::default(),
        })
    }

    pub fn desk_scale() -> Result<Self> {
        Self::new(mannequin()?, CameraRig::default(), (64, 64))
    }

    pub fn frame(&self) -> TexFrame {
        TexFrame::new(&self.mannequin.shirt.mesh, self.tex_size.0, self.tex_size.1)
    }

    /// Renders one view with an explicit (possibly perturbed) shirt mesh and
    /// optional TopoProj warp.
    pub fn render(
        &self,
        angle_deg: f64,
        light: &LightSpec,
        shirt: &ClothMesh,
        warp: Option<&TpsMap2D>,
    ) -> Result<Shaded> {
        let camera = self.rig.camera(angle_deg);
        let scene = SceneGeometry::new(shirt, Some(&self.mannequin.body));
        let frag = rasterize(&scene.tris, &camera)?;
        let source = TextureSource {
            garment: shirt,
            frame: self.frame(),
            warp: warp.map(|t| (&self.lookup, t)),
            base_color: GARMENT_BASE,
        };
        shade(&frag, &scene, &camera, light, &source)
    }

    /// Renders a view with a random light and the strategy's mesh
    /// augmentations at `intensity`.
    pub fn render_augmented<R: Rng + ?Sized>(
        &self,
        angle_deg: f64,
        strategy: AugStrategy,
        intensity: &WarpIntensity,
        rng: &mut R,
    ) -> Result<Shaded> {
        let light = LightSpec::sample(rng, &self.lights, self.rig.center);
        let base = &self.mannequin.shirt.mesh;
        let perturbed = if strategy.tps() && intensity.eps_tps > 0.0 {
            Some(tps3d_perturb(base, GRID_3D, intensity, rng)?.0)
        } else {
            None
        };
        let shirt = perturbed.as_ref().unwrap_or(base);
        let warp = if strategy.topo() && (intensity.eps_r > 0.0 || intensity.eps_t > 0.0) {
            let topo = base.topo.as_ref().expect("mannequin shirt has a topo projection");
            Some(random_topo_warp(topo, intensity, rng)?)
        } else {
            None
        };
        self.render(angle_deg, &light, shirt, warp.as_ref())
    }

    /// Evaluation render: both deformations at the preset's intensity.
    pub fn render_eval<R: Rng + ?Sized>(&self, angle_deg: f64, preset: Preset, rng: &mut R) -> Result<Shaded> {
        self.render_augmented(angle_deg, AugStrategy::AugTpsTopo, &preset.intensity(), rng)
    }
}

/// How a garment pixel finds its texture sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpMode {
    /// Straight GeoProj lookup.
    Plain,
    /// The shear applied directly to GeoProj coordinates.
    Naive,
    /// The shear applied on the TopoProj through the five-step lookup.
    Topo,
}

/// Pixel counts of a seam-leak render.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LeakCounts {
    pub garment_pixels: usize,
    /// Samples that land outside every garment piece (background texels).
    pub leaked: usize,
    /// Warped points that leave the TopoProj and fall back to the base color.
    pub misses: usize,
}

impl LeakCounts {
    pub fn leak_fraction(&self) -> f64 {
        if self.garment_pixels == 0 {
            0.0
        } else {
            self.leaked as f64 / self.garment_pixels as f64
        }
    }
}

/// Per-pixel texture samples of a garment render under one warp mode.
#[derive(Debug, Clone)]
pub struct WarpedSamples {
    pub width: usize,
    pub height: usize,
    /// `None` off the garment.
    pub pixels: Vec<Option<Sample>>,
}

/// Where a garment pixel reads the texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sample {
    /// GeoProj point inside piece `piece`.
    Piece { point: [f64; 2], piece: usize },
    /// GeoProj point outside every piece.
    Background { point: [f64; 2] },
    /// TopoProj warp miss.
    Miss,
}

/// Renders the garment alone and resolves every garment pixel's texture
/// sample. `shear` is the strain `s` of `y' = y + s (x - cx)`, applied over
/// the bounds of the projection the mode warps.
pub fn warped_samples(garment: &ClothMesh, camera: &Camera, mode: WarpMode, shear: f64) -> Result<WarpedSamples> {
    let scene = SceneGeometry::new(garment, None);
    let frag = rasterize(&scene.tris, camera)?;
    let geo_index = GridIndex::build(&garment.geo);
    let (glo, ghi) = garment.geo.bounds();
    let naive = shear_warp(glo, ghi, shear)?;
    let topo_warp = match mode {
        WarpMode::Topo => {
            let topo = garment
                .topo
                .as_ref()
                .ok_or_else(|| Error::Validation("garment has no topo projection".into()))?;
            let (tlo, thi) = topo.bounds();
            Some((TopoLookup::new(garment)?, shear_warp(tlo, thi, shear)?))
        }
        _ => None,
    };
    let classify = |p: [f64; 2]| match geo_index.locate(&garment.geo, p) {
        Some((t, _)) => Sample::Piece {
            point: p,
            piece: garment.geo.piece_id[t],
        },
        None => Sample::Background { point: p },
    };
    let mut pixels = vec![None; frag.width * frag.height];
    for (i, slot) in pixels.iter_mut().enumerate() {
        let Some(t) = frag.tri[i] else { continue };
        let (t, b) = (t as usize, frag.bary[i]);
        let geo_point = b.interpolate2(garment.geo.triangle(t));
        *slot = Some(match (&topo_warp, mode) {
            (Some((lookup, tps)), _) => match lookup.warp_lookup(garment, t, b, tps)? {
                Some(hit) => classify(hit.point),
                None => Sample::Miss,
            },
            (None, WarpMode::Naive) => classify(naive.eval(geo_point)),
            _ => classify(geo_point),
        });
    }
    Ok(WarpedSamples {
        width: frag.width,
        height: frag.height,
        pixels,
    })
}

impl WarpedSamples {
    pub fn counts(&self) -> LeakCounts {
        let mut c = LeakCounts::default();
        for s in self.pixels.iter().flatten() {
            c.garment_pixels += 1;
            match s {
                Sample::Background { .. } => c.leaked += 1,
                Sample::Miss => c.misses += 1,
                Sample::Piece { .. } => {}
            }
        }
        c
    }

    /// Checkerboard visualization: each piece gets its own color pair,
    /// background texels are magenta, misses gray, empty pixels white.
    pub fn checker_image(&self, cell: f64) -> Image {
        const PIECE_COLORS: [[Rgb; 2]; 3] = [
            [[0.1, 0.1, 0.1], [0.95, 0.95, 0.95]],
            [[0.9, 0.45, 0.1], [0.98, 0.85, 0.6]],
            [[0.1, 0.4, 0.8], [0.6, 0.8, 0.98]],
        ];
        let pixels = self
            .pixels
            .iter()
            .map(|s| match s {
                None => [1.0; 3],
                Some(Sample::Miss) => GARMENT_BASE,
                Some(Sample::Background { .. }) => [1.0, 0.0, 1.0],
                Some(Sample::Piece { point, piece }) => {
                    let parity = ((point[0] / cell).floor() + (point[1] / cell).floor()) as i64;
                    PIECE_COLORS[piece % PIECE_COLORS.len()][parity.rem_euclid(2) as usize]
                }
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

/// Front camera framing a garment's 3D bounds.
pub fn framing_camera(garment: &ClothMesh, size: usize, angle_deg: f64) -> Camera {
    let (lo, hi) = garment.bounds3();
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2]);
    let rig = CameraRig {
        center,
        distance: 2.5 * extent,
        height: center[1],
        fov_y_deg: 30.0,
        width: size,
        image_height: size,
    };
    rig.camera(angle_deg)
}
