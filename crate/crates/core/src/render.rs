//! Software rasterizer, texture shading with recorded taps, compositing onto
//! backgrounds and image-space augmentation.
//!
//! Once geometry, camera, lights and warp are fixed every output pixel is an
//! affine function of the texture, so shading records per-pixel texel taps
//! and gradients flow back through them exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{
    add3, cross3, dot3, normalize3, scale3, sub3, BaryCoord, ClothMesh, Vec2, Vec3,
};
use crate::texture::{Rgb, TextureMap};
use crate::warp::{TopoLookup, TpsMap2D};

/// Pinhole camera. Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`,
/// `y` pointing down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

/// Closest depth accepted in front of the camera.
pub const NEAR: f64 = 1e-3;

/// Camera frame derived from a [`Camera`].
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.position == self.look_at {
            return Err(Error::InvalidInput("camera position equals look-at".into()));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::Domain(format!("fov {} outside (0, 180)", self.fov_y_deg)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("image size must be positive".into()));
        }
        let f = normalize3(sub3(self.look_at, self.position));
        if crate::mesh::norm3(cross3(f, self.up)) < 1e-12 {
            return Err(Error::InvalidInput("camera up is parallel to the view direction".into()));
        }
        Ok(())
    }

    pub fn view(&self) -> View {
        let forward = normalize3(sub3(self.look_at, self.position));
        let right = normalize3(cross3(forward, self.up));
        let up = cross3(right, forward);
        View {
            origin: self.position,
            right,
            up,
            forward,
            focal: 0.5 * self.height as f64 / (0.5 * self.fov_y_deg.to_radians()).tan(),
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
        }
    }
}

impl View {
    /// Camera-space coordinates `(x, y, depth)`.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub3(p, self.origin);
        [dot3(d, self.right), dot3(d, self.up), dot3(d, self.forward)]
    }

    /// Screen position of a camera-space point.
    pub fn project(&self, c: Vec3) -> Vec2 {
        [
            self.cx + self.focal * c[0] / c[2],
            self.cy - self.focal * c[1] / c[2],
        ]
    }

    /// Ray direction through a screen position, scaled so its forward
    /// component is 1 (ray parameter equals depth).
    pub fn ray(&self, sx: f64, sy: f64) -> Vec3 {
        let x = (sx - self.cx) / self.focal;
        let y = (self.cy - sy) / self.focal;
        add3(self.forward, add3(scale3(self.right, x), scale3(self.up, y)))
    }
}

/// Per-pixel visibility: closest triangle, perspective-correct barycentric
/// coordinate and depth.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    pub tri: Vec<Option<u32>>,
    pub bary: Vec<BaryCoord>,
    pub depth: Vec<f64>,
}

impl FragmentBuffer {
    pub fn covered(&self) -> usize {
        self.tri.iter().filter(|t| t.is_some()).count()
    }
}

/// Z-buffered rasterization of triangles given in world space. Triangles with
/// a vertex behind the near plane are skipped. Equal depths keep the lower id.
pub fn rasterize(tris: &[[Vec3; 3]], camera: &Camera) -> Result<FragmentBuffer> {
    camera.validate()?;
    let view = camera.view();
    let (w, h) = (camera.width, camera.height);
    let mut fb = FragmentBuffer {
        width: w,
        height: h,
        tri: vec![None; w * h],
        bary: vec![BaryCoord([0.0; 3]); w * h],
        depth: vec![f64::INFINITY; w * h],
    };
    for (t, tri) in tris.iter().enumerate() {
        let c = tri.map(|p| view.to_camera(p));
        if c.iter().any(|v| !(v[2] > NEAR)) {
            continue;
        }
        let s = c.map(|v| view.project(v));
        let area = edge(s[0], s[1], s[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let xmin = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let xmax = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let ymax = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (xmin - 0.5).ceil().max(0.0) as usize;
        let y0 = (ymin - 0.5).ceil().max(0.0) as usize;
        let x1 = ((xmax - 0.5).floor()).min(w as f64 - 1.0);
        let y1 = ((ymax - 0.5).floor()).min(h as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        let inv_z = c.map(|v| 1.0 / v[2]);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let l = [
                    edge(s[1], s[2], p) / area,
                    edge(s[2], s[0], p) / area,
                    edge(s[0], s[1], p) / area,
                ];
                if l.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let q = [l[0] * inv_z[0], l[1] * inv_z[1], l[2] * inv_z[2]];
                let sum = q[0] + q[1] + q[2];
                let depth = 1.0 / sum;
                let i = py * w + px;
                if depth < fb.depth[i] {
                    fb.depth[i] = depth;
                    fb.tri[i] = Some(t as u32);
                    fb.bary[i] = BaryCoord([q[0] / sum, q[1] / sum, q[2] / sum]);
                }
            }
        }
    }
    Ok(fb)
}

fn edge(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Kind of light source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightKind {
    Ambient,
    Directional,
    Point,
}

/// A white-or-colored light. Directional and point lights add a constant
/// ambient fill so unlit sides are not black.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub kind: LightKind,
    pub color: Rgb,
    /// Travel direction of a directional light.
    pub direction: Vec3,
    /// Position of a point light.
    pub position: Vec3,
    pub intensity: f64,
    /// Ambient term added by directional and point lights.
    pub fill: f64,
}

/// Light sampling ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightRanges {
    pub ambient: [f64; 2],
    pub directed: [f64; 2],
    pub fill: f64,
}

impl Default for LightRanges {
    fn default() -> Self {
        Self {
            ambient: [0.6, 1.2],
            directed: [0.0, 0.8],
            fill: 0.5,
        }
    }
}

impl LightSpec {
    pub fn ambient(intensity: f64) -> Self {
        Self {
            kind: LightKind::Ambient,
            color: [1.0; 3],
            direction: [0.0, 0.0, -1.0],
            position: [0.0; 3],
            intensity,
            fill: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intensity >= 0.0 && self.fill >= 0.0) {
            return Err(Error::Domain("light intensity must be >= 0".into()));
        }
        Ok(())
    }

    /// Kind uniform over the three; intensity uniform in the kind's range.
    /// Directional lights come from the camera's hemisphere around `center`;
    /// point lights sit at 1.5-3 units from it.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, ranges: &LightRanges, center: Vec3) -> Self {
        let kind = match rng.random_range(0..3) {
            0 => LightKind::Ambient,
            1 => LightKind::Directional,
            _ => LightKind::Point,
        };
        let (lo, hi) = match kind {
            LightKind::Ambient => (ranges.ambient[0], ranges.ambient[1]),
            _ => (ranges.directed[0], ranges.directed[1]),
        };
        let intensity = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let az = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let el = rng.random_range(-0.3..1.2f64);
        let dir_to_light = [az.sin() * el.cos(), el.sin(), az.cos() * el.cos()];
        let dist = rng.random_range(1.5..3.0);
        Self {
            kind,
            color: [1.0; 3],
            direction: scale3(dir_to_light, -1.0),
            position: add3(center, scale3(dir_to_light, dist)),
            intensity,
            fill: if kind == LightKind::Ambient { 0.0 } else { ranges.fill },
        }
    }

    /// Shading factor per channel at surface point `p` with unit normal `n`.
    pub fn factor(&self, p: Vec3, n: Vec3) -> Rgb {
        let lambert = match self.kind {
            LightKind::Ambient => return self.color.map(|c| c * self.intensity),
            LightKind::Directional => dot3(n, scale3(normalize3(self.direction), -1.0)),
            LightKind::Point => dot3(n, normalize3(sub3(self.position, p))),
        };
        let k = self.fill + self.intensity * lambert.max(0.0);
        self.color.map(|c| c * k)
    }
}

/// What a scene triangle is made of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Garment triangle id: reads the texture.
    Garment(usize),
    /// Body (or any non-textured) triangle with a fixed albedo.
    Body(Rgb),
}

/// Triangles ready to rasterize plus what each one is.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub tris: Vec<[Vec3; 3]>,
    pub surface: Vec<Surface>,
}

impl SceneGeometry {
    /// Garment triangles first (same ids as the mesh), then body triangles.
    pub fn new(garment: &ClothMesh, body: Option<&Body>) -> Self {
        let mut tris: Vec<[Vec3; 3]> = (0..garment.n_triangles()).map(|t| garment.triangle3(t)).collect();
        let mut surface: Vec<Surface> = (0..tris.len()).map(Surface::Garment).collect();
        if let Some(b) = body {
            for (k, t) in b.triangles.iter().enumerate() {
                tris.push([b.vertices[t[0]], b.vertices[t[1]], b.vertices[t[2]]]);
                surface.push(Surface::Body(b.albedo[k]));
            }
        }
        Self { tris, surface }
    }
}

/// Untextured body mesh with one albedo per triangle.
#[derive(Debug, Clone)]
pub struct Body {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub albedo: Vec<Rgb>,
}

/// Maps GeoProj coordinates to continuous texel coordinates: the layout
/// bounds fill the texture, layout `y` up is texture row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexFrame {
    pub lo: Vec2,
    pub hi: Vec2,
    pub width: usize,
    pub height: usize,
}

impl TexFrame {
    pub fn new(garment: &ClothMesh, width: usize, height: usize) -> Self {
        let (lo, hi) = garment.geo.bounds();
        Self {
            lo,
            hi,
            width,
            height,
        }
    }

    /// Texel-center coordinates: `(0, 0)` is the center of the top-left texel.
    pub fn texel(&self, p: Vec2) -> Vec2 {
        let sx = (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]);
        let sy = (self.hi[1] - p[1]) / (self.hi[1] - self.lo[1]);
        [sx * self.width as f64 - 0.5, sy * self.height as f64 - 0.5]
    }

    /// Inverse of [`TexFrame::texel`].
    pub fn layout_point(&self, t: Vec2) -> Vec2 {
        let sx = (t[0] + 0.5) / self.width as f64;
        let sy = (t[1] + 0.5) / self.height as f64;
        [
            self.lo[0] + sx * (self.hi[0] - self.lo[0]),
            self.hi[1] - sy * (self.hi[1] - self.lo[1]),
        ]
    }

    /// Bilinear taps with clamp-to-edge addressing.
    pub fn bilinear(&self, p: Vec2) -> ([u32; 4], [f64; 4]) {
        let t = self.texel(p);
        let (w, h) = (self.width as i64, self.height as i64);
        let fx = t[0].floor();
        let fy = t[1].floor();
        let ax = t[0] - fx;
        let ay = t[1] - fy;
        let cl = |v: i64, n: i64| v.clamp(0, n - 1);
        let (x0, y0) = (fx as i64, fy as i64);
        let xs = [cl(x0, w), cl(x0 + 1, w)];
        let ys = [cl(y0, h), cl(y0 + 1, h)];
        let idx = [
            (ys[0] * w + xs[0]) as u32,
            (ys[0] * w + xs[1]) as u32,
            (ys[1] * w + xs[0]) as u32,
            (ys[1] * w + xs[1]) as u32,
        ];
        let wts = [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay];
        (idx, wts)
    }
}

/// Texture taps of one garment pixel: `rgb = shade * sum_k w_k T[idx_k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelTaps {
    pub pixel: u32,
    pub idx: [u32; 4],
    pub w: [f64; 4],
    pub shade: Rgb,
}

/// Shading result split into a texture-independent base image and the
/// texture taps of garment pixels.
#[derive(Debug, Clone)]
pub struct Shaded {
    pub width: usize,
    pub height: usize,
    /// Color of pixels that do not read the texture (body, warp misses).
    pub base: Vec<Rgb>,
    pub alpha: Vec<f64>,
    pub taps: Vec<PixelTaps>,
    /// Surface class per pixel: 0 empty, 1 textured garment, 2 garment warp
    /// miss, 3 body.
    pub class: Vec<u8>,
    /// GeoProj point sampled by each textured pixel.
    pub samples: Vec<Vec2>,
}

/// Texture source for shading.
pub struct TextureSource<'a> {
    pub garment: &'a ClothMesh,
    pub frame: TexFrame,
    /// Optional TopoProj warp; `None` maps directly through the GeoProj.
    pub warp: Option<(&'a TopoLookup, &'a TpsMap2D)>,
    /// Garment color used where a warp leaves the TopoProj.
    pub base_color: Rgb,
}

/// Default garment color for warp misses.
pub const GARMENT_BASE: Rgb = [0.45, 0.45, 0.45];

/// Resolves every covered pixel: garment pixels get texel taps through the
/// (optionally warped) GeoProj lookup, body pixels a constant color. Normals
/// face the camera; shading is flat per triangle.
pub fn shade(
    frag: &FragmentBuffer,
    scene: &SceneGeometry,
    camera: &Camera,
    light: &LightSpec,
    source: &TextureSource<'_>,
) -> Result<Shaded> {
    light.validate()?;
    let n = frag.width * frag.height;
    let mut out = Shaded {
        width: frag.width,
        height: frag.height,
        base: vec![[0.0; 3]; n],
        alpha: vec![0.0; n],
        taps: Vec::new(),
        class: vec![0; n],
        samples: Vec::new(),
    };
    let normals: Vec<Vec3> = scene
        .tris
        .iter()
        .map(|t| {
            let nrm = normalize3(cross3(sub3(t[1], t[0]), sub3(t[2], t[0])));
            let centroid = scale3(add3(add3(t[0], t[1]), t[2]), 1.0 / 3.0);
            if dot3(nrm, sub3(camera.position, centroid)) < 0.0 {
                scale3(nrm, -1.0)
            } else {
                nrm
            }
        })
        .collect();
    for i in 0..n {
        let Some(t) = frag.tri[i] else { continue };
        let t = t as usize;
        let b = frag.bary[i];
        let p = b.interpolate3(scene.tris[t]);
        let k = light.factor(p, normals[t]);
        out.alpha[i] = 1.0;
        match scene.surface[t] {
            Surface::Body(albedo) => {
                out.class[i] = 3;
                out.base[i] = [0, 1, 2].map(|c| albedo[c] * k[c]);
            }
            Surface::Garment(g) => {
                let sample = match source.warp {
                    None => Some(b.interpolate2(source.garment.geo.triangle(g))),
                    Some((lookup, tps)) => lookup
                        .warp_lookup(source.garment, g, b, tps)?
                        .map(|h| h.point),
                };
                match sample {
                    Some(s) => {
                        let (idx, w) = source.frame.bilinear(s);
                        out.class[i] = 1;
                        out.taps.push(PixelTaps {
                            pixel: i as u32,
                            idx,
                            w,
                            shade: k,
                        });
                        out.samples.push(s);
                    }
                    None => {
                        out.class[i] = 2;
                        out.base[i] = [0, 1, 2].map(|c| source.base_color[c] * k[c]);
                    }
                }
            }
        }
    }
    Ok(out)
}

impl Shaded {
    /// Foreground colors for a texture (texels in row-major order).
    pub fn apply(&self, texels: &[Rgb]) -> Vec<Rgb> {
        let mut rgb = self.base.clone();
        for t in &self.taps {
            let mut c = [0.0; 3];
            for k in 0..4 {
                let texel = texels[t.idx[k] as usize];
                for ch in 0..3 {
                    c[ch] += t.w[k] * texel[ch];
                }
            }
            rgb[t.pixel as usize] = [0, 1, 2].map(|ch| t.shade[ch] * c[ch]);
        }
        rgb
    }

    /// Accumulates `d loss / d texels` from `d loss / d rgb`.
    pub fn backward(&self, d_rgb: &[Rgb], d_texels: &mut [Rgb]) {
        for t in &self.taps {
            let d = d_rgb[t.pixel as usize];
            for k in 0..4 {
                let slot = &mut d_texels[t.idx[k] as usize];
                for ch in 0..3 {
                    slot[ch] += t.w[k] * t.shade[ch] * d[ch];
                }
            }
        }
    }
}

/// RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn filled(width: usize, height: usize, c: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![c; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn from_texture(t: &TextureMap) -> Self {
        Self {
            width: t.width,
            height: t.height,
            pixels: t.pixels.clone(),
        }
    }
}

/// Axis-aligned box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Placement of the foreground on the background plus jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub offset: Vec2,
    pub contrast: f64,
    pub brightness: f64,
}

impl Placement {
    pub const IDENTITY: Placement = Placement {
        scale: 1.0,
        offset: [0.0, 0.0],
        contrast: 1.0,
        brightness: 0.0,
    };
}

/// Ranges for random placement and jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementRanges {
    pub scale: [f64; 2],
    pub contrast: f64,
    pub brightness: f64,
}

impl Default for PlacementRanges {
    fn default() -> Self {
        Self {
            scale: [0.75, 1.0],
            contrast: 0.2,
            brightness: 0.1,
        }
    }
}

/// Tight box of foreground pixels with alpha > 0 (in foreground pixels).
pub fn alpha_box(alpha: &[f64], width: usize) -> Option<PixelBox> {
    let mut b: Option<PixelBox> = None;
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let bb = b.get_or_insert(PixelBox {
                x_min: x,
                y_min: y,
                x_max: x + 1.0,
                y_max: y + 1.0,
            });
            bb.x_min = bb.x_min.min(x);
            bb.y_min = bb.y_min.min(y);
            bb.x_max = bb.x_max.max(x + 1.0);
            bb.y_max = bb.y_max.max(y + 1.0);
        }
    }
    b
}

impl Placement {
    /// Random scale/offset keeping the foreground box inside the frame,
    /// plus contrast/brightness jitter. Resamples (up to 100 times) when the
    /// box does not fit.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        ranges: &PlacementRanges,
        fg_box: &PixelBox,
        out_size: (usize, usize),
    ) -> Result<Self> {
        let (w, h) = (out_size.0 as f64, out_size.1 as f64);
        for _ in 0..100 {
            let scale = if ranges.scale[1] > ranges.scale[0] {
                rng.random_range(ranges.scale[0]..ranges.scale[1])
            } else {
                ranges.scale[0]
            };
            let bw = (fg_box.x_max - fg_box.x_min) * scale;
            let bh = (fg_box.y_max - fg_box.y_min) * scale;
            if bw > w || bh > h {
                continue;
            }
            // Box left edge lands uniformly in the feasible range.
            let left = rng.random_range(0.0..=(w - bw));
            let top = rng.random_range(0.0..=(h - bh));
            let contrast = 1.0 + crate::warp::uniform(rng, ranges.contrast);
            let brightness = crate::warp::uniform(rng, ranges.brightness);
            return Ok(Self {
                scale,
                offset: [left - fg_box.x_min * scale, top - fg_box.y_min * scale],
                contrast,
                brightness,
            });
        }
        Err(Error::Validation("foreground does not fit in the output image".into()))
    }
}

/// A composited image and what is needed to propagate gradients back to the
/// foreground colors.
#[derive(Debug, Clone)]
pub struct Composite {
    pub image: Image,
    pub gt: PixelBox,
    pub placement: Placement,
    /// Per output pixel: foreground taps `(fg pixel, bilinear weight * alpha)`.
    fg_taps: Vec<[(u32, f64); 4]>,
    /// Per output pixel and channel: whether the jitter clamp was inactive.
    pass: Vec<[bool; 3]>,
}

/// Alpha-blends the foreground (scaled by `placement.scale`, translated by
/// `placement.offset`, bilinear, premultiplied) over the background, then
/// applies `clamp(contrast * x + brightness, 0, 1)`.
pub fn composite(
    fg_rgb: &[Rgb],
    fg_alpha: &[f64],
    fg_size: (usize, usize),
    background: &Image,
    placement: &Placement,
) -> Result<Composite> {
    let (fw, fh) = fg_size;
    let fg_box = alpha_box(fg_alpha, fw)
        .ok_or_else(|| Error::Validation("foreground alpha is empty; no ground-truth box".into()))?;
    let (w, h) = (background.width, background.height);
    let s = placement.scale;
    let gt = PixelBox {
        x_min: (fg_box.x_min * s + placement.offset[0]).max(0.0),
        y_min: (fg_box.y_min * s + placement.offset[1]).max(0.0),
        x_max: (fg_box.x_max * s + placement.offset[0]).min(w as f64),
        y_max: (fg_box.y_max * s + placement.offset[1]).min(h as f64),
    };
    if !(gt.x_max > gt.x_min && gt.y_max > gt.y_min) {
        return Err(Error::Validation("foreground placed outside the frame".into()));
    }
    let mut pixels = vec![[0.0; 3]; w * h];
    let mut fg_taps = vec![[(0u32, 0.0); 4]; w * h];
    let mut pass = vec![[true; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            // Foreground continuous pixel-center coordinates.
            let fx = (x as f64 + 0.5 - placement.offset[0]) / s - 0.5;
            let fy = (y as f64 + 0.5 - placement.offset[1]) / s - 0.5;
            let x0 = fx.floor();
            let y0 = fy.floor();
            let (ax, ay) = (fx - x0, fy - y0);
            let mut acc = [0.0; 3];
            let mut a_sum = 0.0;
            let corners = [
                (x0, y0, (1.0 - ax) * (1.0 - ay)),
                (x0 + 1.0, y0, ax * (1.0 - ay)),
                (x0, y0 + 1.0, (1.0 - ax) * ay),
                (x0 + 1.0, y0 + 1.0, ax * ay),
            ];
            for (k, &(cx, cy, wgt)) in corners.iter().enumerate() {
                if wgt == 0.0 || cx < 0.0 || cy < 0.0 || cx >= fw as f64 || cy >= fh as f64 {
                    continue;
                }
                let j = cy as usize * fw + cx as usize;
                let wa = wgt * fg_alpha[j];
                if wa == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    acc[c] += wa * fg_rgb[j][c];
                }
                a_sum += wa;
                fg_taps[i][k] = (j as u32, wa);
            }
            let bg = background.pixels[i];
            for c in 0..3 {
                let v = acc[c] + (1.0 - a_sum) * bg[c];
                let jittered = placement.contrast * v + placement.brightness;
                pass[i][c] = (0.0..=1.0).contains(&jittered);
                pixels[i][c] = jittered.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Composite {
        image: Image {
            width: w,
            height: h,
            pixels,
        },
        gt,
        placement: *placement,
        fg_taps,
        pass,
    })
}

impl Composite {
    /// Accumulates `d loss / d fg_rgb` from `d loss / d image`.
    pub fn backward(&self, d_image: &[Rgb], d_fg: &mut [Rgb]) {
        let c = self.placement.contrast;
        for (i, d) in d_image.iter().enumerate() {
            for &(j, wa) in &self.fg_taps[i] {
                if wa == 0.0 {
                    continue;
                }
                for ch in 0..3 {
                    if self.pass[i][ch] {
                        d_fg[j as usize][ch] += c * wa * d[ch];
                    }
                }
            }
        }
    }
}

/// Camera placement around the person.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraRig {
    pub center: Vec3,
    pub distance: f64,
    pub height: f64,
    pub fov_y_deg: f64,
    pub width: usize,
    pub image_height: usize,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            center: [0.0, 0.85, 0.0],
            distance: 3.2,
            height: 0.85,
            fov_y_deg: 36.0,
            width: 128,
            image_height: 128,
        }
    }
}

impl CameraRig {
    /// Camera at `angle_deg` around the vertical axis; 0 looks at the front
    /// (+z side) of the person.
    pub fn camera(&self, angle_deg: f64) -> Camera {
        let a = angle_deg.to_radians();
        Camera {
            position: [
                self.center[0] + self.distance * a.sin(),
                self.height,
                self.center[2] + self.distance * a.cos(),
            ],
            look_at: self.center,
            up: [0.0, 1.0, 0.0],
            fov_y_deg: self.fov_y_deg,
            width: self.width,
            height: self.image_height,
        }
    }
}

/// `n` viewing angles evenly spaced over [-180, 180] degrees inclusive;
/// a single angle is the front view.
pub fn ring_angles(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|k| -180.0 + 360.0 * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Cameras for [`ring_angles`].
pub fn view_ring(rig: &CameraRig, n: usize) -> Result<Vec<Camera>> {
    if n == 0 {
        return Err(Error::Domain("view ring needs at least one angle".into()));
    }
    Ok(ring_angles(n).into_iter().map(|a| rig.camera(a)).collect())
}
