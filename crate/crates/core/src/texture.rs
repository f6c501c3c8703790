//! Differentiable camouflage texture synthesis.
//!
//! A texture is generated in three stages:
//!
//! 1. a soft Voronoi probability map over the palette, driven by per-color
//!    control points ([`prob_map`]),
//! 2. a uniform box smoothing of that map ([`smooth_prob_map`]),
//! 3. Gumbel sampling of one palette color per pixel, either relaxed through a
//!    tempered softmax ([`soft_sample`]) or exact through argmax
//!    ([`hard_sample`]).
//!
//! Every stage has a matching vector-Jacobian product so the whole chain can be
//! trained by gradient descent on the control points and the trainable Gumbel
//! seeds. [`TextureGenerator`] wires the stages together.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for trainable uniform seeds; upper clamp is `1 - U_CLAMP`.
pub const U_CLAMP: f64 = 1e-6;
/// Probability floor applied before taking `log p`.
pub const P_FLOOR: f64 = 1e-12;

pub type Rgb = [f64; 3];

/// The discrete color set a camouflage texture is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    colors: Vec<Rgb>,
}

impl Palette {
    pub fn new(colors: Vec<Rgb>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::InvalidInput("palette needs at least one color".into()));
        }
        for (i, c) in colors.iter().enumerate() {
            if c.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!(
                    "palette color {i} has a channel outside [0, 1]: {c:?}"
                )));
            }
        }
        for i in 0..colors.len() {
            for j in (i + 1)..colors.len() {
                if colors[i] == colors[j] {
                    return Err(Error::InvalidInput(format!(
                        "palette colors {i} and {j} are identical"
                    )));
                }
            }
        }
        Ok(Self { colors })
    }

    /// Woodland-style four color default.
    pub fn woodland() -> Self {
        Self {
            colors: vec![
                [0.29, 0.33, 0.18],
                [0.47, 0.38, 0.24],
                [0.74, 0.68, 0.50],
                [0.12, 0.12, 0.10],
            ],
        }
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Largest Euclidean distance between two palette colors.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for a in &self.colors {
            for b in &self.colors {
                best = best.max(dist3(a, b));
            }
        }
        best
    }

    /// Distance from `c` to the closest palette color.
    pub fn distance_to_nearest(&self, c: &Rgb) -> f64 {
        self.colors
            .iter()
            .map(|p| dist3(p, c))
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist3(a: &Rgb, b: &Rgb) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Voronoi control points, `n_points` per palette color, in texture pixel
/// coordinates. Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoints {
    pub n_colors: usize,
    pub n_points: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major `[color][point]`.
    pub coords: Vec<[f64; 2]>,
}

impl ControlPoints {
    pub fn new(
        n_colors: usize,
        n_points: usize,
        width: usize,
        height: usize,
        coords: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let cp = Self {
            n_colors,
            n_points,
            width,
            height,
            coords,
        };
        cp.validate()?;
        Ok(cp)
    }

    /// Uniform random placement over `[0, W] x [0, H]`.
    pub fn random<R: Rng + ?Sized>(
        n_colors: usize,
        n_points: usize,
        width: usize,
        height: usize,
        rng: &mut R,
    ) -> Self {
        let coords = (0..n_colors * n_points)
            .map(|_| {
                [
                    rng.random::<f64>() * width as f64,
                    rng.random::<f64>() * height as f64,
                ]
            })
            .collect();
        Self {
            n_colors,
            n_points,
            width,
            height,
            coords,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_colors == 0 || self.n_points == 0 {
            return Err(Error::InvalidInput(
                "control points need at least one color and one point per color".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("texture size must be positive".into()));
        }
        if self.coords.len() != self.n_colors * self.n_points {
            return Err(Error::InvalidInput(format!(
                "expected {} control points, found {}",
                self.n_colors * self.n_points,
                self.coords.len()
            )));
        }
        if let Some(i) = self
            .coords
            .iter()
            .position(|c| !c[0].is_finite() || !c[1].is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "control point {i} has a non-finite coordinate"
            )));
        }
        Ok(())
    }

    pub fn point(&self, color: usize, j: usize) -> [f64; 2] {
        self.coords[color * self.n_points + j]
    }
}

/// Per-pixel categorical distribution over the palette, `[color][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub n_colors: usize,
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f64>,
}

impl ProbabilityMap {
    /// Uniform `value` per color everywhere (`values.len()` colors).
    pub fn constant(values: &[f64], height: usize, width: usize) -> Self {
        let plane = height * width;
        let mut probs = Vec::with_capacity(values.len() * plane);
        for v in values {
            probs.extend(std::iter::repeat_n(*v, plane));
        }
        Self {
            n_colors: values.len(),
            height,
            width,
            probs,
        }
    }

    #[inline]
    pub fn get(&self, k: usize, y: usize, x: usize) -> f64 {
        self.probs[(k * self.height + y) * self.width + x]
    }

    /// Largest deviation of a per-pixel probability sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        let plane = self.height * self.width;
        (0..plane)
            .map(|px| {
                let s: f64 = (0..self.n_colors).map(|k| self.probs[k * plane + px]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Index of the most likely color at a pixel (lowest index on ties).
    pub fn argmax(&self, y: usize, x: usize) -> usize {
        let mut best = 0;
        for k in 1..self.n_colors {
            if self.get(k, y, x) > self.get(best, y, x) {
                best = k;
            }
        }
        best
    }
}

/// How trainable Gumbel seeds are shared across the texture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SeedLayout {
    /// One seed per color and pixel.
    #[default]
    PerPixel,
    /// One seed per color, broadcast over all pixels.
    PerColor,
}

/// Fixed and trainable uniform seeds mixed into Gumbel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelField {
    pub n_colors: usize,
    pub height: usize,
    pub width: usize,
    pub layout: SeedLayout,
    pub lambda: f64,
    pub u_fix: Vec<f64>,
    pub u_train: Vec<f64>,
}

impl GumbelField {
    /// Fresh field: `u_fix ~ U(0,1)` and `u_train` initialised to `u_fix`, so the
    /// mixture starts out as an exact standard-Gumbel draw.
    pub fn random<R: Rng + ?Sized>(
        n_colors: usize,
        height: usize,
        width: usize,
        layout: SeedLayout,
        lambda: f64,
        rng: &mut R,
    ) -> Self {
        let len = match layout {
            SeedLayout::PerPixel => n_colors * height * width,
            SeedLayout::PerColor => n_colors,
        };
        let u_fix: Vec<f64> = (0..len)
            .map(|_| rng.random::<f64>().clamp(U_CLAMP, 1.0 - U_CLAMP))
            .collect();
        Self {
            n_colors,
            height,
            width,
            layout,
            lambda,
            u_train: u_fix.clone(),
            u_fix,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!(
                "gumbel mixing ratio {} outside [0, 1]",
                self.lambda
            )));
        }
        let len = self.seed_len();
        if self.u_fix.len() != len || self.u_train.len() != len {
            return Err(Error::InvalidInput(format!(
                "gumbel field expects {len} seeds, found {} fixed / {} trainable",
                self.u_fix.len(),
                self.u_train.len()
            )));
        }
        if self.u_fix.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
            return Err(Error::InvalidInput("fixed seeds must lie in (0, 1)".into()));
        }
        if self.u_train.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidInput("trainable seeds must be finite".into()));
        }
        Ok(())
    }

    pub fn seed_len(&self) -> usize {
        match self.layout {
            SeedLayout::PerPixel => self.n_colors * self.height * self.width,
            SeedLayout::PerColor => self.n_colors,
        }
    }

    /// Seed index for color `k` at flat pixel index `px`.
    #[inline]
    pub fn seed_index(&self, k: usize, px: usize) -> usize {
        match self.layout {
            SeedLayout::PerPixel => k * self.height * self.width + px,
            SeedLayout::PerColor => k,
        }
    }

    pub fn clamp_train(&mut self) {
        for u in &mut self.u_train {
            *u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
        }
    }

    #[inline]
    fn mixed(&self, s: usize) -> f64 {
        let ut = self.u_train[s].clamp(U_CLAMP, 1.0 - U_CLAMP);
        self.lambda * self.u_fix[s] + (1.0 - self.lambda) * ut
    }
}

/// Gumbel noise `-log(-log(lambda * u_fix + (1 - lambda) * u_train))`, laid
/// out `[color][y][x]` regardless of the seed layout.
pub fn gumbel_values(g: &GumbelField) -> Result<Vec<f64>> {
    let plane = g.height * g.width;
    let mut out = vec![0.0; g.n_colors * plane];
    for k in 0..g.n_colors {
        for px in 0..plane {
            let m = g.mixed(g.seed_index(k, px));
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::Internal(format!(
                    "mixed uniform seed {m} left (0, 1)"
                )));
            }
            out[k * plane + px] = -(-m.ln()).ln();
        }
    }
    Ok(out)
}

/// `d g / d u_train` for one seed, chained through the mixture.
#[inline]
fn gumbel_seed_derivative(g: &GumbelField, s: usize) -> f64 {
    let m = g.mixed(s);
    let q = -m.ln();
    (1.0 - g.lambda) / (q * m)
}

/// Whether a pixel holds a blend of palette colors or exactly one of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TextureMode {
    Soft,
    Hard,
}

/// An RGB texture map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
    pub mode: TextureMode,
}

impl TextureMap {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
            mode: TextureMode::Hard,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Flattened `[y][x][channel]` view for the linear stages downstream.
    pub fn to_flat(&self) -> Vec<f64> {
        self.pixels.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(width: usize, height: usize, flat: &[f64], mode: TextureMode) -> Self {
        let pixels = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self {
            width,
            height,
            pixels,
            mode,
        }
    }
}

#[inline]
fn pixel_center(x: usize, y: usize) -> [f64; 2] {
    [x as f64 + 0.5, y as f64 + 0.5]
}

/// Per-color log weights `s_i = log sum_j exp(-|x - b_ij| / alpha)` at one pixel.
fn log_weights(cp: &ControlPoints, alpha: f64, pos: [f64; 2], out: &mut [f64]) {
    for (i, s) in out.iter_mut().enumerate() {
        let mut m = f64::NEG_INFINITY;
        for j in 0..cp.n_points {
            let b = cp.point(i, j);
            let d = ((pos[0] - b[0]).powi(2) + (pos[1] - b[1]).powi(2)).sqrt();
            m = m.max(-d / alpha);
        }
        let mut acc = 0.0;
        for j in 0..cp.n_points {
            let b = cp.point(i, j);
            let d = ((pos[0] - b[0]).powi(2) + (pos[1] - b[1]).powi(2)).sqrt();
            acc += (-d / alpha - m).exp();
        }
        *s = m + acc.ln();
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn check_size(size: (usize, usize)) -> Result<()> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::Domain(format!("map size {size:?} must be positive")));
    }
    Ok(())
}

/// Soft Voronoi probability map of size `(height, width)`.
///
/// Weights are accumulated in log space, so tiny smoothing radii degrade
/// gracefully to the hard Voronoi labelling instead of underflowing.
pub fn prob_map(
    cp: &ControlPoints,
    palette: &Palette,
    alpha: f64,
    size: (usize, usize),
) -> Result<ProbabilityMap> {
    cp.validate()?;
    check_size(size)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("smoothing radius {alpha} must be > 0")));
    }
    if cp.n_colors != palette.len() {
        return Err(Error::InvalidInput(format!(
            "{} control point groups for a palette of {} colors",
            cp.n_colors,
            palette.len()
        )));
    }
    let (height, width) = size;
    let nc = cp.n_colors;
    let plane = height * width;
    // Pixel-major scratch, transposed to color planes afterwards.
    let mut pixel_major = vec![0.0; plane * nc];
    pixel_major
        .par_chunks_mut(width * nc)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..width {
                let out = &mut row[x * nc..(x + 1) * nc];
                log_weights(cp, alpha, pixel_center(x, y), out);
                softmax_in_place(out);
            }
        });
    let mut probs = vec![0.0; nc * plane];
    for px in 0..plane {
        for k in 0..nc {
            probs[k * plane + px] = pixel_major[px * nc + k];
        }
    }
    Ok(ProbabilityMap {
        n_colors: nc,
        height,
        width,
        probs,
    })
}

/// Vector-Jacobian product of [`prob_map`] with respect to the control points.
///
/// `pm` is the forward output and `dprobs` the upstream gradient, both
/// `[color][y][x]`. Returns one gradient per control point.
pub fn prob_map_backward(
    cp: &ControlPoints,
    alpha: f64,
    pm: &ProbabilityMap,
    dprobs: &[f64],
) -> Vec<[f64; 2]> {
    let (height, width, nc) = (pm.height, pm.width, pm.n_colors);
    let plane = height * width;
    let np = cp.n_points;
    let rows: Vec<Vec<[f64; 2]>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut grad = vec![[0.0; 2]; nc * np];
            let mut s = vec![0.0; nc];
            let mut ds = vec![0.0; nc];
            for x in 0..width {
                let px = y * width + x;
                let pos = pixel_center(x, y);
                let mut dot = 0.0;
                for k in 0..nc {
                    dot += pm.probs[k * plane + px] * dprobs[k * plane + px];
                }
                let mut any = false;
                for k in 0..nc {
                    let p = pm.probs[k * plane + px];
                    ds[k] = p * (dprobs[k * plane + px] - dot);
                    any |= ds[k] != 0.0;
                }
                if !any {
                    continue;
                }
                log_weights(cp, alpha, pos, &mut s);
                for i in 0..nc {
                    if ds[i] == 0.0 {
                        continue;
                    }
                    for j in 0..np {
                        let b = cp.point(i, j);
                        let dx = b[0] - pos[0];
                        let dy = b[1] - pos[1];
                        let d = (dx * dx + dy * dy).sqrt();
                        if d == 0.0 {
                            continue;
                        }
                        let r = (-d / alpha - s[i]).exp();
                        let c = -ds[i] * r / (alpha * d);
                        let g = &mut grad[i * np + j];
                        g[0] += c * dx;
                        g[1] += c * dy;
                    }
                }
            }
            grad
        })
        .collect();
    let mut total = vec![[0.0; 2]; nc * np];
    for row in rows {
        for (t, g) in total.iter_mut().zip(row) {
            t[0] += g[0];
            t[1] += g[1];
        }
    }
    total
}

fn check_kernel(m: usize) -> Result<()> {
    if m == 0 || m % 2 == 0 {
        return Err(Error::Domain(format!(
            "smoothing kernel size {m} must be odd and >= 1"
        )));
    }
    Ok(())
}

/// Separable box filter with replicate padding over one `height x width` plane.
fn box_filter_plane(src: &[f64], dst: &mut [f64], height: usize, width: usize, m: usize) {
    let r = (m / 2) as isize;
    let inv = 1.0 / m as f64;
    let mut tmp = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for o in -r..=r {
                let xx = (x as isize + o).clamp(0, width as isize - 1) as usize;
                acc += src[y * width + xx];
            }
            tmp[y * width + x] = acc * inv;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for o in -r..=r {
                let yy = (y as isize + o).clamp(0, height as isize - 1) as usize;
                acc += tmp[yy * width + x];
            }
            dst[y * width + x] = acc * inv;
        }
    }
}

/// Adjoint of [`box_filter_plane`].
fn box_filter_plane_adjoint(g: &[f64], out: &mut [f64], height: usize, width: usize, m: usize) {
    let r = (m / 2) as isize;
    let inv = 1.0 / m as f64;
    let mut tmp = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let v = g[y * width + x] * inv;
            for o in -r..=r {
                let yy = (y as isize + o).clamp(0, height as isize - 1) as usize;
                tmp[yy * width + x] += v;
            }
        }
    }
    for y in 0..height {
        for x in 0..width {
            let v = tmp[y * width + x] * inv;
            for o in -r..=r {
                let xx = (x as isize + o).clamp(0, width as isize - 1) as usize;
                out[y * width + xx] += v;
            }
        }
    }
}

/// Uniform `m x m` smoothing of each color plane with replicate borders.
pub fn smooth_prob_map(p: &ProbabilityMap, m: usize) -> Result<ProbabilityMap> {
    check_kernel(m)?;
    if m == 1 {
        return Ok(p.clone());
    }
    let plane = p.height * p.width;
    let mut probs = vec![0.0; p.probs.len()];
    probs
        .par_chunks_mut(plane)
        .zip(p.probs.par_chunks(plane))
        .for_each(|(dst, src)| box_filter_plane(src, dst, p.height, p.width, m));
    Ok(ProbabilityMap {
        n_colors: p.n_colors,
        height: p.height,
        width: p.width,
        probs,
    })
}

/// Vector-Jacobian product of [`smooth_prob_map`].
pub fn smooth_prob_map_backward(
    dsmoothed: &[f64],
    height: usize,
    width: usize,
    m: usize,
) -> Result<Vec<f64>> {
    check_kernel(m)?;
    if m == 1 {
        return Ok(dsmoothed.to_vec());
    }
    let plane = height * width;
    let mut out = vec![0.0; dsmoothed.len()];
    out.par_chunks_mut(plane)
        .zip(dsmoothed.par_chunks(plane))
        .for_each(|(dst, g)| box_filter_plane_adjoint(g, dst, height, width, m));
    Ok(out)
}

fn check_field(p: &ProbabilityMap, g: &GumbelField, palette: &Palette) -> Result<()> {
    g.validate()?;
    if p.n_colors != palette.len() || g.n_colors != palette.len() {
        return Err(Error::InvalidInput(format!(
            "palette has {} colors but map/seeds have {}/{}",
            palette.len(),
            p.n_colors,
            g.n_colors
        )));
    }
    if (p.height, p.width) != (g.height, g.width) {
        return Err(Error::InvalidInput(format!(
            "probability map {}x{} and gumbel field {}x{} differ in size",
            p.height, p.width, g.height, g.width
        )));
    }
    Ok(())
}

/// Softmax logits `(g_i + log p_i) / tau` at every pixel, `[pixel][color]`.
fn sample_logits(p: &ProbabilityMap, gumbel: &[f64], tau: f64) -> Vec<f64> {
    let plane = p.height * p.width;
    let nc = p.n_colors;
    let mut z = vec![0.0; plane * nc];
    for px in 0..plane {
        for k in 0..nc {
            let lp = p.probs[k * plane + px].max(P_FLOOR).ln();
            z[px * nc + k] = (gumbel[k * plane + px] + lp) / tau;
        }
    }
    z
}

/// Relaxed Gumbel-softmax texture; each pixel is a convex blend of the palette.
pub fn soft_sample(
    p: &ProbabilityMap,
    g: &GumbelField,
    palette: &Palette,
    tau: f64,
) -> Result<TextureMap> {
    Ok(soft_sample_with_weights(p, g, palette, tau)?.0)
}

/// [`soft_sample`] plus the per-pixel softmax weights `[pixel][color]`.
pub fn soft_sample_with_weights(
    p: &ProbabilityMap,
    g: &GumbelField,
    palette: &Palette,
    tau: f64,
) -> Result<(TextureMap, Vec<f64>)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("temperature {tau} must be > 0")));
    }
    check_field(p, g, palette)?;
    let gv = gumbel_values(g)?;
    let nc = p.n_colors;
    let mut w = sample_logits(p, &gv, tau);
    let mut pixels = Vec::with_capacity(p.height * p.width);
    for a in w.chunks_exact_mut(nc) {
        softmax_in_place(a);
        let mut c = [0.0; 3];
        for (ak, col) in a.iter().zip(palette.colors()) {
            for ch in 0..3 {
                c[ch] += ak * col[ch];
            }
        }
        pixels.push(c);
    }
    Ok((
        TextureMap {
            width: p.width,
            height: p.height,
            pixels,
            mode: TextureMode::Soft,
        },
        w,
    ))
}

/// Exact Gumbel-max sample: every pixel takes the palette color maximising
/// `g_i + log p_i` (lowest index on ties).
pub fn hard_sample(p: &ProbabilityMap, g: &GumbelField, palette: &Palette) -> Result<TextureMap> {
    let labels = hard_labels(p, g, palette)?;
    let pixels = labels.iter().map(|&k| palette.colors()[k]).collect();
    Ok(TextureMap {
        width: p.width,
        height: p.height,
        pixels,
        mode: TextureMode::Hard,
    })
}

/// Palette index chosen by [`hard_sample`] at every pixel.
pub fn hard_labels(p: &ProbabilityMap, g: &GumbelField, palette: &Palette) -> Result<Vec<usize>> {
    check_field(p, g, palette)?;
    let gv = gumbel_values(g)?;
    let z = sample_logits(p, &gv, 1.0);
    Ok(z.chunks_exact(p.n_colors).map(argmax).collect())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradients of [`soft_sample`] with respect to its two differentiable inputs.
#[derive(Debug, Clone)]
pub struct SoftSampleGrad {
    /// `[color][y][x]`, with respect to the (smoothed) probability map.
    pub dprobs: Vec<f64>,
    /// One entry per seed of the Gumbel field.
    pub du_train: Vec<f64>,
}

/// Vector-Jacobian product of [`soft_sample`].
///
/// `weights` are the softmax weights returned by [`soft_sample_with_weights`]
/// and `dtex` the upstream gradient, one RGB triple per pixel.
pub fn soft_sample_backward(
    p: &ProbabilityMap,
    g: &GumbelField,
    palette: &Palette,
    tau: f64,
    weights: &[f64],
    dtex: &[Rgb],
) -> SoftSampleGrad {
    let plane = p.height * p.width;
    let nc = p.n_colors;
    let mut dprobs = vec![0.0; nc * plane];
    let mut du_train = vec![0.0; g.seed_len()];
    let mut da = vec![0.0; nc];
    for px in 0..plane {
        let a = &weights[px * nc..(px + 1) * nc];
        let dc = dtex[px];
        let mut dot = 0.0;
        for k in 0..nc {
            let col = palette.colors()[k];
            da[k] = col[0] * dc[0] + col[1] * dc[1] + col[2] * dc[2];
            dot += a[k] * da[k];
        }
        for k in 0..nc {
            let dz = a[k] * (da[k] - dot) / tau;
            let pk = p.probs[k * plane + px];
            if pk > P_FLOOR {
                dprobs[k * plane + px] = dz / pk;
            }
            let s = g.seed_index(k, px);
            let ut = g.u_train[s];
            if ut > U_CLAMP && ut < 1.0 - U_CLAMP {
                du_train[s] += dz * gumbel_seed_derivative(g, s);
            }
        }
    }
    SoftSampleGrad { dprobs, du_train }
}

/// All trainable texture state: control points and Gumbel seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexParams {
    pub control: ControlPoints,
    pub gumbel: GumbelField,
}

impl TexParams {
    pub fn validate(&self) -> Result<()> {
        self.control.validate()?;
        self.gumbel.validate()?;
        if self.control.n_colors != self.gumbel.n_colors
            || self.control.width != self.gumbel.width
            || self.control.height != self.gumbel.height
        {
            return Err(Error::InvalidInput(
                "control points and gumbel field disagree on colors or size".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient with respect to [`TexParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct TexParamsGrad {
    pub coords: Vec<[f64; 2]>,
    pub u_train: Vec<f64>,
}

impl TexParamsGrad {
    pub fn zeros_like(params: &TexParams) -> Self {
        Self {
            coords: vec![[0.0; 2]; params.control.coords.len()],
            u_train: vec![0.0; params.gumbel.u_train.len()],
        }
    }
}

/// Static settings of the texture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub width: usize,
    pub height: usize,
    pub n_points: usize,
    /// Voronoi smoothing radius in texture pixels.
    pub alpha: f64,
    /// Box smoothing kernel size (odd).
    pub kernel: usize,
    pub lambda: f64,
    pub layout: SeedLayout,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            n_points: 32,
            alpha: 3.0,
            kernel: 5,
            lambda: 0.7,
            layout: SeedLayout::PerPixel,
        }
    }
}

/// Intermediate values of a soft forward pass, kept for the backward pass.
pub struct SoftForward {
    pub texture: TextureMap,
    raw: ProbabilityMap,
    smoothed: ProbabilityMap,
    weights: Vec<f64>,
    tau: f64,
}

/// Composes the synthesis stages for one palette and settings.
#[derive(Debug, Clone)]
pub struct TextureGenerator {
    pub palette: Palette,
    pub settings: SynthSettings,
}

impl TextureGenerator {
    pub fn new(palette: Palette, settings: SynthSettings) -> Result<Self> {
        check_kernel(settings.kernel)?;
        check_size((settings.height, settings.width))?;
        if !(settings.alpha > 0.0) {
            return Err(Error::Domain(format!(
                "smoothing radius {} must be > 0",
                settings.alpha
            )));
        }
        Ok(Self { palette, settings })
    }

    /// Random initial parameters: uniform control points, fresh Gumbel seeds.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> TexParams {
        let s = &self.settings;
        let control = ControlPoints::random(self.palette.len(), s.n_points, s.width, s.height, rng);
        let gumbel = GumbelField::random(
            self.palette.len(),
            s.height,
            s.width,
            s.layout,
            s.lambda,
            rng,
        );
        TexParams { control, gumbel }
    }

    pub fn probabilities(&self, params: &TexParams) -> Result<ProbabilityMap> {
        let s = &self.settings;
        let raw = prob_map(&params.control, &self.palette, s.alpha, (s.height, s.width))?;
        smooth_prob_map(&raw, s.kernel)
    }

    pub fn soft_forward(&self, params: &TexParams, tau: f64) -> Result<SoftForward> {
        params.validate()?;
        let s = &self.settings;
        let raw = prob_map(&params.control, &self.palette, s.alpha, (s.height, s.width))?;
        let smoothed = smooth_prob_map(&raw, s.kernel)?;
        let (texture, weights) =
            soft_sample_with_weights(&smoothed, &params.gumbel, &self.palette, tau)?;
        Ok(SoftForward {
            texture,
            raw,
            smoothed,
            weights,
            tau,
        })
    }

    /// Back-propagates a texture gradient to the control points and seeds.
    pub fn soft_backward(
        &self,
        params: &TexParams,
        fwd: &SoftForward,
        dtex: &[Rgb],
    ) -> Result<TexParamsGrad> {
        let s = &self.settings;
        let ss = soft_sample_backward(
            &fwd.smoothed,
            &params.gumbel,
            &self.palette,
            fwd.tau,
            &fwd.weights,
            dtex,
        );
        let draw = smooth_prob_map_backward(&ss.dprobs, s.height, s.width, s.kernel)?;
        let coords = prob_map_backward(&params.control, s.alpha, &fwd.raw, &draw);
        Ok(TexParamsGrad {
            coords,
            u_train: ss.du_train,
        })
    }

    /// Discrete texture used for export and evaluation.
    pub fn hard(&self, params: &TexParams) -> Result<TextureMap> {
        let p = self.probabilities(params)?;
        hard_sample(&p, &params.gumbel, &self.palette)
    }
}
