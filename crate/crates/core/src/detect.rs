//! Surrogate person detector, IoU machinery, detection loss and ASR.
//!
//! The detector scores every anchor box with a logistic model over 51 pooled
//! features: mean RGB of a 4x4 cell grid, mean absolute horizontal and
//! vertical luminance differences over the box, and their sum over the
//! central 2x2 cells. Features come from integral images, so detection is
//! cheap and its gradient with respect to the image is exact.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{Image, PixelBox};
use crate::texture::Rgb;

/// Number of pooled features per box.
pub const N_FEATURES: usize = 51;
/// Cells per box side.
const CELLS: usize = 4;
/// Charbonnier smoothing of absolute differences: `sqrt(d^2 + EDGE_EPS)`.
pub const EDGE_EPS: f64 = 1e-6;

/// Axis-aligned box with a confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub conf: f64,
}

impl DetBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, conf: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidInput(format!(
                "box ({x_min}, {y_min}, {x_max}, {y_max}) is empty"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            conf,
        })
    }

    pub fn from_pixel_box(b: &PixelBox, conf: f64) -> Self {
        Self {
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
            conf,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &DetBox, b: &DetBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Anchor box shape scanned over the image at a stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorShape {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
}

impl AnchorShape {
    /// Grid dimensions on an image: `floor((W - w) / s) + 1` per axis.
    pub fn grid(&self, w: usize, h: usize) -> (usize, usize) {
        if self.width > w || self.height > h || self.stride == 0 {
            return (0, 0);
        }
        (
            (w - self.width) / self.stride + 1,
            (h - self.height) / self.stride + 1,
        )
    }
}

/// One anchor on a specific image size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    pub shape: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Anchor {
    pub fn det_box(&self, conf: f64) -> DetBox {
        DetBox {
            x_min: self.x as f64,
            y_min: self.y as f64,
            x_max: (self.x + self.w) as f64,
            y_max: (self.y + self.h) as f64,
            conf,
        }
    }
}

/// All anchors for an image size, shape by shape, row-major.
pub fn anchors(shapes: &[AnchorShape], w: usize, h: usize) -> Vec<Anchor> {
    let mut out = Vec::new();
    for (s, shape) in shapes.iter().enumerate() {
        let (nx, ny) = shape.grid(w, h);
        for j in 0..ny {
            for i in 0..nx {
                out.push(Anchor {
                    shape: s,
                    x: i * shape.stride,
                    y: j * shape.stride,
                    w: shape.width,
                    h: shape.height,
                });
            }
        }
    }
    out
}

/// Logistic weights per anchor shape over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateModel {
    pub shapes: Vec<AnchorShape>,
    /// Per shape: `N_FEATURES` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Feature standardization shared by all shapes.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl SurrogateModel {
    /// Zero weights: every confidence is 0.5.
    pub fn zeros(shapes: Vec<AnchorShape>) -> Self {
        let n = shapes.len();
        Self {
            shapes,
            weights: vec![vec![0.0; N_FEATURES]; n],
            bias: vec![0.0; n],
            feature_mean: vec![0.0; N_FEATURES],
            feature_scale: vec![1.0; N_FEATURES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.shapes.len();
        if n == 0 {
            return Err(Error::Validation("surrogate has no anchor shapes".into()));
        }
        if self.weights.len() != n || self.bias.len() != n {
            return Err(Error::Validation("surrogate weights do not match its shapes".into()));
        }
        if self.weights.iter().any(|w| w.len() != N_FEATURES)
            || self.feature_mean.len() != N_FEATURES
            || self.feature_scale.len() != N_FEATURES
        {
            return Err(Error::Validation(format!(
                "surrogate feature vectors must have {N_FEATURES} entries"
            )));
        }
        if self.feature_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Validation("feature scales must be positive".into()));
        }
        Ok(())
    }

    /// Default anchor set for 128 x 128 person images.
    pub fn default_shapes() -> Vec<AnchorShape> {
        [(24, 84), (30, 96), (36, 108)]
            .into_iter()
            .map(|(width, height)| AnchorShape {
                width,
                height,
                stride: 4,
            })
            .collect()
    }

    fn logit(&self, shape: usize, f: &[f64; N_FEATURES]) -> f64 {
        let w = &self.weights[shape];
        let mut z = self.bias[shape];
        for k in 0..N_FEATURES {
            z += w[k] * (f[k] - self.feature_mean[k]) / self.feature_scale[k];
        }
        z
    }
}

/// Integral images of the color channels and the smoothed edge magnitudes.
pub struct FeatureMaps {
    width: usize,
    height: usize,
    /// `(w + 1) * (h + 1)` prefix sums: R, G, B, |dx|, |dy|.
    sums: [Vec<f64>; 5],
}

fn luminance(c: Rgb) -> f64 {
    (c[0] + c[1] + c[2]) / 3.0
}

impl FeatureMaps {
    pub fn new(img: &Image) -> Self {
        let (w, h) = (img.width, img.height);
        let mut maps: [Vec<f64>; 5] = Default::default();
        for m in &mut maps {
            *m = vec![0.0; w * h];
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let c = img.pixels[i];
                maps[0][i] = c[0];
                maps[1][i] = c[1];
                maps[2][i] = c[2];
                let g = luminance(c);
                let gx = luminance(img.pixels[y * w + (x + 1).min(w - 1)]);
                let gy = luminance(img.pixels[(y + 1).min(h - 1) * w + x]);
                maps[3][i] = ((gx - g).powi(2) + EDGE_EPS).sqrt();
                maps[4][i] = ((gy - g).powi(2) + EDGE_EPS).sqrt();
            }
        }
        let sums = maps.map(|m| {
            let mut s = vec![0.0; (w + 1) * (h + 1)];
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    row += m[y * w + x];
                    s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
                }
            }
            s
        });
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    fn rect_sum(&self, k: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = &self.sums[k];
        let w1 = self.width + 1;
        s[y1 * w1 + x1] - s[y0 * w1 + x1] - s[y1 * w1 + x0] + s[y0 * w1 + x0]
    }

    /// The 51 pooled features of a box.
    pub fn features(&self, a: &Anchor) -> [f64; N_FEATURES] {
        let mut f = [0.0; N_FEATURES];
        for (cy, cx, r) in cell_rects(a) {
            let area = ((r.2 - r.0) * (r.3 - r.1)) as f64;
            for c in 0..3 {
                f[(cy * CELLS + cx) * 3 + c] = self.rect_sum(c, r.0, r.1, r.2, r.3) / area;
            }
        }
        let (x0, y0, x1, y1) = (a.x, a.y, a.x + a.w, a.y + a.h);
        let area = (a.w * a.h) as f64;
        f[48] = self.rect_sum(3, x0, y0, x1, y1) / area;
        f[49] = self.rect_sum(4, x0, y0, x1, y1) / area;
        let c = central_rect(a);
        let carea = ((c.2 - c.0) * (c.3 - c.1)) as f64;
        f[50] = (self.rect_sum(3, c.0, c.1, c.2, c.3) + self.rect_sum(4, c.0, c.1, c.2, c.3)) / carea;
        f
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Cell rectangles `(cy, cx, (x0, y0, x1, y1))` of an anchor.
fn cell_rects(a: &Anchor) -> impl Iterator<Item = (usize, usize, (usize, usize, usize, usize))> + '_ {
    (0..CELLS).flat_map(move |cy| {
        (0..CELLS).map(move |cx| {
            let x0 = a.x + cx * a.w / CELLS;
            let x1 = a.x + (cx + 1) * a.w / CELLS;
            let y0 = a.y + cy * a.h / CELLS;
            let y1 = a.y + (cy + 1) * a.h / CELLS;
            (cy, cx, (x0, y0, x1, y1))
        })
    })
}

/// Central 2x2 cells of an anchor.
fn central_rect(a: &Anchor) -> (usize, usize, usize, usize) {
    (
        a.x + a.w / CELLS,
        a.y + a.h / CELLS,
        a.x + 3 * a.w / CELLS,
        a.y + 3 * a.h / CELLS,
    )
}

/// Detections of one image plus the anchors they came from.
#[derive(Debug, Clone)]
pub struct Detections {
    pub boxes: Vec<DetBox>,
    pub anchors: Vec<Anchor>,
}

/// Scores every anchor (no suppression).
pub fn surrogate_detect(model: &SurrogateModel, img: &Image) -> Result<Detections> {
    let anchors = anchors(&model.shapes, img.width, img.height);
    if anchors.is_empty() {
        return Err(Error::InvalidInput(format!(
            "image {}x{} is smaller than every anchor",
            img.width, img.height
        )));
    }
    let maps = FeatureMaps::new(img);
    let boxes = anchors
        .iter()
        .map(|a| a.det_box(sigmoid(model.logit(a.shape, &maps.features(a)))))
        .collect();
    Ok(Detections { boxes, anchors })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient of `sum_i g_i * conf_i` with respect to the image, for the given
/// `(anchor index, g_i)` pairs.
pub fn surrogate_backward(
    model: &SurrogateModel,
    img: &Image,
    det: &Detections,
    grads: &[(usize, f64)],
) -> Vec<Rgb> {
    let (w, h) = (img.width, img.height);
    // Rectangle additions are collected in 2D difference arrays, one for each
    // of R, G, B, |dx| and |dy|, and integrated at the end.
    let mut diff: [Vec<f64>; 5] = Default::default();
    for d in &mut diff {
        *d = vec![0.0; (w + 1) * (h + 1)];
    }
    let add = |d: &mut Vec<f64>, r: (usize, usize, usize, usize), v: f64| {
        let w1 = w + 1;
        d[r.1 * w1 + r.0] += v;
        d[r.1 * w1 + r.2] -= v;
        d[r.3 * w1 + r.0] -= v;
        d[r.3 * w1 + r.2] += v;
    };
    for &(ai, g) in grads {
        if g == 0.0 {
            continue;
        }
        let a = &det.anchors[ai];
        let conf = det.boxes[ai].conf;
        let dz = g * conf * (1.0 - conf);
        let wts = &model.weights[a.shape];
        let df = |k: usize| dz * wts[k] / model.feature_scale[k];
        for (cy, cx, r) in cell_rects(a) {
            let area = ((r.2 - r.0) * (r.3 - r.1)) as f64;
            for c in 0..3 {
                add(&mut diff[c], r, df((cy * CELLS + cx) * 3 + c) / area);
            }
        }
        let full = (a.x, a.y, a.x + a.w, a.y + a.h);
        let area = (a.w * a.h) as f64;
        add(&mut diff[3], full, df(48) / area);
        add(&mut diff[4], full, df(49) / area);
        let c = central_rect(a);
        let carea = ((c.2 - c.0) * (c.3 - c.1)) as f64;
        add(&mut diff[3], c, df(50) / carea);
        add(&mut diff[4], c, df(50) / carea);
    }
    let dense: Vec<Vec<f64>> = diff
        .iter()
        .map(|d| {
            let w1 = w + 1;
            let mut acc = d.clone();
            for y in 0..=h {
                for x in 1..=w {
                    acc[y * w1 + x] += acc[y * w1 + x - 1];
                }
            }
            for y in 1..=h {
                for x in 0..=w {
                    acc[y * w1 + x] += acc[(y - 1) * w1 + x];
                }
            }
            (0..w * h).map(|i| acc[(i / w) * w1 + i % w]).collect()
        })
        .collect();
    let mut out: Vec<Rgb> = (0..w * h)
        .map(|i| [dense[0][i], dense[1][i], dense[2][i]])
        .collect();
    // Edge maps: e = sqrt(d^2 + eps) with d = g(next) - g(here).
    let mut dlum = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let g = luminance(img.pixels[i]);
            let jx = y * w + (x + 1).min(w - 1);
            let dx = luminance(img.pixels[jx]) - g;
            let kx = dense[3][i] * dx / (dx * dx + EDGE_EPS).sqrt();
            dlum[jx] += kx;
            dlum[i] -= kx;
            let jy = (y + 1).min(h - 1) * w + x;
            let dy = luminance(img.pixels[jy]) - g;
            let ky = dense[4][i] * dy / (dy * dy + EDGE_EPS).sqrt();
            dlum[jy] += ky;
            dlum[i] -= ky;
        }
    }
    for (o, d) in out.iter_mut().zip(&dlum) {
        for c in o.iter_mut() {
            *c += d / 3.0;
        }
    }
    out
}

/// Confidence of the box with the largest IoU to the ground truth (first on
/// ties) and its index; `(0, None)` when there are no boxes.
pub fn det_loss(boxes: &[DetBox], gt: &DetBox) -> (f64, Option<usize>) {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in boxes.iter().enumerate() {
        let v = iou(b, gt);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    match best {
        Some((i, _)) => (boxes[i].conf, Some(i)),
        None => (0.0, None),
    }
}

/// Evaluation thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub tau_iou: f64,
    pub tau_conf: f64,
    pub ring_size: usize,
}

/// IoU thresholds reported in evaluation tables.
pub const TAU_IOUS: [f64; 4] = [0.01, 0.1, 0.3, 0.5];

impl EvalSpec {
    pub fn new(tau_iou: f64) -> Self {
        Self {
            tau_iou,
            tau_conf: 0.5,
            ring_size: 37,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("tau_iou", self.tau_iou), ("tau_conf", self.tau_conf)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("{n} = {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Whether one image is an attack success: every box overlapping the ground
/// truth by at least `tau_iou` has confidence strictly below `tau_conf`.
pub fn is_success(boxes: &[DetBox], gt: &DetBox, spec: &EvalSpec) -> bool {
    boxes
        .iter()
        .filter(|b| iou(b, gt) >= spec.tau_iou)
        .all(|b| b.conf < spec.tau_conf)
}

/// Fraction of successful images.
pub fn asr(detections: &[Vec<DetBox>], gts: &[DetBox], spec: &EvalSpec) -> Result<f64> {
    spec.validate()?;
    if detections.len() != gts.len() {
        return Err(Error::InvalidInput(format!(
            "{} detection sets for {} ground truths",
            detections.len(),
            gts.len()
        )));
    }
    if gts.is_empty() {
        return Ok(0.0);
    }
    let wins = detections
        .iter()
        .zip(gts)
        .filter(|(d, g)| is_success(d, g, spec))
        .count();
    Ok(wins as f64 / gts.len() as f64)
}

/// Binary logistic regression trained by Newton iterations with an L2
/// penalty (the intercept is not penalized).
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Logistic {
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
        let ok = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| (self.predict(x) >= 0.5) == y)
            .count();
        ok as f64 / xs.len().max(1) as f64
    }
}

pub fn fit_logistic(xs: &[Vec<f64>], ys: &[bool], l2: f64, max_iter: usize) -> Result<Logistic> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return Err(Error::InvalidInput("logistic fit needs matching, non-empty data".into()));
    }
    let d = xs[0].len();
    let dim = d + 1;
    let mut theta = DVector::<f64>::zeros(dim);
    for _ in 0..max_iter {
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        let mut grad = DVector::<f64>::zeros(dim);
        for (x, &y) in xs.iter().zip(ys) {
            let z = theta[d] + (0..d).map(|k| theta[k] * x[k]).sum::<f64>();
            let p = sigmoid(z);
            let r = p - if y { 1.0 } else { 0.0 };
            let wgt = (p * (1.0 - p)).max(1e-12);
            for i in 0..dim {
                let xi = if i < d { x[i] } else { 1.0 };
                grad[i] += r * xi;
                for j in i..dim {
                    let xj = if j < d { x[j] } else { 1.0 };
                    hess[(i, j)] += wgt * xi * xj;
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                hess[(i, j)] = hess[(j, i)];
            }
        }
        for i in 0..d {
            grad[i] += l2 * theta[i];
            hess[(i, i)] += l2;
        }
        hess[(d, d)] += 1e-9;
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Numeric("logistic Hessian is not positive definite".into()))?
            .solve(&grad);
        theta -= &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic fit diverged".into()));
    }
    Ok(Logistic {
        weights: theta.rows(0, d).iter().copied().collect(),
        bias: theta[d],
    })
}

/// Fits on a deterministic 80/20 split and fails unless held-out accuracy
/// reaches `min_accuracy`. Returns the model refitted on all data and the
/// held-out accuracy.
pub fn fit_logistic_checked(
    xs: &[Vec<f64>],
    ys: &[bool],
    l2: f64,
    min_accuracy: f64,
    seed: u64,
) -> Result<(Logistic, f64)> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = xs.len() * 4 / 5;
    let pick = |r: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (r.iter().map(|&i| xs[i].clone()).collect(), r.iter().map(|&i| ys[i]).collect())
    };
    let (tx, ty) = pick(&idx[..cut]);
    let (vx, vy) = pick(&idx[cut..]);
    let model = fit_logistic(&tx, &ty, l2, 50)?;
    let acc = model.accuracy(&vx, &vy);
    if acc < min_accuracy {
        return Err(Error::Training(format!(
            "held-out accuracy {acc:.3} below {min_accuracy:.2} ({} train / {} held-out crops, {} positive)",
            tx.len(),
            vx.len(),
            ys.iter().filter(|&&y| y).count()
        )));
    }
    Ok((fit_logistic(xs, ys, l2, 50)?, acc))
}

/// A training image: composited render (with its person box) or a plain
/// background (`gt = None`).
#[derive(Debug, Clone)]
pub struct TrainImage {
    pub image: Image,
    pub gt: Option<PixelBox>,
}

/// Surrogate training options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateTrainConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Positive crops kept per image and shape.
    pub pos_per_image: usize,
    /// Negative crops kept per image and shape.
    pub neg_per_image: usize,
    /// Extra negatives per image and shape drawn from partial overlaps
    /// (`hard_iou <= IoU < neg_iou`), which teaches the detector to localize.
    pub hard_per_image: usize,
    pub hard_iou: f64,
    pub l2: f64,
    pub min_accuracy: f64,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        Self {
            pos_iou: 0.5,
            neg_iou: 0.4,
            pos_per_image: 6,
            neg_per_image: 8,
            hard_per_image: 4,
            hard_iou: 0.1,
            l2: 1e-2,
            min_accuracy: 0.9,
            seed: 0,
        }
    }
}

/// Training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateReport {
    pub positives: usize,
    pub negatives: usize,
    /// Held-out accuracy per anchor shape.
    pub accuracy: Vec<f64>,
}

/// Trains one logistic model per anchor shape on person-vs-background crops.
pub fn train_surrogate(
    images: &[TrainImage],
    shapes: Vec<AnchorShape>,
    cfg: &SurrogateTrainConfig,
) -> Result<(SurrogateModel, SurrogateReport)> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no training images".into()));
    }
    let (w, h) = (images[0].image.width, images[0].image.height);
    if images.iter().any(|t| t.image.width != w || t.image.height != h) {
        return Err(Error::InvalidInput("training images differ in size".into()));
    }
    let all = anchors(&shapes, w, h);
    // Crops per shape: (features, label).
    let per_image: Vec<Vec<(usize, [f64; N_FEATURES], bool)>> = images
        .par_iter()
        .enumerate()
        .map(|(n, t)| {
            let maps = FeatureMaps::new(&t.image);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (n as u64).wrapping_mul(0x9E37_79B9));
            let mut out = Vec::new();
            for s in 0..shapes.len() {
                let (mut pos, mut negs, mut hard) = (Vec::new(), Vec::new(), Vec::new());
                for a in all.iter().filter(|a| a.shape == s) {
                    let v = t
                        .gt
                        .map_or(0.0, |g| iou(&a.det_box(0.0), &DetBox::from_pixel_box(&g, 0.0)));
                    if v >= cfg.pos_iou {
                        pos.push(a);
                    } else if v < cfg.neg_iou {
                        negs.push(a);
                        if v >= cfg.hard_iou {
                            hard.push(a);
                        }
                    }
                }
                hard.shuffle(&mut rng);
                for a in hard.into_iter().take(cfg.hard_per_image) {
                    out.push((s, maps.features(a), false));
                }
                pos.shuffle(&mut rng);
                for a in pos.into_iter().take(cfg.pos_per_image) {
                    out.push((s, maps.features(a), true));
                }
                negs.shuffle(&mut rng);
                for a in negs.into_iter().take(cfg.neg_per_image) {
                    out.push((s, maps.features(a), false));
                }
            }
            out
        })
        .collect();
    let crops: Vec<_> = per_image.into_iter().flatten().collect();
    let positives = crops.iter().filter(|c| c.2).count();
    let negatives = crops.len() - positives;
    if positives < 200 || negatives < 200 {
        return Err(Error::InvalidInput(format!(
            "need at least 200 positive and 200 negative crops, got {positives} and {negatives}"
        )));
    }
    // Standardize with statistics over all crops.
    let n = crops.len() as f64;
    let mut mean = vec![0.0; N_FEATURES];
    for c in &crops {
        for k in 0..N_FEATURES {
            mean[k] += c.1[k] / n;
        }
    }
    let mut scale = vec![0.0; N_FEATURES];
    for c in &crops {
        for k in 0..N_FEATURES {
            scale[k] += (c.1[k] - mean[k]).powi(2) / n;
        }
    }
    let scale: Vec<f64> = scale.iter().map(|v| v.sqrt().max(1e-6)).collect();
    let mut model = SurrogateModel {
        shapes: shapes.clone(),
        weights: Vec::new(),
        bias: Vec::new(),
        feature_mean: mean.clone(),
        feature_scale: scale.clone(),
    };
    let mut accuracy = Vec::new();
    for s in 0..shapes.len() {
        let (xs, ys): (Vec<Vec<f64>>, Vec<bool>) = crops
            .iter()
            .filter(|c| c.0 == s)
            .map(|c| {
                let x = (0..N_FEATURES).map(|k| (c.1[k] - mean[k]) / scale[k]).collect();
                (x, c.2)
            })
            .unzip();
        if !ys.iter().any(|&y| y) || ys.iter().all(|&y| y) {
            return Err(Error::Training(format!(
                "anchor shape {s} has crops of only one class"
            )));
        }
        let (fit, acc) = fit_logistic_checked(&xs, &ys, cfg.l2, cfg.min_accuracy, cfg.seed)?;
        model.weights.push(fit.weights);
        model.bias.push(fit.bias);
        accuracy.push(acc);
    }
    Ok((
        model,
        SurrogateReport {
            positives,
            negatives,
            accuracy,
        },
    ))
}
