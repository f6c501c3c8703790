//! The optimization loop: adaptive viewing angles, per-image augmentation,
//! detection and concentration losses, Adam updates, evaluation and the
//! augmentation ablation.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_color_model, apply_color_model_backward, ColorModel};
use crate::detect::{det_loss, surrogate_backward, surrogate_detect, DetBox, EvalSpec, SurrogateModel, TAU_IOUS};
use crate::error::{Error, Result};
use crate::render::{alpha_box, composite, ring_angles, Image, Placement, PlacementRanges, Shaded};
use crate::scene::{AugStrategy, SceneAssets};
use crate::texture::{ControlPoints, Rgb, TexParams, TextureGenerator};
use crate::warp::Preset;

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub epochs: usize,
    /// Adam rate for control points, in units of the texture size.
    pub lr_points: f64,
    /// Adam rate for the trainable Gumbel seeds.
    pub lr_seeds: f64,
    /// Gumbel-softmax temperature while training.
    pub tau: f64,
    /// Fixed-seed share of the Gumbel mixture.
    pub lambda: f64,
    pub preset: Preset,
    pub strategy: AugStrategy,
    pub alpha_con: f64,
    /// Concentration length scale in texels; `None` is 10% of the width.
    pub sigma_con: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub ring_size: usize,
    pub angle_decay: f64,
    /// Softmax temperature as a fraction of the angle-score range.
    pub angle_temp: f64,
    /// Checkpoint period in epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            lr_points: 0.001,
            lr_seeds: 0.01,
            tau: 0.3,
            lambda: 0.7,
            preset: Preset::Mild,
            strategy: AugStrategy::AugTpsTopo,
            alpha_con: 0.01,
            sigma_con: None,
            batch_size: 8,
            seed: 0,
            ring_size: 37,
            angle_decay: 0.9,
            angle_temp: 0.1,
            checkpoint_every: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.ring_size == 0 {
            return Err(Error::Validation("batch size and ring size must be >= 1".into()));
        }
        // Zero rates are allowed: they freeze the parameters.
        for (n, v) in [("lr_points", self.lr_points), ("lr_seeds", self.lr_seeds), ("alpha_con", self.alpha_con)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{n} = {v} must be finite and >= 0")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Validation(format!("tau = {} must be > 0", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!("lambda = {} outside [0, 1]", self.lambda)));
        }
        if let Some(s) = self.sigma_con {
            if !(s > 0.0) {
                return Err(Error::Validation(format!("sigma_con = {s} must be > 0")));
            }
        }
        if !(0.0..1.0).contains(&self.angle_decay) || !(self.angle_temp > 0.0) {
            return Err(Error::Validation("angle decay must be in [0, 1) and temperature > 0".into()));
        }
        Ok(())
    }

    /// Settings for the 300-epoch desk-scale run: the published defaults
    /// except a ten times larger control-point rate, since a small background
    /// set gives far fewer optimizer steps per epoch.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 300,
            lr_points: 0.01,
            ..Self::default()
        }
    }

    pub fn sigma(&self, tex_width: usize) -> f64 {
        self.sigma_con.unwrap_or(0.1 * tex_width as f64)
    }
}

/// Sum over colors of `exp(-|b_k1 - b_k2|^2 / sigma^2)` over same-color pairs,
/// with its gradient per control point.
pub fn concentration_loss(cp: &ControlPoints, sigma: f64) -> Result<(f64, Vec<[f64; 2]>)> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma = {sigma} must be > 0")));
    }
    let s2 = sigma * sigma;
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 2]; cp.coords.len()];
    for c in 0..cp.n_colors {
        let base = c * cp.n_points;
        for a in 0..cp.n_points {
            for b in a + 1..cp.n_points {
                let (pa, pb) = (cp.coords[base + a], cp.coords[base + b]);
                let d = [pa[0] - pb[0], pa[1] - pb[1]];
                let e = (-(d[0] * d[0] + d[1] * d[1]) / s2).exp();
                loss += e;
                for k in 0..2 {
                    let g = -2.0 * d[k] / s2 * e;
                    grad[base + a][k] += g;
                    grad[base + b][k] -= g;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// `L_det + alpha_con * L_con`.
pub fn total_loss(det: f64, con: f64, alpha_con: f64) -> f64 {
    det + alpha_con * con
}

/// Adaptive viewing-angle sampler: softmax over running mean confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSampler {
    pub angles: Vec<f64>,
    pub scores: Vec<f64>,
    pub decay: f64,
    /// Temperature as a fraction of the score range.
    pub temp: f64,
}

impl AngleSampler {
    pub fn new(ring_size: usize, decay: f64, temp: f64) -> Self {
        Self {
            angles: ring_angles(ring_size),
            scores: vec![0.0; ring_size],
            decay,
            temp,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let hi = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let t = self.temp * (hi - lo);
        let n = self.scores.len();
        if !(t > 0.0) {
            return vec![1.0 / n as f64; n];
        }
        let w: Vec<f64> = self.scores.iter().map(|s| ((s - hi) / t).exp()).collect();
        let sum: f64 = w.iter().sum();
        w.iter().map(|v| v / sum).collect()
    }

    /// Index of a sampled angle.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let p = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// Exponential moving average with an observed confidence.
    pub fn update(&mut self, idx: usize, conf: f64) {
        self.scores[idx] = self.decay * self.scores[idx] + (1.0 - self.decay) * conf;
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One rendered, composited and detected image.
pub struct SceneImage {
    pub shaded: Shaded,
    pub composite: crate::render::Composite,
    pub gt: DetBox,
    pub boxes: Vec<DetBox>,
    pub selected: Option<usize>,
    pub conf: f64,
}

/// Composites a shaded render with the given texels onto a background at a
/// random placement and runs the surrogate.
pub fn detect_view<R: Rng + ?Sized>(
    shaded: Shaded,
    texels: &[Rgb],
    background: &Image,
    surrogate: &SurrogateModel,
    rng: &mut R,
) -> Result<SceneImage> {
    let fg = shaded.apply(texels);
    let fg_size = (shaded.width, shaded.height);
    let fg_box = alpha_box(&shaded.alpha, shaded.width)
        .ok_or_else(|| Error::Validation("the person is not visible".into()))?;
    let placement = Placement::sample(rng, &PlacementRanges::default(), &fg_box, (background.width, background.height))?;
    let comp = composite(&fg, &shaded.alpha, fg_size, background, &placement)?;
    let det = surrogate_detect(surrogate, &comp.image)?;
    let gt = DetBox::from_pixel_box(&comp.gt, 1.0);
    let (conf, selected) = det_loss(&det.boxes, &gt);
    Ok(SceneImage {
        shaded,
        composite: comp,
        gt,
        boxes: det.boxes,
        selected,
        conf,
    })
}

/// Gradient of the selected confidence with respect to the texels.
pub fn view_backward(img: &SceneImage, surrogate: &SurrogateModel, n_texels: usize) -> Result<Vec<Rgb>> {
    let mut d_tex = vec![[0.0; 3]; n_texels];
    let Some(sel) = img.selected else { return Ok(d_tex) };
    let det = crate::detect::Detections {
        boxes: img.boxes.clone(),
        anchors: crate::detect::anchors(&surrogate.shapes, img.composite.image.width, img.composite.image.height),
    };
    let d_img = surrogate_backward(surrogate, &img.composite.image, &det, &[(sel, 1.0)]);
    let mut d_fg = vec![[0.0; 3]; img.shaded.width * img.shaded.height];
    img.composite.backward(&d_img, &mut d_fg);
    img.shaded.backward(&d_fg, &mut d_tex);
    Ok(d_tex)
}

/// Per-epoch metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Mean selected-box confidence over the epoch's images.
    pub mean_conf: f64,
    pub l_con: f64,
    /// Mean per-step total loss.
    pub loss: f64,
}

/// Result of [`optimize`].
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub params: TexParams,
    pub trace: Vec<EpochTrace>,
    pub sampler: AngleSampler,
}

fn print_texels(model: Option<&ColorModel>, texels: &[Rgb]) -> Vec<Rgb> {
    match model {
        Some(m) => apply_color_model(m, texels),
        None => texels.to_vec(),
    }
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // SplitMix-style finalizer; keeps per-item streams independent.
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Optimizes texture parameters against the surrogate. Each epoch is one
/// shuffled pass over `backgrounds` in batches. `checkpoint(epoch, params)`
/// runs every `cfg.checkpoint_every` epochs and before aborting on a
/// non-finite loss.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    cfg: &AttackConfig,
    generator: &TextureGenerator,
    init: TexParams,
    assets: &SceneAssets,
    surrogate: &SurrogateModel,
    backgrounds: &[Image],
    color_model: Option<&ColorModel>,
    mut checkpoint: impl FnMut(usize, &TexParams) -> Result<()>,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    surrogate.validate()?;
    init.validate()?;
    let s = &generator.settings;
    if (init.control.width, init.control.height) != (s.width, s.height)
        || (s.width, s.height) != assets.tex_size
    {
        return Err(Error::Validation(format!(
            "texture sizes disagree: params {}x{}, generator {}x{}, scene {}x{}",
            init.control.width, init.control.height, s.width, s.height, assets.tex_size.0, assets.tex_size.1
        )));
    }
    if backgrounds.is_empty() {
        return Err(Error::Validation("no training backgrounds".into()));
    }
    let mut params = init;
    params.gumbel.lambda = cfg.lambda;
    let intensity = cfg.preset.intensity();
    let sigma = cfg.sigma(s.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = AngleSampler::new(cfg.ring_size, cfg.angle_decay, cfg.angle_temp);
    let n_pts = params.control.coords.len();
    let mut adam_pts = Adam::new(2 * n_pts);
    let mut adam_seeds = Adam::new(params.gumbel.u_train.len());
    let scale = [s.width as f64, s.height as f64];
    let n_texels = s.width * s.height;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..backgrounds.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut conf_sum, mut n_img, mut loss_sum, mut n_steps, mut l_con_last) = (0.0, 0usize, 0.0, 0usize, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let fwd = generator.soft_forward(&params, cfg.tau)?;
            let texels = &fwd.texture.pixels;
            let printed = print_texels(color_model, texels);
            // Draw angles and per-item seeds sequentially for determinism.
            let items: Vec<(usize, usize, u64)> = batch
                .iter()
                .map(|&bg| (bg, sampler.sample(&mut rng), rng.random::<u64>()))
                .collect();
            let results: Vec<Result<(usize, f64, Vec<Rgb>)>> = items
                .par_iter()
                .map(|&(bg, ai, seed)| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let shaded = assets.render_augmented(sampler.angles[ai], cfg.strategy, &intensity, &mut r)?;
                    let view = detect_view(shaded, &printed, &backgrounds[bg], surrogate, &mut r)?;
                    let d = view_backward(&view, surrogate, n_texels)?;
                    Ok((ai, view.conf, d))
                })
                .collect();
            let mut l_det = 0.0;
            let mut d_printed = vec![[0.0; 3]; n_texels];
            for r in results {
                let (ai, conf, d) = r?;
                l_det += conf;
                sampler.update(ai, conf);
                conf_sum += conf;
                n_img += 1;
                for (a, b) in d_printed.iter_mut().zip(&d) {
                    for c in 0..3 {
                        a[c] += b[c];
                    }
                }
            }
            let (l_con, g_con) = concentration_loss(&params.control, sigma)?;
            let loss = total_loss(l_det, l_con, cfg.alpha_con);
            if !loss.is_finite() {
                checkpoint(epoch, &params)?;
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += loss;
            n_steps += 1;
            l_con_last = l_con;
            let d_tex = match color_model {
                Some(m) => apply_color_model_backward(m, texels, &d_printed),
                None => d_printed,
            };
            let grad = generator.soft_backward(&params, &fwd, &d_tex)?;
            // Control points live in texels; Adam works on size-normalized
            // coordinates.
            let mut x: Vec<f64> = Vec::with_capacity(2 * n_pts);
            let mut g: Vec<f64> = Vec::with_capacity(2 * n_pts);
            for (p, (gd, gc)) in params.control.coords.iter().zip(grad.coords.iter().zip(&g_con)) {
                for k in 0..2 {
                    x.push(p[k] / scale[k]);
                    g.push((gd[k] + cfg.alpha_con * gc[k]) * scale[k]);
                }
            }
            adam_pts.step(&mut x, &g, cfg.lr_points);
            for (i, p) in params.control.coords.iter_mut().enumerate() {
                for k in 0..2 {
                    p[k] = x[2 * i + k] * scale[k];
                }
            }
            adam_seeds.step(&mut params.gumbel.u_train, &grad.u_train, cfg.lr_seeds);
            params.gumbel.clamp_train();
        }
        trace.push(EpochTrace {
            epoch,
            mean_conf: conf_sum / n_img as f64,
            l_con: l_con_last,
            loss: loss_sum / n_steps as f64,
        });
        log::debug!("epoch {epoch}: mean conf {:.4}", conf_sum / n_img as f64);
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoint(epoch, &params)?;
        }
    }
    Ok(AttackOutcome {
        params,
        trace,
        sampler,
    })
}

/// Evaluation protocol: every ring angle is rendered `per_angle` times on
/// held-out backgrounds with both deformations at `preset`. The random
/// stream depends only on `seed`, angle and repeat, so different textures
/// see identical lights, deformations and placements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ring_size: usize,
    pub per_angle: usize,
    pub preset: Preset,
    pub tau_conf: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ring_size: 37,
            per_angle: 4,
            preset: Preset::None,
            tau_conf: 0.5,
            seed: 0,
        }
    }
}

/// Outcome of one evaluation image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRecord {
    pub angle: f64,
    pub repeat: usize,
    pub background: usize,
    /// Confidence of the max-IoU box.
    pub selected_conf: f64,
    /// Highest confidence among boxes passing each IoU threshold of
    /// [`TAU_IOUS`] (0 when none pass).
    pub max_conf: [f64; 4],
}

/// Evaluation result with summary helpers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub tau_conf: f64,
}

impl EvalReport {
    pub fn mean_conf(&self) -> f64 {
        self.records.iter().map(|r| r.selected_conf).sum::<f64>() / self.records.len().max(1) as f64
    }

    fn tau_index(tau_iou: f64) -> Result<usize> {
        TAU_IOUS
            .iter()
            .position(|&t| t == tau_iou)
            .ok_or_else(|| Error::Domain(format!("tau_iou {tau_iou} is not one of {TAU_IOUS:?}")))
    }

    /// ASR over all records at an IoU threshold.
    pub fn asr(&self, tau_iou: f64) -> Result<f64> {
        let k = Self::tau_index(tau_iou)?;
        let wins = self.records.iter().filter(|r| r.max_conf[k] < self.tau_conf).count();
        Ok(wins as f64 / self.records.len().max(1) as f64)
    }

    /// Per-angle `(angle, asr, mean conf)`.
    pub fn per_angle(&self, tau_iou: f64) -> Result<Vec<(f64, f64, f64)>> {
        let k = Self::tau_index(tau_iou)?;
        let mut out: Vec<(f64, usize, usize, f64)> = Vec::new();
        for r in &self.records {
            if out.last().is_none_or(|o| o.0 != r.angle) {
                out.push((r.angle, 0, 0, 0.0));
            }
            let o = out.last_mut().expect("just pushed");
            o.1 += 1;
            o.2 += usize::from(r.max_conf[k] < self.tau_conf);
            o.3 += r.selected_conf;
        }
        Ok(out
            .into_iter()
            .map(|(a, n, w, c)| (a, w as f64 / n as f64, c / n as f64))
            .collect())
    }
}

/// Renders the evaluation set for a (discrete) texture.
pub fn evaluate(
    assets: &SceneAssets,
    surrogate: &SurrogateModel,
    texels: &[Rgb],
    color_model: Option<&ColorModel>,
    backgrounds: &[Image],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if backgrounds.is_empty() || cfg.per_angle == 0 || cfg.ring_size == 0 {
        return Err(Error::Validation("evaluation needs backgrounds, angles and repeats".into()));
    }
    let spec = EvalSpec {
        tau_iou: TAU_IOUS[0],
        tau_conf: cfg.tau_conf,
        ring_size: cfg.ring_size,
    };
    spec.validate()?;
    let printed = print_texels(color_model, texels);
    let angles = ring_angles(cfg.ring_size);
    let jobs: Vec<(usize, usize)> = (0..angles.len())
        .flat_map(|a| (0..cfg.per_angle).map(move |r| (a, r)))
        .collect();
    let records: Vec<Result<EvalRecord>> = jobs
        .par_iter()
        .map(|&(a, rep)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, (a * 100_003 + rep) as u64));
            let background = (a * cfg.per_angle + rep) % backgrounds.len();
            let shaded = assets.render_eval(angles[a], cfg.preset, &mut rng)?;
            let view = detect_view(shaded, &printed, &backgrounds[background], surrogate, &mut rng)?;
            let mut max_conf = [0.0; 4];
            for (k, &t) in TAU_IOUS.iter().enumerate() {
                max_conf[k] = view
                    .boxes
                    .iter()
                    .filter(|b| crate::detect::iou(b, &view.gt) >= t)
                    .map(|b| b.conf)
                    .fold(0.0, f64::max);
            }
            Ok(EvalRecord {
                angle: angles[a],
                repeat: rep,
                background,
                selected_conf: view.conf,
                max_conf,
            })
        })
        .collect();
    Ok(EvalReport {
        records: records.into_iter().collect::<Result<_>>()?,
        tau_conf: cfg.tau_conf,
    })
}

/// Central-difference check of an analytic gradient on selected
/// coordinates. Returns the largest `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    floor: f64,
) -> Result<f64> {
    let steps: Vec<(usize, f64)> = indices.iter().map(|&i| (i, h)).collect();
    grad_check_steps(f, x, analytic, &steps, floor)
}

/// [`grad_check`] with a step per coordinate.
pub fn grad_check_steps(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    steps: &[(usize, f64)],
    floor: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for &(i, h) in steps {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("step h = {h} must be > 0")));
        }
        let x0 = xp[i];
        xp[i] = x0 + h;
        let fp = f(&xp)?;
        xp[i] = x0 - h;
        let fm = f(&xp)?;
        xp[i] = x0;
        let num = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Flattens texture parameters (control points, then trainable seeds).
pub fn flatten_params(p: &TexParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.control.coords.iter().flat_map(|c| [c[0], c[1]]).collect();
    v.extend_from_slice(&p.gumbel.u_train);
    v
}

/// Inverse of [`flatten_params`] on a template.
pub fn unflatten_params(template: &TexParams, v: &[f64]) -> TexParams {
    let mut p = template.clone();
    let n = p.control.coords.len();
    for (i, c) in p.control.coords.iter_mut().enumerate() {
        *c = [v[2 * i], v[2 * i + 1]];
    }
    p.gumbel.u_train.copy_from_slice(&v[2 * n..]);
    p
}

/// One ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationCell {
    pub strategy: AugStrategy,
    pub preset: Preset,
    pub asr: f64,
    pub mean_conf: f64,
}

/// Trains one texture per augmentation strategy (same init and seed) and
/// evaluates each under every deformation preset.
#[allow(clippy::too_many_arguments)]
pub fn ablation(
    cfg: &AttackConfig,
    generator: &TextureGenerator,
    init: &TexParams,
    assets: &SceneAssets,
    surrogate: &SurrogateModel,
    train_backgrounds: &[Image],
    eval_backgrounds: &[Image],
    color_model: Option<&ColorModel>,
    eval: &EvalConfig,
    tau_iou: f64,
) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::new();
    for strategy in AugStrategy::ALL {
        let c = AttackConfig { strategy, ..cfg.clone() };
        let out = optimize(&c, generator, init.clone(), assets, surrogate, train_backgrounds, color_model, |_, _| Ok(()))?;
        let tex = generator.hard(&out.params)?;
        for preset in Preset::ALL {
            let e = EvalConfig { preset, ..*eval };
            let rep = evaluate(assets, surrogate, &tex.pixels, color_model, eval_backgrounds, &e)?;
            cells.push(AblationCell {
                strategy,
                preset,
                asr: rep.asr(tau_iou)?,
                mean_conf: rep.mean_conf(),
            });
        }
    }
    Ok(cells)
}

/// Person renders (random camouflage textures, random angles, lights and
/// deformation presets) composited on `backgrounds`, plus the plain
/// backgrounds as person-free images.
pub fn surrogate_training_images(
    assets: &SceneAssets,
    generator: &TextureGenerator,
    backgrounds: &[Image],
    n_person: usize,
    seed: u64,
) -> Result<Vec<crate::detect::TrainImage>> {
    if backgrounds.is_empty() {
        return Err(Error::Validation("no backgrounds".into()));
    }
    let jobs: Vec<Result<crate::detect::TrainImage>> = (0..n_person)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let params = generator.init_params(&mut rng);
            let tex = generator.hard(&params)?;
            let angle = rng.random_range(-180.0..180.0);
            let preset = Preset::ALL[rng.random_range(0..Preset::ALL.len())];
            let shaded = assets.render_eval(angle, preset, &mut rng)?;
            let bg = &backgrounds[i % backgrounds.len()];
            let view = detect_view_plain(shaded, &tex.pixels, bg, &mut rng)?;
            Ok(view)
        })
        .collect();
    let mut out: Vec<_> = jobs.into_iter().collect::<Result<_>>()?;
    out.extend(backgrounds.iter().map(|b| crate::detect::TrainImage {
        image: b.clone(),
        gt: None,
    }));
    Ok(out)
}

fn detect_view_plain<R: Rng + ?Sized>(
    shaded: Shaded,
    texels: &[Rgb],
    background: &Image,
    rng: &mut R,
) -> Result<crate::detect::TrainImage> {
    let fg = shaded.apply(texels);
    let fg_box = alpha_box(&shaded.alpha, shaded.width)
        .ok_or_else(|| Error::Validation("the person is not visible".into()))?;
    let placement = Placement::sample(rng, &PlacementRanges::default(), &fg_box, (background.width, background.height))?;
    let comp = composite(&fg, &shaded.alpha, (shaded.width, shaded.height), background, &placement)?;
    Ok(crate::detect::TrainImage {
        image: comp.image,
        gt: Some(comp.gt),
    })
}

/// Indices of `n` random parameters of `p` (half control-point coordinates,
/// half trainable seeds) whose seeds sit at least `margin` from the clamps.
pub fn sample_check_indices<R: Rng + ?Sized>(p: &TexParams, n: usize, margin: f64, rng: &mut R) -> Vec<usize> {
    let n_coords = 2 * p.control.coords.len();
    let lo = crate::texture::U_CLAMP + margin;
    let seeds: Vec<usize> = p
        .gumbel
        .u_train
        .iter()
        .enumerate()
        .filter(|(_, &u)| u > lo && u < 1.0 - lo)
        .map(|(i, _)| n_coords + i)
        .collect();
    let mut coords: Vec<usize> = (0..n_coords).collect();
    coords.shuffle(rng);
    let mut out: Vec<usize> = coords.into_iter().take(n / 2).collect();
    out.extend(seeds.choose_multiple(rng, n - out.len()).copied());
    out
}

/// Finite-difference steps: control points live in texels, seeds in (0, 1).
/// The Gumbel transform is strongly curved near the seed clamps, so a seed's
/// step also shrinks to a thousandth of its distance from the nearer clamp.
pub const FD_STEP_POINTS: f64 = 1e-4;
pub const FD_STEP_SEEDS: f64 = 1e-5;

/// Relative-error floor as a fraction of the largest checked gradient
/// entry: below it, central differences measure roundoff rather than slope.
pub const FD_FLOOR: f64 = 1e-4;
/// Looser floor through render and surrogate, where the edge features and
/// the jitter clamp add curvature that swamps the tiniest components.
pub const FD_FLOOR_END_TO_END: f64 = 1e-3;

fn check_split(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    n_coords: usize,
    rel_floor: f64,
) -> Result<f64> {
    let scale = indices.iter().map(|&i| analytic[i].abs()).fold(0.0, f64::max);
    let floor = (rel_floor * scale).max(f64::MIN_POSITIVE);
    let steps: Vec<(usize, f64)> = indices
        .iter()
        .map(|&i| {
            if i < n_coords {
                (i, FD_STEP_POINTS)
            } else {
                let u = x[i];
                let room = (u - crate::texture::U_CLAMP).min(1.0 - crate::texture::U_CLAMP - u);
                (i, FD_STEP_SEEDS.min(1e-3 * room))
            }
        })
        .collect();
    grad_check_steps(f, x, analytic, &steps, floor)
}

fn flatten_grad(g: &crate::texture::TexParamsGrad) -> Vec<f64> {
    let mut v: Vec<f64> = g.coords.iter().flat_map(|c| [c[0], c[1]]).collect();
    v.extend_from_slice(&g.u_train);
    v
}

/// Gradient check of the texture generator alone: the functional is a fixed
/// random linear form of the soft texture at temperature `tau`.
pub fn texture_grad_check(generator: &TextureGenerator, tau: f64, n_params: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = generator.init_params(&mut rng);
    let s = &generator.settings;
    let w: Vec<Rgb> = (0..s.width * s.height)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let f = |x: &[f64]| -> Result<f64> {
        let p = unflatten_params(&params, x);
        let t = generator.soft_forward(&p, tau)?.texture;
        Ok(t.pixels.iter().zip(&w).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum())
    };
    let fwd = generator.soft_forward(&params, tau)?;
    let analytic = flatten_grad(&generator.soft_backward(&params, &fwd, &w)?);
    let x = flatten_params(&params);
    let idx = sample_check_indices(&params, n_params, 10.0 * FD_STEP_SEEDS, &mut rng);
    check_split(f, &x, &analytic, &idx, 2 * params.control.coords.len(), FD_FLOOR)
}

/// Anchor shapes for 64 x 64 check renders.
pub fn small_shapes() -> Vec<crate::detect::AnchorShape> {
    [(12, 42), (15, 48), (18, 54)]
        .into_iter()
        .map(|(width, height)| crate::detect::AnchorShape { width, height, stride: 2 })
        .collect()
}

/// End-to-end gradient check at 64 x 64: soft texture, mannequin render
/// with a fixed light, placement and jitter, a random-weight surrogate with
/// small anchors, and the selected-box confidence as the loss. The selected
/// box is held fixed, as in training.
pub fn end_to_end_grad_check(n_params: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = crate::render::CameraRig {
        width: 64,
        image_height: 64,
        ..Default::default()
    };
    let assets = SceneAssets::new(crate::scene::mannequin()?, rig, (32, 32))?;
    let settings = crate::texture::SynthSettings {
        width: 32,
        height: 32,
        n_points: 8,
        ..Default::default()
    };
    let generator = TextureGenerator::new(crate::texture::Palette::woodland(), settings)?;
    let params = generator.init_params(&mut rng);
    let mut model = SurrogateModel::zeros(small_shapes());
    for w in model.weights.iter_mut() {
        for v in w.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
    }
    let shaded = assets.render_augmented(25.0, AugStrategy::AugTpsTopo, &Preset::Mild.intensity(), &mut rng)?;
    let background = crate::scene::background(&mut rng, 64, 64);
    let tex0 = generator.soft_forward(&params, 0.3)?;
    let view = detect_view(shaded, &tex0.texture.pixels, &background, &model, &mut rng)?;
    let sel = view
        .selected
        .ok_or_else(|| Error::Validation("no box overlaps the person".into()))?;
    let placement = view.composite.placement;
    let f = |x: &[f64]| -> Result<f64> {
        let p = unflatten_params(&params, x);
        let t = generator.soft_forward(&p, 0.3)?.texture;
        let fg = view.shaded.apply(&t.pixels);
        let comp = composite(&fg, &view.shaded.alpha, (64, 64), &background, &placement)?;
        Ok(surrogate_detect(&model, &comp.image)?.boxes[sel].conf)
    };
    let d_tex = view_backward(&view, &model, 32 * 32)?;
    let analytic = flatten_grad(&generator.soft_backward(&params, &tex0, &d_tex)?);
    let x = flatten_params(&params);
    // Seeds of texels the camera never sees have zero gradient; check the
    // visible ones.
    let n_coords = 2 * params.control.coords.len();
    let visible: Vec<usize> = (n_coords..x.len()).filter(|&i| analytic[i] != 0.0).collect();
    let mut idx = sample_check_indices(&params, n_params, 10.0 * FD_STEP_SEEDS, &mut rng);
    idx.retain(|&i| i < n_coords);
    let lo = crate::texture::U_CLAMP + 10.0 * FD_STEP_SEEDS;
    let usable: Vec<usize> = visible.into_iter().filter(|&i| x[i] > lo && x[i] < 1.0 - lo).collect();
    idx.extend(usable.choose_multiple(&mut rng, n_params - idx.len()).copied());
    check_split(f, &x, &analytic, &idx, n_coords, FD_FLOOR_END_TO_END)
}
