//! Polynomial color calibration from digital RGB to printed RGB.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::Rgb;

/// Ridge added to the normal equations.
pub const RIDGE: f64 = 1e-10;
/// Default number of random partitions for degree selection.
pub const DEFAULT_SPLITS: usize = 20;

/// A digital color and its measured (printed) counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPair {
    pub digital: Rgb,
    pub measured: Rgb,
}

impl ColorPair {
    pub fn validate(&self) -> Result<()> {
        for v in self.digital.iter().chain(&self.measured) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidInput(format!(
                    "color channel {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform `n`^3 lattice over the RGB cube, red varying slowest.
pub fn make_palette(n: usize) -> Result<Vec<Rgb>> {
    if n < 2 {
        return Err(Error::Domain(format!("palette needs n >= 2 per channel, got {n}")));
    }
    let s = |i: usize| i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n * n);
    for r in 0..n {
        for g in 0..n {
            for b in 0..n {
                out.push([s(r), s(g), s(b)]);
            }
        }
    }
    Ok(out)
}

/// Exponents `(a1, a2, a3)` with `a1 + a2 + a3 <= d`, by total degree then
/// lexicographically descending in `a1`.
pub fn monomials(d: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for total in 0..=d {
        for a1 in (0..=total).rev() {
            for a2 in (0..=total - a1).rev() {
                out.push([a1, a2, total - a1 - a2]);
            }
        }
    }
    out
}

/// Number of monomials of total degree at most `d` in three variables.
pub fn monomial_count(d: u32) -> usize {
    let d = d as usize;
    (d + 1) * (d + 2) * (d + 3) / 6
}

fn powers(x: f64, d: u32) -> Vec<f64> {
    let mut p = Vec::with_capacity(d as usize + 1);
    let mut v = 1.0;
    for _ in 0..=d {
        p.push(v);
        v *= x;
    }
    p
}

fn features(x: Rgb, exps: &[[u32; 3]], d: u32) -> Vec<f64> {
    let p = [powers(x[0], d), powers(x[1], d), powers(x[2], d)];
    exps.iter()
        .map(|e| p[0][e[0] as usize] * p[1][e[1] as usize] * p[2][e[2] as usize])
        .collect()
}

/// Per-channel polynomial in the digital color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorModel {
    pub degree: u32,
    /// Coefficients per output channel, in [`monomials`] order.
    pub coeffs: [Vec<f64>; 3],
}

impl ColorModel {
    pub fn identity() -> Self {
        let exps = monomials(1);
        let mut coeffs = [vec![0.0; exps.len()], vec![0.0; exps.len()], vec![0.0; exps.len()]];
        for (c, row) in coeffs.iter_mut().enumerate() {
            let mut e = [0u32; 3];
            e[c] = 1;
            let k = exps.iter().position(|x| *x == e).expect("linear monomial");
            row[k] = 1.0;
        }
        Self { degree: 1, coeffs }
    }

    pub fn constant(c: Rgb) -> Self {
        Self {
            degree: 0,
            coeffs: [vec![c[0]], vec![c[1]], vec![c[2]]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = monomial_count(self.degree);
        for (c, row) in self.coeffs.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Validation(format!(
                    "channel {c} has {} coefficients, degree {} needs {m}",
                    row.len(),
                    self.degree
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("channel {c} has non-finite coefficients")));
            }
        }
        Ok(())
    }

    /// Raw polynomial value (no clamping).
    pub fn eval_raw(&self, x: Rgb) -> Rgb {
        let f = features(x, &monomials(self.degree), self.degree);
        self.coeffs
            .each_ref()
            .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum())
    }

    /// Prediction clamped to [0, 1].
    pub fn predict(&self, x: Rgb) -> Rgb {
        self.eval_raw(x).map(|v| v.clamp(0.0, 1.0))
    }
}

/// Least squares per output channel through the ridge-regularized normal
/// equations.
pub fn fit_color_model(pairs: &[ColorPair], d: u32) -> Result<ColorModel> {
    let exps = monomials(d);
    let m = exps.len();
    if pairs.len() < m {
        return Err(Error::InvalidInput(format!(
            "degree {d} needs at least {m} pairs, got {}",
            pairs.len()
        )));
    }
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, 3);
    for p in pairs {
        let f = features(p.digital, &exps, d);
        for i in 0..m {
            for j in i..m {
                gram[(i, j)] += f[i] * f[j];
            }
            for c in 0..3 {
                rhs[(i, c)] += f[i] * p.measured[c];
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
        gram[(i, i)] += RIDGE;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("degree {d} design is rank deficient")))?;
    let sol = chol.solve(&rhs);
    let coeffs = [0, 1, 2].map(|c| sol.column(c).iter().copied().collect::<Vec<_>>());
    let model = ColorModel { degree: d, coeffs };
    model
        .validate()
        .map_err(|_| Error::Numeric(format!("degree {d} fit produced non-finite coefficients")))?;
    Ok(model)
}

/// Mean squared error over pairs and channels of the clamped prediction.
pub fn mse(model: &ColorModel, pairs: &[ColorPair]) -> f64 {
    let exps = monomials(model.degree);
    let mut sum = 0.0;
    for p in pairs {
        let f = features(p.digital, &exps, model.degree);
        for c in 0..3 {
            let y: f64 = model.coeffs[c].iter().zip(&f).map(|(a, b)| a * b).sum();
            sum += (y.clamp(0.0, 1.0) - p.measured[c]).powi(2);
        }
    }
    sum / (3 * pairs.len().max(1)) as f64
}

/// Outcome of degree selection.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeSelection {
    pub degree: u32,
    /// Mean validation MSE per degree `0..=d_max` (infinite when a degree
    /// could not be fitted on a training half).
    pub val_mse: Vec<f64>,
}

/// Averages validation MSE over `splits` random 50/50 partitions for every
/// degree up to `d_max` and returns the minimizer; near-ties (relative 1e-9,
/// absolute 1e-15) go to the smaller degree.
pub fn select_degree<R: Rng + ?Sized>(
    pairs: &[ColorPair],
    d_max: u32,
    splits: usize,
    rng: &mut R,
) -> Result<DegreeSelection> {
    if splits == 0 {
        return Err(Error::Domain("splits must be >= 1".into()));
    }
    let mut sums = vec![0.0; d_max as usize + 1];
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..splits {
        idx.shuffle(rng);
        let half = pairs.len() / 2;
        let train: Vec<ColorPair> = idx[..half].iter().map(|&i| pairs[i]).collect();
        let val: Vec<ColorPair> = idx[half..].iter().map(|&i| pairs[i]).collect();
        for d in 0..=d_max {
            sums[d as usize] += match fit_color_model(&train, d) {
                Ok(m) => mse(&m, &val),
                Err(_) => f64::INFINITY,
            };
        }
    }
    let val_mse: Vec<f64> = sums.iter().map(|s| s / splits as f64).collect();
    let best = val_mse.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::InvalidInput("no degree could be fitted".into()));
    }
    let degree = val_mse
        .iter()
        .position(|&v| v <= best * (1.0 + 1e-9) + 1e-15)
        .expect("minimum exists") as u32;
    Ok(DegreeSelection { degree, val_mse })
}

/// Applies the model to every texel (clamped).
pub fn apply_color_model(model: &ColorModel, texels: &[Rgb]) -> Vec<Rgb> {
    let exps = monomials(model.degree);
    texels
        .iter()
        .map(|&x| {
            let f = features(x, &exps, model.degree);
            model
                .coeffs
                .each_ref()
                .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0))
        })
        .collect()
}

/// Vector-Jacobian product of [`apply_color_model`]: zero where the output
/// is clamped.
pub fn apply_color_model_backward(model: &ColorModel, texels: &[Rgb], d_out: &[Rgb]) -> Vec<Rgb> {
    let exps = monomials(model.degree);
    let d = model.degree;
    texels
        .iter()
        .zip(d_out)
        .map(|(&x, dy)| {
            let p = [powers(x[0], d), powers(x[1], d), powers(x[2], d)];
            let mut grad = [0.0; 3];
            for c in 0..3 {
                let mut y = 0.0;
                let mut dyx = [0.0; 3];
                for (a, e) in model.coeffs[c].iter().zip(&exps) {
                    let [e0, e1, e2] = e.map(|v| v as usize);
                    y += a * p[0][e0] * p[1][e1] * p[2][e2];
                    if e0 > 0 {
                        dyx[0] += a * e0 as f64 * p[0][e0 - 1] * p[1][e1] * p[2][e2];
                    }
                    if e1 > 0 {
                        dyx[1] += a * e1 as f64 * p[0][e0] * p[1][e1 - 1] * p[2][e2];
                    }
                    if e2 > 0 {
                        dyx[2] += a * e2 as f64 * p[0][e0] * p[1][e1] * p[2][e2 - 1];
                    }
                }
                if (0.0..=1.0).contains(&y) {
                    for k in 0..3 {
                        grad[k] += dy[c] * dyx[k];
                    }
                }
            }
            grad
        })
        .collect()
}

/// Chebyshev polynomial of the first kind on [0, 1] (argument remapped).
fn cheb(n: u32, x: f64) -> f64 {
    let t = 2.0 * x - 1.0;
    let (mut a, mut b) = (1.0, t);
    if n == 0 {
        return a;
    }
    for _ in 1..n {
        let c = 2.0 * t * b - a;
        a = b;
        b = c;
    }
    b
}

/// Built-in stand-in for a printer: a fixed degree-6 polynomial map with a
/// smooth tone curve, channel cross-talk and degree-6 detail, plus Gaussian
/// measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticPrinter {
    pub noise_sigma: f64,
}

impl Default for SyntheticPrinter {
    fn default() -> Self {
        Self { noise_sigma: 0.01 }
    }
}

impl SyntheticPrinter {
    /// Noise-free printed color.
    pub fn ideal(&self, x: Rgb) -> Rgb {
        let mix = [
            0.85 * x[0] + 0.1 * x[1] + 0.05 * x[2],
            0.08 * x[0] + 0.84 * x[1] + 0.08 * x[2],
            0.04 * x[0] + 0.12 * x[1] + 0.84 * x[2],
        ];
        let cross = cheb(2, x[0]) * cheb(2, x[1]) * cheb(2, x[2]);
        let sign = [1.0, -1.0, 0.5];
        [0, 1, 2].map(|c| {
            let m = mix[c];
            let tone = 0.55 * m + 0.45 * m * m;
            0.1 + 0.8 * tone + 0.025 * cheb(6, x[c]) + 0.02 * sign[c] * cross
        })
    }

    /// Measured pairs for the given digital colors.
    pub fn measure<R: Rng + ?Sized>(&self, colors: &[Rgb], rng: &mut R) -> Vec<ColorPair> {
        let normal = Normal::new(0.0, self.noise_sigma.max(0.0)).expect("valid sigma");
        colors
            .iter()
            .map(|&x| {
                let y = self.ideal(x);
                let measured = y.map(|v| {
                    let n = if self.noise_sigma > 0.0 { normal.sample(rng) } else { 0.0 };
                    (v + n).clamp(0.0, 1.0)
                });
                ColorPair { digital: x, measured }
            })
            .collect()
    }
}
