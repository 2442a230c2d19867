//! Total-variation regularized least squares, the classical un-trained
//! baseline.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitters::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::metrics::{evaluate, EvaluationMode, Normalization};
use crate::mriops::{
    adjoint_multicoil, coil_images, data_consistency, forward_multicoil, rss, CoilMeasurement, ComplexGrid, RealGrid,
    SensitivityMaps,
};

/// Regularization weights tried when tuning.
pub const LAMBDA_GRID: [f64; 3] = [1e-3, 1e-2, 1e-1];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvSolver {
    #[default]
    Adam,
    /// Fixed-step gradient descent.
    Gd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvConfig {
    pub lambda: f64,
    pub iterations: usize,
    /// Smoothing of the isotropic TV norm.
    pub eps: f64,
    pub stepsize: f64,
    #[serde(default)]
    pub solver: TvSolver,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            lambda: 1e-2,
            iterations: 500,
            eps: 1e-8,
            stepsize: 2e-3,
            solver: TvSolver::Adam,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!("eps {} must be positive", self.eps)));
        }
        if !(self.stepsize > 0.0) || !self.stepsize.is_finite() {
            return Err(Error::invalid(format!("stepsize {} must be positive", self.stepsize)));
        }
        Ok(())
    }
}

/// Forward differences along rows and columns, zero past the far edge.
fn differences(x: &ComplexGrid, r: usize, c: usize) -> (Complex64, Complex64) {
    let (h, w) = x.dims();
    let v = x.at(r, c);
    let dh = if c + 1 < w { x.at(r, c + 1) - v } else { Complex64::new(0.0, 0.0) };
    let dv = if r + 1 < h { x.at(r + 1, c) - v } else { Complex64::new(0.0, 0.0) };
    (dh, dv)
}

/// `sum_p sqrt(|D_h x|^2 + |D_v x|^2 + eps^2) - eps`.
pub fn tv_norm(x: &ComplexGrid, eps: f64) -> f64 {
    let (h, w) = x.dims();
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (dh, dv) = differences(x, r, c);
            total += (dh.norm_sqr() + dv.norm_sqr() + eps * eps).sqrt() - eps;
        }
    }
    total
}

/// Gradient of [`tv_norm`] with respect to the real and imaginary parts,
/// packed as `d/d re + i d/d im`.
pub fn tv_grad(x: &ComplexGrid, eps: f64) -> ComplexGrid {
    let (h, w) = x.dims();
    let mut g = ComplexGrid::zeros(h, w);
    let data = g.data_mut();
    for r in 0..h {
        for c in 0..w {
            let (dh, dv) = differences(x, r, c);
            let t = (dh.norm_sqr() + dv.norm_sqr() + eps * eps).sqrt();
            let (gh, gv) = (dh / t, dv / t);
            let p = r * w + c;
            data[p] -= gh + gv;
            if c + 1 < w {
                data[p + 1] += gh;
            }
            if r + 1 < h {
                data[p + w] += gv;
            }
        }
    }
    g
}

/// `½ sum_i ||y_i - M F S_i x||^2 + lambda tv_norm(x)`.
pub fn tv_objective(x: &ComplexGrid, y: &CoilMeasurement, maps: &SensitivityMaps, lambda: f64, eps: f64) -> Result<f64> {
    let ax = forward_multicoil(x, maps, y.mask())?;
    let data: f64 = ax
        .coils()
        .iter()
        .zip(y.coils())
        .map(|(a, b)| a.sub(b).map(|d| d.norm_sqr()))
        .sum::<Result<f64>>()?;
    Ok(0.5 * data + lambda * tv_norm(x, eps))
}

fn objective_grad(x: &ComplexGrid, y: &CoilMeasurement, maps: &SensitivityMaps, config: &TvConfig) -> Result<(f64, ComplexGrid)> {
    let ax = forward_multicoil(x, maps, y.mask())?;
    let residual: Vec<ComplexGrid> = ax.coils().iter().zip(y.coils()).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
    let data: f64 = residual.iter().map(ComplexGrid::norm_sqr).sum();
    let r = CoilMeasurement::new(residual, y.mask().clone())?;
    let mut g = adjoint_multicoil(&r, maps)?;
    let value = 0.5 * data + config.lambda * tv_norm(x, config.eps);
    if config.lambda > 0.0 {
        for (a, b) in g.data_mut().iter_mut().zip(tv_grad(x, config.eps).data()) {
            *a += config.lambda * b;
        }
    }
    Ok((value, g))
}

/// Minimizer output before the final data-consistency step.
#[derive(Clone, Debug)]
pub struct TvSolution {
    pub image: ComplexGrid,
    pub objective_trace: Vec<f64>,
}

/// Minimizes the TV objective over the complex image, starting from the
/// map-weighted combination of the zero-filled coil images.
pub fn tv_minimize(y: &CoilMeasurement, maps: &SensitivityMaps, config: &TvConfig) -> Result<TvSolution> {
    config.validate()?;
    let mut x = maps.combine(&coil_images(y))?;
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let n = x.data().len();
    let (mut m, mut v) = (vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]);
    for t in 0..config.iterations {
        let (value, g) = objective_grad(&x, y, maps, config)?;
        if !value.is_finite() || !g.is_finite() {
            return Err(Error::Divergence { iteration: t, loss: value });
        }
        trace.push(value);
        match config.solver {
            TvSolver::Gd => {
                for (xi, gi) in x.data_mut().iter_mut().zip(g.data()) {
                    *xi -= config.stepsize * gi;
                }
            }
            TvSolver::Adam => {
                let step = (t + 1) as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(step);
                let bc2 = 1.0 - ADAM_BETA2.powi(step);
                for ((xi, gi), (mi, vi)) in x.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut())) {
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                    *vi = Complex64::new(
                        ADAM_BETA2 * vi.re + (1.0 - ADAM_BETA2) * gi.re * gi.re,
                        ADAM_BETA2 * vi.im + (1.0 - ADAM_BETA2) * gi.im * gi.im,
                    );
                    xi.re -= config.stepsize * (mi.re / bc1) / ((vi.re / bc2).sqrt() + ADAM_EPS);
                    xi.im -= config.stepsize * (mi.im / bc1) / ((vi.im / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
    let last = tv_objective(&x, y, maps, config.lambda, config.eps)?;
    if !last.is_finite() {
        return Err(Error::Divergence { iteration: config.iterations, loss: last });
    }
    trace.push(last);
    Ok(TvSolution { image: x, objective_trace: trace })
}

/// TV reconstruction followed by the same data-consistency step as the
/// decoders. Without maps every coil is reconstructed on its own and the
/// coils are combined by root-sum-of-squares.
pub fn tv_reconstruct(y: &CoilMeasurement, maps: Option<&SensitivityMaps>, config: &TvConfig) -> Result<RealGrid> {
    let (h, w) = y.dims();
    match maps {
        Some(maps) => {
            let x = tv_minimize(y, maps, config)?.image;
            let coils = data_consistency(&maps.project(&x)?, y)?;
            Ok(maps.combine(&coils)?.abs())
        }
        None => {
            let identity = SensitivityMaps::identity(h, w);
            let coils = y
                .coils()
                .iter()
                .map(|k| {
                    let single = CoilMeasurement::new(vec![k.clone()], y.mask().clone())?;
                    tv_minimize(&single, &identity, config).map(|s| s.image)
                })
                .collect::<Result<Vec<_>>>()?;
            rss(&data_consistency(&coils, y)?)
        }
    }
}

/// Picks the weight from `grid` with the best PSNR against `gt` on a tuning
/// problem. Returns the weight and every score.
pub fn tune_lambda(
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    gt: &RealGrid,
    base: &TvConfig,
    grid: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let img = tv_reconstruct(y, maps, &TvConfig { lambda, ..base.clone() })?;
        let rep = evaluate(&[img], &[gt.clone()], Normalization::MeanstdGt, EvaluationMode::Image)?;
        scores.push((lambda, rep.psnr.mean));
    }
    let best = scores
        .iter()
        .fold(scores[0], |best, &s| if s.1 > best.1 { s } else { best })
        .0;
    Ok((best, scores))
}
