//! Synthetic ground truth: textured ellipse phantoms, coil sensitivity maps,
//! under-sampling masks and noisy measurement simulation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mriops::{forward_multicoil, CoilMeasurement, ComplexGrid, Mask, RealGrid, SensitivityMaps};

/// Seed of the shipped reference phantom.
pub const REFERENCE_SEED: u64 = 1234;
/// Coil count of the desk-scale problem.
pub const DESK_COILS: usize = 15;
/// Relative measurement noise of the desk-scale problem.
pub const DESK_NOISE: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub n_ellipses: usize,
    pub texture_amplitude: f64,
    /// Correlation length of the texture in pixels.
    pub texture_scale: f64,
}

impl PhantomSpec {
    /// 128 x 96 desk-scale phantom.
    pub fn desk(seed: u64) -> Self {
        PhantomSpec {
            height: 128,
            width: 96,
            seed,
            n_ellipses: 10,
            texture_amplitude: 0.3,
            texture_scale: 3.0,
        }
    }

    /// 640 x 368, the size of a knee slice.
    pub fn full_scale(seed: u64) -> Self {
        PhantomSpec {
            height: 640,
            width: 368,
            n_ellipses: 16,
            texture_scale: 5.0,
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::invalid(format!(
                "phantom extents {}x{} must both be at least 32",
                self.height, self.width
            )));
        }
        if !(self.texture_amplitude >= 0.0) || !self.texture_amplitude.is_finite() {
            return Err(Error::invalid("texture_amplitude must be non-negative"));
        }
        if !(self.texture_scale > 0.0) || !self.texture_scale.is_finite() {
            return Err(Error::invalid("texture_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: ComplexGrid,
    pub support: Vec<bool>,
}

impl Phantom {
    pub fn magnitude(&self) -> RealGrid {
        self.image.abs()
    }

    pub fn support_area(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    /// Normalized radius of a point in `[-1, 1]^2` coordinates.
    fn radius(&self, v: f64, u: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (v - self.cy, u - self.cx);
        let a = (c * dx + s * dy) / self.ax;
        let b = (-s * dx + c * dy) / self.ay;
        (a * a + b * b).sqrt()
    }

    /// Weight falling from 1 to 0 across the rim over about `edge` in radius.
    fn weight(&self, v: f64, u: f64, edge: f64) -> f64 {
        0.5 * (1.0 - ((self.radius(v, u) - 1.0) / edge).tanh())
    }
}

fn coords(h: usize, w: usize, r: usize, c: usize) -> (f64, f64) {
    (
        2.0 * (r as f64 + 0.5) / h as f64 - 1.0,
        2.0 * (c as f64 + 0.5) / w as f64 - 1.0,
    )
}

/// Separable Gaussian blur with zero padding, kernel truncated at 3 sigma.
fn gaussian_blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let pass = |src: &[f64], along_rows: bool| {
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let d = i as isize - radius;
                    let (rr, cc) = if along_rows { (r as isize + d, c as isize) } else { (r as isize, c as isize + d) };
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        acc += k * src[rr as usize * w + cc as usize];
                    }
                }
                out[r * w + c] = acc;
            }
        }
        out
    };
    pass(&pass(data, true), false)
}

/// Ellipses inside a head-like outer ellipse, modulated by low-pass filtered
/// Gaussian texture, with a smooth random phase. Magnitude lies in `[0, 1]`
/// and is exactly zero outside the support (the outer ellipse).
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edge_px = 1.0;

    let outer = Ellipse { cy: 0.0, cx: 0.0, ay: 0.9, ax: 0.85, angle: 0.0, value: 0.55 };
    let mut ellipses = Vec::with_capacity(spec.n_ellipses);
    for _ in 0..spec.n_ellipses {
        let r = 0.55 * rng.gen::<f64>().sqrt();
        let t = rng.gen_range(0.0..2.0 * PI);
        ellipses.push(Ellipse {
            cy: r * t.sin(),
            cx: r * t.cos(),
            ay: rng.gen_range(0.05..0.3),
            ax: rng.gen_range(0.05..0.3),
            angle: rng.gen_range(0.0..PI),
            value: rng.gen_range(-0.3..0.4),
        });
    }
    let phase: [f64; 3] = [
        rng.gen_range(-1.0..1.0) * PI / 4.0,
        rng.gen_range(-1.0..1.0) * PI / 4.0,
        rng.gen_range(-1.0..1.0) * PI / 4.0,
    ];
    let noise: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut texture = gaussian_blur(&noise, h, w, spec.texture_scale);
    let std = (texture.iter().map(|v| v * v).sum::<f64>() / (h * w) as f64).sqrt();
    if std > 0.0 {
        texture.iter_mut().for_each(|v| *v /= std);
    }

    let mut support = vec![false; h * w];
    let mut data = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            let (v, u) = coords(h, w, r, c);
            if outer.radius(v, u) > 1.0 {
                continue;
            }
            let i = r * w + c;
            support[i] = true;
            let edge = |e: &Ellipse| edge_px * 2.0 / (h.min(w) as f64 * e.ax.min(e.ay));
            let mut m = outer.value * outer.weight(v, u, edge(&outer));
            for e in &ellipses {
                m += e.value * e.weight(v, u, edge(e));
            }
            m *= 1.0 + spec.texture_amplitude * texture[i];
            let m = m.clamp(0.0, 1.0);
            let phi = phase[0] * u + phase[1] * v + phase[2] * (u * u + v * v);
            data[i] = Complex64::from_polar(m, phi);
        }
    }
    Ok(Phantom { image: ComplexGrid::new(h, w, data)?, support })
}

/// Gaussian-profile coil maps centred at equally spaced angles on a ring
/// outside the support, each with its own smooth linear phase, normalized to
/// `sum_i |S_i|^2 = 1` on the support and zero elsewhere.
pub fn make_sens_maps(n_coils: usize, height: usize, width: usize, support: &[bool]) -> Result<SensitivityMaps> {
    if n_coils == 0 {
        return Err(Error::invalid("at least one coil is required"));
    }
    if support.len() != height * width {
        return Err(Error::shape(format!(
            "support has {} entries for a {height}x{width} grid",
            support.len()
        )));
    }
    let ring = 1.3;
    let spread = 0.9;
    let maps = (0..n_coils)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n_coils as f64;
            let (cy, cx) = (ring * t.sin(), ring * t.cos());
            ComplexGrid::from_fn(height, width, |r, c| {
                let (v, u) = coords(height, width, r, c);
                let d2 = (v - cy).powi(2) + (u - cx).powi(2);
                let mag = if n_coils == 1 { 1.0 } else { (-d2 / (2.0 * spread * spread)).exp() };
                Complex64::from_polar(mag, t + 0.5 * (u * t.cos() - v * t.sin()))
            })
        })
        .collect();
    SensitivityMaps::normalized(maps, support.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Random,
    Equispaced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub width: usize,
    pub acceleration: u32,
    pub kind: MaskKind,
    pub center_fraction: f64,
    pub seed: u64,
}

impl MaskSpec {
    /// Center fraction 0.08 at 4x and 0.04 at 8x.
    pub fn standard(width: usize, acceleration: u32, seed: u64) -> Self {
        MaskSpec {
            width,
            acceleration,
            kind: MaskKind::Random,
            center_fraction: default_center_fraction(acceleration),
            seed,
        }
    }

    pub fn center_columns(&self) -> usize {
        (self.center_fraction * self.width as f64).round() as usize
    }

    pub fn total_columns(&self) -> usize {
        (self.width as f64 / self.acceleration as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.acceleration, 4 | 8) {
            return Err(Error::invalid(format!("acceleration {} must be 4 or 8", self.acceleration)));
        }
        let bound = 2.0 / self.acceleration as f64;
        if !(self.center_fraction > 0.0 && self.center_fraction < bound) {
            return Err(Error::invalid(format!(
                "center_fraction {} must lie in (0, {bound})",
                self.center_fraction
            )));
        }
        if self.center_columns() == 0 {
            return Err(Error::invalid("center band rounds to zero columns"));
        }
        if self.total_columns() < self.center_columns() {
            return Err(Error::invalid(format!(
                "sampling budget {} is below the center band of {} columns",
                self.total_columns(),
                self.center_columns()
            )));
        }
        Ok(())
    }
}

pub fn default_center_fraction(acceleration: u32) -> f64 {
    if acceleration >= 8 {
        0.04
    } else {
        0.08
    }
}

/// Fully sampled center band plus `round(W / accel) - center` outer columns,
/// drawn uniformly or spaced evenly over the non-center columns.
pub fn make_mask(spec: &MaskSpec) -> Result<Mask> {
    spec.validate()?;
    let w = spec.width;
    let center = spec.center_columns();
    let pad = (w - center + 1) / 2;
    let band = pad..pad + center;
    let candidates: Vec<usize> = (0..w).filter(|c| !band.contains(c)).collect();
    let need = spec.total_columns() - center;
    let mut outer = match spec.kind {
        MaskKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            candidates.choose_multiple(&mut rng, need).copied().collect::<Vec<_>>()
        }
        MaskKind::Equispaced => {
            let n = candidates.len() as f64;
            (0..need)
                .map(|j| candidates[((j as f64 + 0.5) * n / need as f64).floor() as usize])
                .collect()
        }
    };
    outer.extend(band.clone());
    Mask::new(w, outer, band)
}

/// `forward_multicoil` plus complex Gaussian noise on the sampled entries,
/// each component with standard deviation
/// `noise_sigma * ||y|| / sqrt(number of sampled entries)`.
pub fn simulate(
    x: &ComplexGrid,
    maps: &SensitivityMaps,
    mask: &Mask,
    noise_sigma: f64,
    seed: u64,
) -> Result<CoilMeasurement> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::invalid(format!("noise_sigma {noise_sigma} must be non-negative")));
    }
    let clean = forward_multicoil(x, maps, mask)?;
    if noise_sigma == 0.0 {
        return Ok(clean);
    }
    let (h, _) = clean.dims();
    let kept = mask.kept_flags(h);
    let count = kept.iter().filter(|&&k| k).count() * clean.num_coils();
    if count == 0 {
        return Ok(clean);
    }
    let std = noise_sigma * clean.norm() / (count as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coils = clean
        .coils()
        .iter()
        .map(|k| {
            let mut k = k.clone();
            for (v, &keep) in k.data_mut().iter_mut().zip(&kept) {
                if keep {
                    *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
            k
        })
        .collect();
    CoilMeasurement::new(coils, mask.clone())
}

/// Everything needed for one desk-scale experiment.
#[derive(Clone, Debug)]
pub struct Problem {
    pub phantom: Phantom,
    pub maps: SensitivityMaps,
    pub mask: Mask,
    pub measurement: CoilMeasurement,
}

impl Problem {
    pub fn ground_truth(&self) -> RealGrid {
        self.phantom.magnitude()
    }
}

/// Phantom, maps, mask and measurement from one seed; the mask and the noise
/// use seeds derived from it.
pub fn make_problem(spec: &PhantomSpec, n_coils: usize, mask_spec: &MaskSpec, noise_sigma: f64) -> Result<Problem> {
    let phantom = make_phantom(spec)?;
    let maps = make_sens_maps(n_coils, spec.height, spec.width, &phantom.support)?;
    let mask = make_mask(mask_spec)?;
    let measurement = simulate(&phantom.image, &maps, &mask, noise_sigma, spec.seed.wrapping_add(1))?;
    Ok(Problem { phantom, maps, mask, measurement })
}

/// The shipped 15-coil 128 x 96 phantom at the given acceleration.
pub fn desk_problem(seed: u64, acceleration: u32) -> Result<Problem> {
    make_problem(
        &PhantomSpec::desk(seed),
        DESK_COILS,
        &MaskSpec::standard(96, acceleration, seed),
        DESK_NOISE,
    )
}
