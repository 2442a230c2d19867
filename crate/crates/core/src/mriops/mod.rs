//! The multi-coil measurement model.
//!
//! A coil measures `y_i = M F (S_i x)`: the image `x` weighted by the coil's
//! sensitivity `S_i`, Fourier transformed by the centered orthonormal 2-D DFT
//! `F`, and restricted to the sampled k-space columns by the mask `M`.

mod fft;
mod grid;
mod mask;

pub use fft::{fft2c, plan as fft_plan, Fft2c};
pub use grid::{ComplexGrid, RealGrid};
pub use mask::{apply_mask, DroppedSamples, Mask};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Tolerance on `sum_i |S_i|^2 == 1` inside the support.
pub const MAP_NORMALIZATION_TOL: f64 = 1e-6;

/// Coil sensitivities, normalized so that `sum_i |S_i|^2 = 1` inside the
/// support and zero outside it.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMaps {
    maps: Vec<ComplexGrid>,
    support: Vec<bool>,
}

impl SensitivityMaps {
    /// Validates normalization and the zero exterior.
    pub fn new(maps: Vec<ComplexGrid>, support: Vec<bool>) -> Result<Self> {
        let (h, w) = Self::check_dims(&maps, &support)?;
        for i in 0..h * w {
            let e: f64 = maps.iter().map(|m| m.data()[i].norm_sqr()).sum();
            let ok = if support[i] {
                (e - 1.0).abs() <= MAP_NORMALIZATION_TOL
            } else {
                e == 0.0
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "sensitivity energy {e} at pixel ({}, {}) violates normalization",
                    i / w,
                    i % w
                )));
            }
        }
        Ok(SensitivityMaps { maps, support })
    }

    /// Rescales arbitrary maps so that they satisfy the normalization and
    /// zeroes them outside the support. Supported pixels with no energy at all
    /// are dropped from the support.
    pub fn normalized(mut maps: Vec<ComplexGrid>, mut support: Vec<bool>) -> Result<Self> {
        let (h, w) = Self::check_dims(&maps, &support)?;
        for i in 0..h * w {
            let e: f64 = maps.iter().map(|m| m.data()[i].norm_sqr()).sum();
            if !support[i] || e <= 0.0 {
                support[i] = false;
                maps.iter_mut().for_each(|m| m.data_mut()[i] = Complex64::new(0.0, 0.0));
            } else {
                let s = 1.0 / e.sqrt();
                maps.iter_mut().for_each(|m| m.data_mut()[i] *= s);
            }
        }
        Ok(SensitivityMaps { maps, support })
    }

    /// Single coil of unit sensitivity everywhere.
    pub fn identity(height: usize, width: usize) -> Self {
        SensitivityMaps {
            maps: vec![ComplexGrid::from_fn(height, width, |_, _| Complex64::new(1.0, 0.0))],
            support: vec![true; height * width],
        }
    }

    fn check_dims(maps: &[ComplexGrid], support: &[bool]) -> Result<(usize, usize)> {
        let first = maps.first().ok_or_else(|| Error::invalid("no sensitivity maps"))?;
        let dims = first.dims();
        if maps.iter().any(|m| m.dims() != dims) {
            return Err(Error::shape("sensitivity maps differ in size"));
        }
        if support.len() != dims.0 * dims.1 {
            return Err(Error::shape("support size differs from maps"));
        }
        Ok(dims)
    }

    pub fn num_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn maps(&self) -> &[ComplexGrid] {
        &self.maps
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    /// `S_i x` for every coil.
    pub fn project(&self, x: &ComplexGrid) -> Result<Vec<ComplexGrid>> {
        self.maps.iter().map(|s| s.mul(x)).collect()
    }

    /// Least-squares coil combination `sum_i conj(S_i) c_i / sum_i |S_i|^2`,
    /// zero where the maps vanish.
    pub fn combine(&self, coils: &[ComplexGrid]) -> Result<ComplexGrid> {
        if coils.len() != self.maps.len() {
            return Err(Error::shape(format!(
                "{} coil images for {} maps",
                coils.len(),
                self.maps.len()
            )));
        }
        let (h, w) = self.dims();
        if coils.iter().any(|c| c.dims() != (h, w)) {
            return Err(Error::shape("coil image size differs from maps"));
        }
        Ok(ComplexGrid::from_fn(h, w, |r, c| {
            let i = r * w + c;
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for (s, x) in self.maps.iter().zip(coils) {
                num += s.data()[i].conj() * x.data()[i];
                den += s.data()[i].norm_sqr();
            }
            if den > 0.0 {
                num / den
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }
}

/// Under-sampled k-space of every coil together with its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMeasurement {
    coils: Vec<ComplexGrid>,
    mask: Mask,
}

impl CoilMeasurement {
    /// Requires entries outside the mask to be exactly zero.
    pub fn new(coils: Vec<ComplexGrid>, mask: Mask) -> Result<Self> {
        Self::check(&coils, &mask)?;
        for k in &coils {
            let kept = mask.kept_flags(k.height());
            if k.data().iter().zip(&kept).any(|(v, &keep)| !keep && (v.re != 0.0 || v.im != 0.0)) {
                return Err(Error::invalid("measurement has non-zero entries outside the mask"));
            }
        }
        Ok(CoilMeasurement { coils, mask })
    }

    /// Applies the mask to full k-space data.
    pub fn masked(mut coils: Vec<ComplexGrid>, mask: Mask) -> Result<Self> {
        Self::check(&coils, &mask)?;
        for k in &mut coils {
            mask.apply_in_place(k)?;
        }
        Ok(CoilMeasurement { coils, mask })
    }

    fn check(coils: &[ComplexGrid], mask: &Mask) -> Result<()> {
        let first = coils.first().ok_or_else(|| Error::invalid("measurement without coils"))?;
        if coils.iter().any(|c| c.dims() != first.dims()) {
            return Err(Error::shape("coil k-spaces differ in size"));
        }
        if first.width() != mask.width() {
            return Err(Error::shape(format!(
                "mask width {} vs k-space width {}",
                mask.width(),
                first.width()
            )));
        }
        Ok(())
    }

    pub fn coils(&self) -> &[ComplexGrid] {
        &self.coils
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn num_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.coils[0].dims()
    }

    pub fn norm(&self) -> f64 {
        self.coils.iter().map(ComplexGrid::norm_sqr).sum::<f64>().sqrt()
    }

    /// Same data restricted to a smaller mask (entries outside it zeroed).
    pub fn restricted(&self, mask: Mask) -> Result<Self> {
        Self::masked(self.coils.clone(), mask)
    }
}

/// `y_i = M F (S_i x)` for every coil.
pub fn forward_multicoil(x: &ComplexGrid, maps: &SensitivityMaps, mask: &Mask) -> Result<CoilMeasurement> {
    if x.dims() != maps.dims() {
        return Err(Error::shape(format!(
            "image {:?} vs maps {:?}",
            x.dims(),
            maps.dims()
        )));
    }
    let plan = fft_plan(x.height(), x.width());
    let mut coils = maps.project(x)?;
    for k in &mut coils {
        plan.process(k, false);
    }
    CoilMeasurement::masked(coils, mask.clone())
}

/// Adjoint of [`forward_multicoil`]: `sum_i conj(S_i) F^H M y_i`.
pub fn adjoint_multicoil(y: &CoilMeasurement, maps: &SensitivityMaps) -> Result<ComplexGrid> {
    if y.num_coils() != maps.num_coils() || y.dims() != maps.dims() {
        return Err(Error::shape("measurement and maps disagree"));
    }
    let (h, w) = y.dims();
    let plan = fft_plan(h, w);
    let mut acc = ComplexGrid::zeros(h, w);
    for (k, s) in y.coils().iter().zip(maps.maps()) {
        let mut img = apply_mask(k, y.mask())?;
        plan.process(&mut img, true);
        for ((a, &si), &xi) in acc.data_mut().iter_mut().zip(s.data()).zip(img.data()) {
            *a += si.conj() * xi;
        }
    }
    Ok(acc)
}

/// Root-sum-of-squares coil combination.
pub fn rss(coil_images: &[ComplexGrid]) -> Result<RealGrid> {
    let first = coil_images.first().ok_or_else(|| Error::invalid("rss of zero coils"))?;
    let (h, w) = first.dims();
    if coil_images.iter().any(|c| c.dims() != (h, w)) {
        return Err(Error::shape("coil images differ in size"));
    }
    let mut acc = vec![0.0; h * w];
    for c in coil_images {
        for (a, v) in acc.iter_mut().zip(c.data()) {
            *a += v.norm_sqr();
        }
    }
    RealGrid::new(h, w, acc.into_iter().map(f64::sqrt).collect())
}

/// Inverse transform of every coil's zero-filled k-space.
pub fn coil_images(y: &CoilMeasurement) -> Vec<ComplexGrid> {
    let (h, w) = y.dims();
    let plan = fft_plan(h, w);
    y.coils().iter().map(|k| plan.inverse(k)).collect()
}

/// Inverse transform per coil followed by root-sum-of-squares.
pub fn zero_filled(y: &CoilMeasurement) -> Result<RealGrid> {
    rss(&coil_images(y))
}

/// Replaces each coil reconstruction's k-space entries at the measured
/// locations with the measurements.
pub fn data_consistency(recon_coils: &[ComplexGrid], y: &CoilMeasurement) -> Result<Vec<ComplexGrid>> {
    if recon_coils.len() != y.num_coils() {
        return Err(Error::shape(format!(
            "{} reconstructed coils for {} measured",
            recon_coils.len(),
            y.num_coils()
        )));
    }
    let (h, w) = y.dims();
    if recon_coils.iter().any(|c| c.dims() != (h, w)) {
        return Err(Error::shape("reconstruction size differs from measurement"));
    }
    let plan = fft_plan(h, w);
    let kept = y.mask().kept_flags(h);
    recon_coils
        .iter()
        .zip(y.coils())
        .map(|(x, meas)| {
            let mut k = plan.forward(x);
            for ((v, &m), &keep) in k.data_mut().iter_mut().zip(meas.data()).zip(&kept) {
                if keep {
                    *v = m;
                }
            }
            plan.process(&mut k, true);
            Ok(k)
        })
        .collect()
}

/// Lays out coil images as a `2 n_c x H x W` tensor; coil `i` occupies
/// channels `2i` (real part) and `2i + 1` (imaginary part).
pub fn complex_to_channels<T: Real>(coils: &[ComplexGrid]) -> Result<Tensor<T>> {
    let first = coils.first().ok_or_else(|| Error::invalid("no images to convert"))?;
    let (h, w) = first.dims();
    if coils.iter().any(|c| c.dims() != (h, w)) {
        return Err(Error::shape("images differ in size"));
    }
    let mut data = Vec::with_capacity(2 * coils.len() * h * w);
    for c in coils {
        data.extend(c.data().iter().map(|v| T::of(v.re)));
        data.extend(c.data().iter().map(|v| T::of(v.im)));
    }
    Tensor::new(&[2 * coils.len(), h, w], data)
}

/// Inverse of [`complex_to_channels`].
pub fn channels_to_complex<T: Real>(t: &Tensor<T>) -> Result<Vec<ComplexGrid>> {
    let (c, h, w) = t.chw()?;
    if c % 2 != 0 {
        return Err(Error::shape(format!("{c} channels cannot be paired into complex images")));
    }
    let hw = h * w;
    t.data()
        .chunks_exact(2 * hw)
        .map(|pair| {
            let (re, im) = pair.split_at(hw);
            ComplexGrid::new(
                h,
                w,
                re.iter().zip(im).map(|(&a, &b)| Complex64::new(a.as_f64(), b.as_f64())).collect(),
            )
        })
        .collect()
}
