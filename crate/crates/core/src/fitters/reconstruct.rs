use rayon::prelude::*;

use super::fit::{fit, FitConfig, FitResult};
use super::loss::LossMode;
use crate::decoders::{DecoderConfig, DecoderState};
use crate::error::{Error, Result};
use crate::mriops::{channels_to_complex, data_consistency, rss, CoilMeasurement, ComplexGrid, RealGrid, SensitivityMaps};
use crate::tensor::{Real, Tensor};

/// A fitted decoder together with the image it produces.
#[derive(Clone, Debug)]
pub struct Reconstruction<T: Real = f32> {
    pub image: RealGrid,
    /// Per-coil images after data consistency, before combination.
    pub coil_images: Vec<ComplexGrid>,
    pub state: DecoderState<T>,
    pub fit: FitResult<T>,
}

/// Turns a decoder output into the final image: data consistency per coil,
/// then root-sum-of-squares, or the map-weighted combination in
/// sensitivity-map mode.
pub fn finalize<T: Real>(
    output: &Tensor<T>,
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    mode: LossMode,
) -> Result<(RealGrid, Vec<ComplexGrid>)> {
    let images = channels_to_complex(output)?;
    match mode {
        LossMode::SingleCoil | LossMode::Coilwise => {
            let coils = data_consistency(&images, y)?;
            Ok((rss(&coils)?, coils))
        }
        LossMode::Sensmap => {
            let maps = maps.ok_or_else(|| Error::invalid("sensitivity-map reconstruction needs maps"))?;
            let x = images
                .first()
                .filter(|_| images.len() == 1)
                .ok_or_else(|| Error::shape(format!("expected one output image, decoder produced {}", images.len())))?;
            let coils = data_consistency(&maps.project(x)?, y)?;
            Ok((maps.combine(&coils)?.abs(), coils))
        }
    }
}

/// Fits an already initialized (or warm-started) decoder and finalizes.
pub fn reconstruct_from<T: Real>(
    mut state: DecoderState<T>,
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    fit_config: &FitConfig,
) -> Result<Reconstruction<T>> {
    let result = fit(&mut state, y, maps, fit_config)?;
    let (image, coil_images) = finalize(&state.forward()?, y, maps, fit_config.loss_mode)?;
    Ok(Reconstruction { image, coil_images, state, fit: result })
}

/// Initializes a decoder from `decoder`'s seed, fits it and finalizes.
pub fn reconstruct_detailed(
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    decoder: &DecoderConfig,
    fit_config: &FitConfig,
) -> Result<Reconstruction> {
    check_channels(y, decoder, fit_config)?;
    reconstruct_from(DecoderState::init(decoder)?, y, maps, fit_config)
}

/// Final reconstructed magnitude image.
pub fn reconstruct(
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    decoder: &DecoderConfig,
    fit_config: &FitConfig,
) -> Result<RealGrid> {
    reconstruct_detailed(y, maps, decoder, fit_config).map(|r| r.image)
}

fn check_channels(y: &CoilMeasurement, decoder: &DecoderConfig, fit_config: &FitConfig) -> Result<()> {
    let need = fit_config.loss_mode.out_channels(y.num_coils());
    if decoder.out_channels != need {
        return Err(Error::shape(format!(
            "{:?} loss with {} coils needs {need} decoder output channels, config has {}",
            fit_config.loss_mode,
            y.num_coils(),
            decoder.out_channels
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    /// Pixelwise mean of the member images.
    pub image: RealGrid,
    pub members: Vec<RealGrid>,
    pub seeds: Vec<u64>,
    pub final_losses: Vec<f64>,
}

/// Pixelwise arithmetic mean of equally sized images.
pub fn average(images: &[RealGrid]) -> Result<RealGrid> {
    let first = images.first().ok_or_else(|| Error::invalid("cannot average zero images"))?;
    let (h, w) = first.dims();
    if images.iter().any(|g| g.dims() != (h, w)) {
        return Err(Error::shape("images differ in size"));
    }
    let mut acc = vec![0.0; h * w];
    for g in images {
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    RealGrid::new(h, w, acc.into_iter().map(|v| v / n).collect())
}

/// Reconstructs once per seed, in parallel on the current rayon pool, and
/// averages the results. A failing member is reported with its seed.
pub fn ensemble_reconstruct(
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    decoder: &DecoderConfig,
    fit_config: &FitConfig,
    seeds: &[u64],
) -> Result<Ensemble> {
    if seeds.is_empty() {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    check_channels(y, decoder, fit_config)?;
    let runs: Vec<(RealGrid, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            reconstruct_detailed(y, maps, &decoder.clone().with_seed(seed), fit_config)
                .map(|r| (r.image, r.fit.final_loss()))
                .map_err(|e| Error::Member { seed, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let (members, final_losses): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(Ensemble {
        image: average(&members)?,
        members,
        seeds: seeds.to_vec(),
        final_losses,
    })
}

/// `k` consecutive member seeds starting at `base`.
pub fn member_seeds(base: u64, k: usize) -> Vec<u64> {
    (0..k as u64).map(|i| base.wrapping_add(i)).collect()
}
