//! Hyper-parameter selection for a single measurement by holding out part
//! of the sampled k-space and scoring each configuration on how well its
//! reconstruction predicts the held-out data.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoders::{Architecture, DecoderConfig, SizeSchedule};
use crate::error::{Error, Result};
use crate::fitters::{reconstruct_detailed, FitConfig, LossMode, Optimizer, DEFAULT_LR};
use crate::mriops::{fft_plan, CoilMeasurement, ComplexGrid, SensitivityMaps};

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;
pub const DEFAULT_FOLDS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutKind {
    /// Whole sampled columns outside the center band.
    #[default]
    Columns,
    /// Individual entries of sampled columns outside the center band.
    Samples,
}

/// One hold-out fold: the removed k-space positions and the measurement
/// with them zeroed.
#[derive(Clone, Debug)]
pub struct HoldoutSplit {
    pub fraction: f64,
    pub kind: HoldoutKind,
    /// Removed columns; empty for sample-wise splits.
    pub columns: Vec<usize>,
    /// Removed `(row, col)` entries, covering every row of each removed
    /// column for column-wise splits.
    pub entries: Vec<(usize, usize)>,
    pub y_minus: CoilMeasurement,
}

/// Draws the hold-out set uniformly without replacement from the sampled
/// positions outside the center band.
pub fn holdout_split<R: Rng>(y: &CoilMeasurement, q: f64, kind: HoldoutKind, rng: &mut R) -> Result<HoldoutSplit> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("hold-out fraction {q} must lie in (0, 1)")));
    }
    let mask = y.mask();
    let (h, _) = y.dims();
    let outer = mask.outer_columns();
    match kind {
        HoldoutKind::Columns => {
            let n = held_count(q, outer.len())?;
            let mut columns: Vec<usize> = outer.choose_multiple(rng, n).copied().collect();
            columns.sort_unstable();
            let y_minus = y.restricted(mask.without_columns(&columns)?)?;
            let entries = columns.iter().flat_map(|&c| (0..h).map(move |r| (r, c))).collect();
            Ok(HoldoutSplit { fraction: q, kind, columns, entries, y_minus })
        }
        HoldoutKind::Samples => {
            let kept = mask.kept_flags(h);
            let w = mask.width();
            let candidates: Vec<(usize, usize)> = (0..h)
                .flat_map(|r| outer.iter().map(move |&c| (r, c)))
                .filter(|&(r, c)| kept[r * w + c])
                .collect();
            let n = held_count(q, candidates.len())?;
            let mut entries: Vec<(usize, usize)> = candidates.choose_multiple(rng, n).copied().collect();
            entries.sort_unstable();
            let y_minus = y.restricted(mask.without_samples(h, &entries)?)?;
            Ok(HoldoutSplit { fraction: q, kind, columns: Vec::new(), entries, y_minus })
        }
    }
}

fn held_count(q: f64, candidates: usize) -> Result<usize> {
    let n = (q * candidates as f64).round() as usize;
    if n == 0 {
        return Err(Error::invalid(format!(
            "hold-out fraction {q} of {candidates} candidates holds out nothing"
        )));
    }
    if n >= candidates {
        return Err(Error::invalid(format!(
            "hold-out fraction {q} would remove all {candidates} candidates"
        )));
    }
    Ok(n)
}

/// Mean squared error between the reconstruction's k-space and the original
/// measurement over the held-out positions of every coil.
pub fn holdout_error(coil_images: &[ComplexGrid], y: &CoilMeasurement, split: &HoldoutSplit) -> Result<f64> {
    if coil_images.len() != y.num_coils() {
        return Err(Error::shape(format!(
            "{} coil images for {} coils",
            coil_images.len(),
            y.num_coils()
        )));
    }
    let (h, w) = y.dims();
    let plan = fft_plan(h, w);
    let mut total = 0.0;
    for (img, meas) in coil_images.iter().zip(y.coils()) {
        if img.dims() != (h, w) {
            return Err(Error::shape("coil image size differs from the measurement"));
        }
        let k = plan.forward(img);
        for &(r, c) in &split.entries {
            total += (k.at(r, c) - meas.at(r, c)).norm_sqr();
        }
    }
    Ok(total / (split.entries.len() * coil_images.len()) as f64)
}

/// Anything that turns a measurement into per-coil images.
pub trait Reconstructor: Sync {
    fn coil_images(&self, y: &CoilMeasurement) -> Result<Vec<ComplexGrid>>;

    /// Size used to break ties between equally scored candidates.
    fn num_params(&self) -> usize {
        0
    }
}

/// Deterministic per-fold rng seed.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Hold-out errors of `k` independent folds.
pub fn score_reconstructor<R: Reconstructor + ?Sized>(
    r: &R,
    y: &CoilMeasurement,
    q: f64,
    kind: HoldoutKind,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("at least one fold is required"));
    }
    (0..k)
        .map(|fold| {
            let split = holdout_split(y, q, kind, &mut ChaCha8Rng::seed_from_u64(fold_seed(seed, fold)))?;
            holdout_error(&r.coil_images(&split.y_minus)?, y, &split)
        })
        .collect()
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub n_layers: usize,
    pub channels: usize,
    /// Fit one image through the sensitivity maps instead of one image per coil.
    pub sens: bool,
}

/// Everything about a decoder fit that the grid does not vary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneBase {
    pub arch: Architecture,
    /// Spatial size of the random input.
    pub input_hw: [usize; 2],
    pub output_shape: [usize; 2],
    #[serde(default)]
    pub schedule: SizeSchedule,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TuneBase {
    /// ConvDecoder with a one-sixteenth input resolution.
    pub fn desk(output_shape: [usize; 2], iterations: usize, seed: u64) -> Self {
        let [h, w] = output_shape;
        TuneBase {
            arch: Architecture::ConvDecoder,
            input_hw: [(h / 16).max(1), (w / 16).max(1)],
            output_shape,
            schedule: SizeSchedule::Geometric,
            iterations,
            lr: DEFAULT_LR,
            seed,
        }
    }

    pub fn decoder_config(&self, h: &HyperConfig, n_coils: usize) -> DecoderConfig {
        DecoderConfig {
            arch: self.arch,
            n_layers: h.n_layers,
            channels: h.channels,
            input_shape: [h.channels, self.input_hw[0], self.input_hw[1]],
            output_shape: self.output_shape,
            out_channels: Self::loss_mode(h).out_channels(n_coils),
            seed: self.seed,
            schedule: self.schedule,
        }
    }

    pub fn fit_config(&self, h: &HyperConfig) -> FitConfig {
        FitConfig {
            loss_mode: Self::loss_mode(h),
            iterations: self.iterations,
            optimizer: Optimizer::Adam { lr: self.lr },
            record_loss_every: self.iterations,
            record_stepsizes: false,
        }
    }

    pub fn loss_mode(h: &HyperConfig) -> LossMode {
        if h.sens {
            LossMode::Sensmap
        } else {
            LossMode::Coilwise
        }
    }
}

/// A decoder configuration ready to reconstruct.
pub struct DecoderReconstructor<'a> {
    pub decoder: DecoderConfig,
    pub fit: FitConfig,
    pub maps: Option<&'a SensitivityMaps>,
}

impl Reconstructor for DecoderReconstructor<'_> {
    fn coil_images(&self, y: &CoilMeasurement) -> Result<Vec<ComplexGrid>> {
        reconstruct_detailed(y, self.maps, &self.decoder, &self.fit).map(|r| r.coil_images)
    }

    fn num_params(&self) -> usize {
        self.decoder.num_params()
    }
}

/// The full-scale grid: layers {5, 8} x channels {64, 256} x sens {0, 1}.
pub fn full_scale_grid() -> Vec<HyperConfig> {
    grid(&[5, 8], &[64, 256])
}

/// Cartesian product in layers-major order, sens varying fastest.
pub fn grid(layers: &[usize], channels: &[usize]) -> Vec<HyperConfig> {
    let mut out = Vec::new();
    for &n_layers in layers {
        for &channels in channels {
            for sens in [false, true] {
                out.push(HyperConfig { n_layers, channels, sens });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub config: HyperConfig,
    pub fold_errors: Vec<f64>,
    /// Absent when the configuration failed.
    pub mean_error: Option<f64>,
    pub num_params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub q: f64,
    pub folds: usize,
    #[serde(default)]
    pub kind: HoldoutKind,
    pub seed: u64,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            q: DEFAULT_HOLDOUT_FRACTION,
            folds: DEFAULT_FOLDS,
            kind: HoldoutKind::Columns,
            seed: 0,
        }
    }
}

/// Index of the winning row: smallest mean error, then fewest parameters,
/// then earliest in the grid.
pub fn select(rows: &[ScoreRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter_map(|(i, r)| r.mean_error.map(|e| (i, e, r.num_params)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)))
        .map(|(i, _, _)| i)
}

/// Scores arbitrary reconstructors and picks the best. Folds of all
/// candidates run in parallel on the current rayon pool.
pub fn autotune_reconstructors<R: Reconstructor>(
    candidates: &[(HyperConfig, R)],
    y: &CoilMeasurement,
    settings: &TuneSettings,
) -> Result<(usize, Vec<ScoreRow>)> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty hyper-parameter grid"));
    }
    let unique: BTreeSet<_> = candidates.iter().map(|(h, _)| (h.n_layers, h.channels, h.sens)).collect();
    if unique.len() != candidates.len() {
        return Err(Error::invalid("hyper-parameter grid has duplicate entries"));
    }
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..settings.folds).map(move |f| (c, f)))
        .collect();
    if settings.folds == 0 {
        return Err(Error::invalid("at least one fold is required"));
    }
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, fold)| {
            let split = holdout_split(
                y,
                settings.q,
                settings.kind,
                &mut ChaCha8Rng::seed_from_u64(fold_seed(settings.seed, fold)),
            )?;
            holdout_error(&candidates[c].1.coil_images(&split.y_minus)?, y, &split)
        })
        .collect();
    let mut rows = Vec::with_capacity(candidates.len());
    let mut results = results.into_iter();
    for (h, r) in candidates {
        let mut folds = Vec::with_capacity(settings.folds);
        let mut failure = None;
        for res in results.by_ref().take(settings.folds) {
            match res {
                Ok(e) => folds.push(e),
                Err(e) => failure = failure.or(Some(e.to_string())),
            }
        }
        let mean_error = match failure {
            None => Some(folds.iter().sum::<f64>() / folds.len() as f64),
            Some(_) => None,
        };
        rows.push(ScoreRow {
            config: *h,
            fold_errors: folds,
            mean_error,
            num_params: r.num_params(),
            error: failure,
        });
    }
    let best = select(&rows).ok_or_else(|| {
        Error::invalid(format!(
            "every configuration failed; first error: {}",
            rows[0].error.clone().unwrap_or_default()
        ))
    })?;
    Ok((best, rows))
}

/// Scores every decoder configuration of `grid` by hold-out error and
/// returns the winner with the full score table.
pub fn autotune(
    grid: &[HyperConfig],
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    base: &TuneBase,
    settings: &TuneSettings,
) -> Result<(HyperConfig, Vec<ScoreRow>)> {
    let candidates: Vec<(HyperConfig, DecoderReconstructor)> = grid
        .iter()
        .map(|h| {
            (
                *h,
                DecoderReconstructor {
                    decoder: base.decoder_config(h, y.num_coils()),
                    fit: base.fit_config(h),
                    maps,
                },
            )
        })
        .collect();
    let (best, rows) = autotune_reconstructors(&candidates, y, settings)?;
    Ok((grid[best], rows))
}
