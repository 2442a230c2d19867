//! Run configuration files and their resolution against flags and defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use umri::decoders::{Architecture, DecoderConfig, SizeSchedule};
use umri::fitters::{FitConfig, LossMode, Optimizer, DEFAULT_ITERATIONS, DEFAULT_LR};
use umri::metrics::{EvaluationMode, Normalization};
use umri::tv::{TvConfig, TvSolver};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Convdecoder,
    Deepdecoder,
    Tv,
    ZeroFill,
}

impl Method {
    pub fn architecture(self) -> Option<Architecture> {
        match self {
            Method::Convdecoder => Some(Architecture::ConvDecoder),
            Method::Deepdecoder => Some(Architecture::DeepDecoder),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hw: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<SizeSchedule>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stepsize: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<TvSolver>,
}

/// A `recon` configuration file; every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sens: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<DecoderFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv: Option<TvFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_mode: Option<EvaluationMode>,
}

pub const DEFAULT_LAYERS: usize = 5;
pub const DEFAULT_CHANNELS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDecoder {
    pub n_layers: usize,
    pub channels: usize,
    pub input_hw: [usize; 2],
    pub schedule: SizeSchedule,
}

/// Fully resolved `recon` settings, echoed into the output manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconSettings {
    pub method: Method,
    pub seed: u64,
    pub sens: bool,
    pub iterations: usize,
    pub lr: f64,
    pub ensemble: usize,
    pub loss_every: usize,
    pub decoder: ResolvedDecoder,
    pub tv: TvConfig,
    pub normalization: Normalization,
    pub evaluation_mode: EvaluationMode,
}

impl ReconSettings {
    pub fn loss_mode(&self, n_coils: usize) -> LossMode {
        match (self.sens, n_coils) {
            (true, _) => LossMode::Sensmap,
            (false, 1) => LossMode::SingleCoil,
            (false, _) => LossMode::Coilwise,
        }
    }

    pub fn decoder_config(&self, output: [usize; 2], n_coils: usize) -> Option<DecoderConfig> {
        let arch = self.method.architecture()?;
        Some(DecoderConfig {
            arch,
            n_layers: self.decoder.n_layers,
            channels: self.decoder.channels,
            input_shape: [self.decoder.channels, self.decoder.input_hw[0], self.decoder.input_hw[1]],
            output_shape: output,
            out_channels: self.loss_mode(n_coils).out_channels(n_coils),
            seed: self.seed,
            schedule: self.decoder.schedule,
        })
    }

    pub fn fit_config(&self, n_coils: usize) -> FitConfig {
        FitConfig {
            loss_mode: self.loss_mode(n_coils),
            iterations: self.iterations,
            optimizer: Optimizer::Adam { lr: self.lr },
            record_loss_every: self.loss_every,
            record_stepsizes: false,
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Global seed fallback from the environment.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("UMRI_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("UMRI_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flag values, each overriding the file.
#[derive(Clone, Debug, Default)]
pub struct ReconFlags {
    pub method: Option<Method>,
    pub seed: Option<u64>,
    pub sens: bool,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub ensemble: Option<usize>,
    pub loss_every: Option<usize>,
    pub layers: Option<usize>,
    pub channels: Option<usize>,
    pub input_hw: Option<[usize; 2]>,
    pub lambda: Option<f64>,
    pub tv_iterations: Option<usize>,
    pub normalization: Option<Normalization>,
    pub evaluation_mode: Option<EvaluationMode>,
}

/// Flags, then the configuration file, then defaults. The seed falls back
/// to `UMRI_SEED` before the default of 0.
pub fn resolve(flags: &ReconFlags, file: &ReconFile, output: [usize; 2]) -> Result<ReconSettings, CliError> {
    let dec = file.decoder.clone().unwrap_or_default();
    let tvf = file.tv.clone().unwrap_or_default();
    let tv_default = TvConfig::default();
    let method = flags
        .method
        .or(file.method)
        .ok_or_else(|| CliError::config("no reconstruction method given (flag or config file)"))?;
    let seed = match flags.seed.or(file.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let [h, w] = output;
    let s = ReconSettings {
        method,
        seed,
        sens: flags.sens || file.sens.unwrap_or(false),
        iterations: flags.iterations.or(file.iterations).unwrap_or(DEFAULT_ITERATIONS),
        lr: flags.lr.or(file.lr).unwrap_or(DEFAULT_LR),
        ensemble: flags.ensemble.or(file.ensemble).unwrap_or(1),
        loss_every: flags.loss_every.or(file.loss_every).unwrap_or(1),
        decoder: ResolvedDecoder {
            n_layers: flags.layers.or(dec.n_layers).unwrap_or(DEFAULT_LAYERS),
            channels: flags.channels.or(dec.channels).unwrap_or(DEFAULT_CHANNELS),
            input_hw: flags
                .input_hw
                .or(dec.input_hw)
                .unwrap_or([(h / 16).max(1), (w / 16).max(1)]),
            schedule: dec.schedule.unwrap_or_default(),
        },
        tv: TvConfig {
            lambda: flags.lambda.or(tvf.lambda).unwrap_or(tv_default.lambda),
            iterations: flags.tv_iterations.or(tvf.iterations).unwrap_or(tv_default.iterations),
            eps: tvf.eps.unwrap_or(tv_default.eps),
            stepsize: tvf.stepsize.unwrap_or(tv_default.stepsize),
            solver: tvf.solver.unwrap_or(tv_default.solver),
        },
        normalization: flags.normalization.or(file.normalization).unwrap_or_default(),
        evaluation_mode: flags.evaluation_mode.or(file.evaluation_mode).unwrap_or_default(),
    };
    if s.ensemble == 0 {
        return Err(CliError::config("ensemble size must be at least 1"));
    }
    if s.loss_every == 0 {
        return Err(CliError::config("loss_every must be at least 1"));
    }
    s.tv.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: ReconFile = serde_json::from_str(
            r#"{"method": "tv", "iterations": 7, "decoder": {"channels": 4}, "tv": {"lambda": 0.5}}"#,
        )
        .unwrap();
        let flags = ReconFlags { iterations: Some(9), ..Default::default() };
        let s = resolve(&flags, &file, [64, 32]).unwrap();
        assert_eq!(s.method, Method::Tv);
        assert_eq!(s.iterations, 9);
        assert_eq!(s.decoder.channels, 4);
        assert_eq!(s.decoder.n_layers, DEFAULT_LAYERS);
        assert_eq!(s.decoder.input_hw, [4, 2]);
        assert_eq!(s.tv.lambda, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ReconFile>(r#"{"methd": "tv"}"#).is_err());
        assert!(serde_json::from_str::<ReconFile>(r#"{"decoder": {"layers": 3}}"#).is_err());
    }
}
