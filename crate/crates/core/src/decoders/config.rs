use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Interpolation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Nearest-neighbor upsampling and 3x3 convolutions.
    ConvDecoder,
    /// Bilinear upsampling and 1x1 convolutions.
    DeepDecoder,
}

impl Architecture {
    pub fn kernel_size(self) -> usize {
        match self {
            Architecture::ConvDecoder => 3,
            Architecture::DeepDecoder => 1,
        }
    }

    pub fn interpolation(self) -> Interpolation {
        match self {
            Architecture::ConvDecoder => Interpolation::Nearest,
            Architecture::DeepDecoder => Interpolation::Bilinear,
        }
    }
}

/// How hidden-layer resolutions grow from the input to the output size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeSchedule {
    /// Constant magnification per layer.
    #[default]
    Geometric,
    /// Constant increment per layer.
    Linear,
}

/// Architecture and seed of an un-trained decoder.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub arch: Architecture,
    /// Total layer count, including the final 1x1 combination layer.
    pub n_layers: usize,
    /// Channels of every hidden layer.
    pub channels: usize,
    /// `(channels, height, width)` of the fixed random input.
    pub input_shape: [usize; 3],
    /// `(height, width)` of the output image.
    pub output_shape: [usize; 2],
    /// 2 for a single complex image, `2 n_c` for one image per coil.
    pub out_channels: usize,
    pub seed: u64,
    #[serde(default)]
    pub schedule: SizeSchedule,
}

impl DecoderConfig {
    /// Knee setting: 8 layers, 256 channels, input 256 x 10 x 5.
    pub fn knee(output_shape: [usize; 2], out_channels: usize) -> Self {
        DecoderConfig {
            arch: Architecture::ConvDecoder,
            n_layers: 8,
            channels: 256,
            input_shape: [256, 10, 5],
            output_shape,
            out_channels,
            seed: 0,
            schedule: SizeSchedule::Geometric,
        }
    }

    /// Brain setting: 5 layers, 64 channels.
    pub fn brain(output_shape: [usize; 2], out_channels: usize) -> Self {
        DecoderConfig {
            n_layers: 5,
            channels: 64,
            ..Self::knee(output_shape, out_channels)
        }
    }

    /// 8x-accelerated knee setting: 6 layers, 64 channels, 4 x 4 input.
    pub fn knee_8x(output_shape: [usize; 2], out_channels: usize) -> Self {
        DecoderConfig {
            n_layers: 6,
            channels: 64,
            input_shape: [256, 4, 4],
            ..Self::knee(output_shape, out_channels)
        }
    }

    /// Laptop-sized ConvDecoder used for the synthetic phantoms: input
    /// resolution one sixteenth of the output, input channels equal to the
    /// hidden width.
    pub fn desk(output_shape: [usize; 2], out_channels: usize, n_layers: usize, channels: usize) -> Self {
        let [h, w] = output_shape;
        DecoderConfig {
            arch: Architecture::ConvDecoder,
            n_layers,
            channels,
            input_shape: [channels, (h / 16).max(1), (w / 16).max(1)],
            output_shape,
            out_channels,
            seed: 0,
            schedule: SizeSchedule::Geometric,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [c0, h0, w0] = self.input_shape;
        let [h, w] = self.output_shape;
        if self.n_layers < 2 {
            return Err(Error::invalid("a decoder needs at least 2 layers"));
        }
        if self.channels == 0 || c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::invalid("zero-sized decoder dimension"));
        }
        if h0 > h || w0 > w {
            return Err(Error::invalid(format!(
                "input {h0}x{w0} larger than output {h}x{w}"
            )));
        }
        if self.out_channels == 0 || self.out_channels % 2 != 0 {
            return Err(Error::invalid(format!(
                "out_channels {} must be a positive even number",
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Spatial size of hidden layers `1..n_layers`. The last entry is the
    /// output size; the final layer does not upsample.
    pub fn size_schedule(&self) -> Vec<(usize, usize)> {
        let n = self.n_layers;
        let [_, h0, w0] = self.input_shape;
        let [h, w] = self.output_shape;
        let steps = (n - 1) as f64;
        let interp = |s0: usize, s1: usize, i: usize| -> usize {
            let t = i as f64 / steps;
            let v = match self.schedule {
                SizeSchedule::Geometric => s0 as f64 * (s1 as f64 / s0 as f64).powf(t),
                SizeSchedule::Linear => s0 as f64 + (s1 as f64 - s0 as f64) * t,
            };
            (v.round() as usize).clamp(s0, s1)
        };
        (1..n)
            .map(|i| {
                if i == n - 1 {
                    (h, w)
                } else {
                    (interp(h0, h, i), interp(w0, w, i))
                }
            })
            .collect()
    }

    /// Closed-form trainable parameter count.
    pub fn num_params(&self) -> usize {
        let k = self.arch.kernel_size();
        let c = self.channels;
        let first = self.input_shape[0] * c * k * k + 3 * c;
        let hidden = (self.n_layers - 2) * (c * c * k * k + 3 * c);
        let last = c * self.out_channels + self.out_channels;
        first + hidden + last
    }

    /// Canonical description of everything except the seed.
    pub fn architecture_key(&self) -> String {
        format!(
            "arch={:?};n_layers={};channels={};input_shape={:?};output_shape={:?};out_channels={};schedule={:?}",
            self.arch,
            self.n_layers,
            self.channels,
            self.input_shape,
            self.output_shape,
            self.out_channels,
            self.schedule
        )
    }

    pub fn architecture_digest(&self) -> [u8; 32] {
        Sha256::digest(self.architecture_key().as_bytes()).into()
    }
}
