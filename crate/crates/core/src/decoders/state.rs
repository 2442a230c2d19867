use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use super::{Architecture, DecoderConfig};
use crate::error::{Error, Result};
use crate::tensor::{Interpolation, ParamStore, Real, Tape, Tensor, Var, BATCHNORM_EPS};

/// Structure of one decoder layer, for introspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    /// Interpolation and target size; `None` for the final layer.
    pub upsample: Option<(Interpolation, (usize, usize))>,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub relu: bool,
    pub batchnorm: bool,
}

/// A decoder ready to be fitted: its config, the fixed random input `z` and
/// the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<T: Real = f32> {
    config: DecoderConfig,
    z: Tensor<T>,
    params: ParamStore<T>,
}

/// Output and hidden activations recorded on a tape.
pub struct DecoderGraph {
    pub output: Var,
    /// Output of each hidden layer (after batch norm), in layer order.
    pub hidden: Vec<Var>,
}

pub(crate) fn param_name(layer: usize, part: &str) -> String {
    format!("layer{layer}.{part}")
}

pub(crate) const INPUT_NAME: &str = "input.z";

impl<T: Real> DecoderState<T> {
    /// Builds a state seeded from `config.seed`.
    pub fn init(config: &DecoderConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::init_with_rng(config, &mut rng)
    }

    /// Draws `z` from a standard normal, then the convolution weights
    /// uniformly in `±1/sqrt(fan_in)`; biases start at 0, batch-norm scales
    /// at 1 and shifts at 0.
    pub fn init_with_rng<R: Rng>(config: &DecoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [c0, h0, w0] = config.input_shape;
        let z = Tensor::from_fn(&[c0, h0, w0], |_| T::of(rng.sample::<f64, _>(StandardNormal)));
        let mut params = ParamStore::new();
        for spec in layer_specs(config) {
            let (o, c, k) = (spec.out_channels, spec.in_channels, spec.kernel);
            let bound = 1.0 / ((c * k * k) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let weight = Tensor::from_fn(&[o, c, k, k], |_| T::of(rng.sample(dist)));
            params.insert(param_name(spec.index, "conv.weight"), spec.index, weight)?;
            params.insert(param_name(spec.index, "conv.bias"), spec.index, Tensor::zeros(&[o]))?;
            if spec.batchnorm {
                params.insert(param_name(spec.index, "bn.scale"), spec.index, Tensor::full(&[o], T::one()))?;
                params.insert(param_name(spec.index, "bn.shift"), spec.index, Tensor::zeros(&[o]))?;
            }
        }
        Ok(DecoderState {
            config: config.clone(),
            z,
            params,
        })
    }

    pub(crate) fn from_parts(config: DecoderConfig, z: Tensor<T>, params: ParamStore<T>) -> Self {
        DecoderState { config, z, params }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn z(&self) -> &Tensor<T> {
        &self.z
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore<T>) -> Result<()> {
        let same_layout = params.len() == self.params.len()
            && params
                .iter()
                .zip(self.params.iter())
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape());
        if !same_layout {
            return Err(Error::ConfigMismatch("parameter layout differs from the decoder's".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        layer_specs(&self.config)
    }

    /// Same state in another precision.
    pub fn cast<U: Real>(&self) -> DecoderState<U> {
        DecoderState {
            config: self.config.clone(),
            z: self.z.cast(),
            params: self.params.cast(),
        }
    }

    fn param_var(&self, tape: &mut Tape<T>, layer: usize, part: &str) -> Result<Var> {
        let name = param_name(layer, part);
        let idx = self
            .params
            .index_of(&name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        tape.param(&self.params, idx)
    }

    /// Records the forward pass on `tape`.
    pub fn record(&self, tape: &mut Tape<T>) -> Result<DecoderGraph> {
        let mut x = tape.constant(self.z.clone())?;
        let mut hidden = Vec::with_capacity(self.config.n_layers - 1);
        for spec in self.layer_specs() {
            let i = spec.index;
            let named = |e: Error| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("layer {i} ({what})")),
                other => other,
            };
            if let Some((mode, size)) = spec.upsample {
                x = tape.upsample(x, size, mode).map_err(named)?;
            }
            let w = self.param_var(tape, i, "conv.weight")?;
            let b = self.param_var(tape, i, "conv.bias")?;
            x = tape.conv2d(x, w, b).map_err(named)?;
            if spec.relu {
                x = tape.relu(x).map_err(named)?;
            }
            if spec.batchnorm {
                let g = self.param_var(tape, i, "bn.scale")?;
                let s = self.param_var(tape, i, "bn.shift")?;
                x = tape.batchnorm(x, g, s, BATCHNORM_EPS).map_err(named)?;
                hidden.push(x);
            }
        }
        Ok(DecoderGraph { output: x, hidden })
    }

    /// Output image stack, `out_channels x H x W`.
    pub fn forward(&self) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape)?;
        Ok(tape.value(g.output).clone())
    }
}

/// Layer structure implied by a config.
pub fn layer_specs(config: &DecoderConfig) -> Vec<LayerSpec> {
    let n = config.n_layers;
    let k = config.arch.kernel_size();
    let mode = config.arch.interpolation();
    let sizes = config.size_schedule();
    let mut specs: Vec<LayerSpec> = sizes
        .iter()
        .enumerate()
        .map(|(j, &size)| LayerSpec {
            index: j + 1,
            upsample: Some((mode, size)),
            kernel: k,
            in_channels: if j == 0 { config.input_shape[0] } else { config.channels },
            out_channels: config.channels,
            relu: true,
            batchnorm: true,
        })
        .collect();
    specs.push(LayerSpec {
        index: n,
        upsample: None,
        kernel: 1,
        in_channels: config.channels,
        out_channels: config.out_channels,
        relu: false,
        batchnorm: false,
    });
    specs
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::ConvDecoder => "convdecoder",
            Architecture::DeepDecoder => "deepdecoder",
        }
    }
}
