use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::decoders::DecoderState;
use crate::error::{Error, Result};
use crate::mriops::{channels_to_complex, fft_plan, CoilMeasurement, ComplexGrid, Fft2c, SensitivityMaps};
use crate::tensor::{Real, Tape, Tensor};

/// Which measurement loss the decoder is fitted under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// One coil, two output channels: `½‖y − M F G(C)‖²`.
    SingleCoil,
    /// One complex output image per coil: `½ Σ_i ‖y_i − M F G_i(C)‖²`.
    Coilwise,
    /// One complex image seen through the coil maps:
    /// `½ Σ_i ‖y_i − M F S_i G(C)‖²`.
    Sensmap,
}

impl LossMode {
    /// Decoder output channels this mode needs for `n_coils` coils.
    pub fn out_channels(self, n_coils: usize) -> usize {
        match self {
            LossMode::SingleCoil | LossMode::Sensmap => 2,
            LossMode::Coilwise => 2 * n_coils,
        }
    }
}

/// A measurement loss bound to its data, evaluating value and gradient with
/// respect to the decoder output.
pub struct MeasurementLoss<'a> {
    mode: LossMode,
    y: &'a CoilMeasurement,
    maps: Option<&'a SensitivityMaps>,
    plan: Arc<Fft2c>,
    kept: Vec<bool>,
}

impl<'a> MeasurementLoss<'a> {
    pub fn new(mode: LossMode, y: &'a CoilMeasurement, maps: Option<&'a SensitivityMaps>) -> Result<Self> {
        let (h, w) = y.dims();
        match mode {
            LossMode::SingleCoil if y.num_coils() != 1 => {
                return Err(Error::shape(format!(
                    "single-coil loss given {} coils",
                    y.num_coils()
                )))
            }
            LossMode::Sensmap => {
                let s = maps.ok_or_else(|| Error::invalid("sensitivity-map loss needs maps"))?;
                if s.num_coils() != y.num_coils() || s.dims() != (h, w) {
                    return Err(Error::shape(format!(
                        "maps ({} coils, {:?}) vs measurement ({} coils, {:?})",
                        s.num_coils(),
                        s.dims(),
                        y.num_coils(),
                        (h, w)
                    )));
                }
            }
            _ => {}
        }
        Ok(MeasurementLoss {
            mode,
            y,
            maps: if mode == LossMode::Sensmap { maps } else { None },
            plan: fft_plan(h, w),
            kept: y.mask().kept_flags(h),
        })
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn measurement(&self) -> &CoilMeasurement {
        self.y
    }

    pub fn maps(&self) -> Option<&SensitivityMaps> {
        self.maps
    }

    pub fn out_channels(&self) -> usize {
        self.mode.out_channels(self.y.num_coils())
    }

    fn check_output<T: Real>(&self, output: &Tensor<T>) -> Result<()> {
        let (c, h, w) = output.chw()?;
        if c != self.out_channels() {
            return Err(Error::shape(format!(
                "{:?} loss with {} coils needs {} output channels, decoder has {c}",
                self.mode,
                self.y.num_coils(),
                self.out_channels()
            )));
        }
        if (h, w) != self.y.dims() {
            return Err(Error::shape(format!(
                "decoder output {:?} vs k-space {:?}",
                (h, w),
                self.y.dims()
            )));
        }
        Ok(())
    }

    /// Masked residual `M F x − y` in place of `x`'s k-space; returns `½‖r‖²`.
    fn residual(&self, img: &ComplexGrid, meas: &ComplexGrid) -> (ComplexGrid, f64) {
        let mut k = img.clone();
        self.plan.process(&mut k, false);
        let mut half_sq = 0.0;
        for ((v, &m), &keep) in k.data_mut().iter_mut().zip(meas.data()).zip(&self.kept) {
            *v = if keep { *v - m } else { Complex64::new(0.0, 0.0) };
            half_sq += v.norm_sqr();
        }
        (k, 0.5 * half_sq)
    }

    /// Loss value only.
    pub fn value<T: Real>(&self, output: &Tensor<T>) -> Result<f64> {
        self.check_output(output)?;
        let images = channels_to_complex(output)?;
        let mut total = 0.0;
        match self.maps {
            None => {
                for (img, meas) in images.iter().zip(self.y.coils()) {
                    total += self.residual(img, meas).1;
                }
            }
            Some(maps) => {
                for (s, meas) in maps.maps().iter().zip(self.y.coils()) {
                    total += self.residual(&s.mul(&images[0])?, meas).1;
                }
            }
        }
        Ok(total)
    }

    /// Loss value and its gradient with respect to every output channel.
    ///
    /// For the real/imaginary channel pair of a complex image `g`, the
    /// gradient of `½‖A g − y‖²` is `(Re, Im)` of `A^H (A g − y)`.
    pub fn value_and_grad<T: Real>(&self, output: &Tensor<T>) -> Result<(f64, Vec<T>)> {
        self.check_output(output)?;
        let images = channels_to_complex(output)?;
        let (h, w) = self.y.dims();
        let hw = h * w;
        let mut total = 0.0;
        let mut grad = vec![T::zero(); output.numel()];
        let mut write = |slot: usize, g: &ComplexGrid| {
            let (re, im) = grad[2 * slot * hw..2 * (slot + 1) * hw].split_at_mut(hw);
            for ((r, i), v) in re.iter_mut().zip(im.iter_mut()).zip(g.data()) {
                *r = T::of(v.re);
                *i = T::of(v.im);
            }
        };
        match self.maps {
            None => {
                for (slot, (img, meas)) in images.iter().zip(self.y.coils()).enumerate() {
                    let (mut r, l) = self.residual(img, meas);
                    total += l;
                    self.plan.process(&mut r, true);
                    write(slot, &r);
                }
            }
            Some(maps) => {
                let mut acc = ComplexGrid::zeros(h, w);
                for (s, meas) in maps.maps().iter().zip(self.y.coils()) {
                    let (mut r, l) = self.residual(&s.mul(&images[0])?, meas);
                    total += l;
                    self.plan.process(&mut r, true);
                    for ((a, &si), &ri) in acc.data_mut().iter_mut().zip(s.data()).zip(r.data()) {
                        *a += si.conj() * ri;
                    }
                }
                write(0, &acc);
            }
        }
        Ok((total, grad))
    }

    /// Evaluates the loss at the decoder's current parameters and writes the
    /// parameter gradients into the state.
    pub fn loss_and_grad<T: Real>(&self, state: &mut DecoderState<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let graph = state.record(&mut tape)?;
        let (loss, seed) = self.value_and_grad(tape.value(graph.output))?;
        let grads = tape.backward(graph.output, seed)?;
        tape.write_param_grads(&grads, state.params_mut())?;
        Ok(loss)
    }
}

/// `½ Σ_i ‖y_i − M F G_i(C)‖²` at the decoder's current parameters.
pub fn loss_coilwise<T: Real>(state: &DecoderState<T>, y: &CoilMeasurement) -> Result<f64> {
    MeasurementLoss::new(LossMode::Coilwise, y, None)?.value(&state.forward()?)
}

/// `½ Σ_i ‖y_i − M F S_i G(C)‖²` at the decoder's current parameters.
pub fn loss_sensmap<T: Real>(state: &DecoderState<T>, y: &CoilMeasurement, maps: &SensitivityMaps) -> Result<f64> {
    MeasurementLoss::new(LossMode::Sensmap, y, Some(maps))?.value(&state.forward()?)
}

/// `½‖y − M F G(C)‖²` for a single coil.
pub fn loss_single_coil<T: Real>(state: &DecoderState<T>, y: &CoilMeasurement) -> Result<f64> {
    MeasurementLoss::new(LossMode::SingleCoil, y, None)?.value(&state.forward()?)
}
