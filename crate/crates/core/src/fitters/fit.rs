use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::loss::{LossMode, MeasurementLoss};
use super::optim::{adam_step, gd_layerwise_step, AdamState, StepSchedule};
use crate::decoders::DecoderState;
use crate::error::{Error, Result};
use crate::mriops::{CoilMeasurement, SensitivityMaps};
use crate::tensor::{ParamStore, Real};

/// Default iteration budget of a fit from random initialization.
pub const DEFAULT_ITERATIONS: usize = 2500;
/// Budget used to fit the reference image a warm start is taken from.
pub const FULL_CONVERGENCE_ITERATIONS: usize = 10_000;
/// Budget of a warm-started fit, one tenth of the default.
pub const WARM_START_ITERATIONS: usize = 250;
/// Adam stepsize.
pub const DEFAULT_LR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Adam { lr: f64 },
    /// Plain gradient descent with a per-layer stepsize schedule.
    GdLayerwise { schedule: StepSchedule },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub loss_mode: LossMode,
    pub iterations: usize,
    pub optimizer: Optimizer,
    /// Record the loss every this many iterations; the final loss is always
    /// recorded.
    pub record_loss_every: usize,
    /// Keep Adam's per-layer effective stepsizes of every iteration.
    #[serde(default)]
    pub record_stepsizes: bool,
}

impl FitConfig {
    pub fn adam(loss_mode: LossMode, iterations: usize) -> Self {
        FitConfig {
            loss_mode,
            iterations,
            optimizer: Optimizer::Adam { lr: DEFAULT_LR },
            record_loss_every: 1,
            record_stepsizes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if let Optimizer::Adam { lr } = self.optimizer {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::invalid(format!("learning rate {lr} must be positive")));
            }
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::adam(LossMode::Coilwise, DEFAULT_ITERATIONS)
    }
}

#[derive(Clone, Debug)]
pub struct FitResult<T: Real = f32> {
    pub params: ParamStore<T>,
    /// `(iteration, loss)`; the loss at iteration `t` is evaluated before the
    /// `t`-th update, and the last entry `(iterations, _)` after the final one.
    pub loss_trace: Vec<(usize, f64)>,
    pub wall_seconds: f64,
    /// Adam's per-layer effective stepsizes, when requested.
    pub stepsizes: Option<StepSchedule>,
}

impl<T: Real> FitResult<T> {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().expect("trace is never empty").1
    }

    /// First recorded iteration whose loss is at or below `target`.
    pub fn iterations_to_reach(&self, target: f64) -> Option<usize> {
        self.loss_trace.iter().find(|(_, l)| *l <= target).map(|(t, _)| *t)
    }

    /// Loss trace as `iteration,loss` CSV with a header line.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (t, l) in &self.loss_trace {
            s.push_str(&format!("{t},{l:e}\n"));
        }
        s
    }
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence { iteration, loss: f64::NAN },
        other => other,
    }
}

/// Fits the decoder to the measurement for exactly `config.iterations`
/// updates. The state holds the fitted parameters afterwards.
pub fn fit<T: Real>(
    state: &mut DecoderState<T>,
    y: &CoilMeasurement,
    maps: Option<&SensitivityMaps>,
    config: &FitConfig,
) -> Result<FitResult<T>> {
    config.validate()?;
    let loss = MeasurementLoss::new(config.loss_mode, y, maps)?;
    if state.config().out_channels != loss.out_channels() {
        return Err(Error::shape(format!(
            "{:?} loss needs {} decoder output channels, config has {}",
            config.loss_mode,
            loss.out_channels(),
            state.config().out_channels
        )));
    }
    let start = Instant::now();
    let every = config.record_loss_every.max(1);
    let mut trace = Vec::with_capacity(config.iterations / every + 2);
    let mut adam = AdamState::new();
    let mut stepsizes = config.record_stepsizes.then(StepSchedule::default);

    for t in 0..config.iterations {
        let value = loss.loss_and_grad(state).map_err(|e| diverged(t, e))?;
        if !value.is_finite() {
            return Err(Error::Divergence { iteration: t, loss: value });
        }
        if t % every == 0 {
            trace.push((t, value));
        }
        match &config.optimizer {
            Optimizer::Adam { lr } => {
                let steps = adam_step(state.params_mut(), &mut adam, *lr).map_err(|e| diverged(t, e))?;
                if let Some(s) = stepsizes.as_mut() {
                    s.push(&steps);
                }
            }
            Optimizer::GdLayerwise { schedule } => {
                gd_layerwise_step(state.params_mut(), schedule, t).map_err(|e| diverged(t, e))?;
            }
        }
    }
    let final_loss = state
        .forward()
        .and_then(|out| loss.value(&out))
        .map_err(|e| diverged(config.iterations, e))?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            iteration: config.iterations,
            loss: final_loss,
        });
    }
    trace.push((config.iterations, final_loss));
    state.params_mut().iter_mut().for_each(|p| p.tensor.zero_grad());
    Ok(FitResult {
        params: state.params().clone(),
        loss_trace: trace,
        wall_seconds: start.elapsed().as_secs_f64(),
        stepsizes,
    })
}
