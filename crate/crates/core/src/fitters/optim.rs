use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates of the Adam optimizer, one buffer per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        AdamState { step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

fn check_grads<T: Real>(params: &ParamStore<T>) -> Result<()> {
    for p in params.iter() {
        match p.tensor.grad() {
            None => return Err(Error::invalid(format!("parameter {} has no gradient", p.name))),
            Some(g) if g.iter().any(|v| !v.is_finite()) => {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Per-layer `‖Δw‖ / ‖g‖` of one update, the stepsize plain gradient
/// descent would need to move each layer by the same distance.
pub type LayerStepsizes = BTreeMap<usize, f64>;

/// One bias-corrected Adam update using the gradients stored in `params`.
/// Returns each layer's effective stepsize.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) -> Result<LayerStepsizes> {
    if !(lr > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    check_grads(params)?;
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::shape("optimizer state does not match the parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let bc1 = T::of(1.0 - ADAM_BETA1.powi(t));
    let bc2 = T::of(1.0 - ADAM_BETA2.powi(t));
    let (lr_t, eps) = (T::of(lr), T::of(ADAM_EPS));
    let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.tensor.grad().expect("checked").to_vec();
        let entry = sums.entry(p.layer).or_default();
        for (((w, g), mi), vi) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * *g;
            *vi = b2 * *vi + (T::one() - b2) * *g * *g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            let delta = lr_t * m_hat / (v_hat.sqrt() + eps);
            *w -= delta;
            entry.0 += delta.as_f64().powi(2);
            entry.1 += g.as_f64().powi(2);
        }
        p.tensor.ensure_finite(&p.name)?;
    }
    Ok(sums
        .into_iter()
        .map(|(layer, (d, g))| (layer, if g > 0.0 { (d / g).sqrt() } else { 0.0 }))
        .collect())
}

/// Stepsize of every layer as a function of the iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Per layer, the stepsize at iterations `0, 1, …`; the last entry holds
    /// for all later iterations.
    rates: BTreeMap<usize, Vec<f64>>,
}

impl StepSchedule {
    /// The same constant stepsize for each listed layer.
    pub fn constant(layers: &[usize], rate: f64) -> Self {
        StepSchedule {
            rates: layers.iter().map(|&l| (l, vec![rate])).collect(),
        }
    }

    pub fn from_rates(rates: BTreeMap<usize, Vec<f64>>) -> Result<Self> {
        if rates.values().any(|r| r.is_empty() || r.iter().any(|v| !v.is_finite() || *v < 0.0)) {
            return Err(Error::invalid("stepsizes must be finite, non-negative and non-empty"));
        }
        Ok(StepSchedule { rates })
    }

    /// Appends one iteration's stepsizes.
    pub fn push(&mut self, step: &LayerStepsizes) {
        for (&layer, &rate) in step {
            self.rates.entry(layer).or_default().push(rate);
        }
    }

    pub fn set_layer(&mut self, layer: usize, rates: Vec<f64>) {
        self.rates.insert(layer, rates);
    }

    pub fn rate(&self, layer: usize, iteration: usize) -> Option<f64> {
        let r = self.rates.get(&layer)?;
        r.get(iteration).or_else(|| r.last()).copied()
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.rates.keys().copied()
    }

    pub fn rates(&self, layer: usize) -> Option<&[f64]> {
        self.rates.get(&layer).map(Vec::as_slice)
    }
}

/// Plain gradient descent with a per-layer stepsize at iteration `t`.
pub fn gd_layerwise_step<T: Real>(params: &mut ParamStore<T>, schedule: &StepSchedule, t: usize) -> Result<()> {
    check_grads(params)?;
    for p in params.iter() {
        if schedule.rate(p.layer, t).is_none() {
            return Err(Error::invalid(format!("stepsize schedule has no entry for layer {}", p.layer)));
        }
    }
    for p in params.iter_mut() {
        let eta = T::of(schedule.rate(p.layer, t).expect("checked"));
        let grad = p.tensor.grad().expect("checked").to_vec();
        for (w, g) in p.tensor.data_mut().iter_mut().zip(grad) {
            *w -= eta * g;
        }
        p.tensor.ensure_finite(&p.name)?;
    }
    Ok(())
}
