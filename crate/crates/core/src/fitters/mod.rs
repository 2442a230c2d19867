//! Fitting un-trained decoders to under-sampled measurements.

mod fit;
mod loss;
mod optim;
mod reconstruct;

pub use fit::{
    fit, FitConfig, FitResult, Optimizer, DEFAULT_ITERATIONS, DEFAULT_LR, FULL_CONVERGENCE_ITERATIONS,
    WARM_START_ITERATIONS,
};
pub use loss::{loss_coilwise, loss_sensmap, loss_single_coil, LossMode, MeasurementLoss};
pub use optim::{
    adam_step, gd_layerwise_step, AdamState, LayerStepsizes, StepSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use reconstruct::{
    average, ensemble_reconstruct, finalize, member_seeds, reconstruct, reconstruct_detailed, reconstruct_from,
    Ensemble, Reconstruction,
};

/// Default ensemble size.
pub const DEFAULT_ENSEMBLE: usize = 10;
/// Ensemble size of the best-score preset.
pub const BEST_SCORE_ENSEMBLE: usize = 20;
