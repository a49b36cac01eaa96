//! Losses, backpropagation, the optimizer loop and model files.

pub mod backprop;
pub mod dataset;
pub mod gradcheck;
pub mod init;
pub mod lbfgs;
pub mod loss;
pub mod model_io;

pub use backprop::{
    backprop_stage, loss_and_gradient, loss_and_gradient_prepared, prepare_samples, PreparedSample,
    StageGradient, TrainingSample,
};
pub use dataset::{load_dataset, make_dataset, write_dataset, Dataset, ManifestEntry};
pub use gradcheck::{gradient_check, perturb_model, relative_error, GradcheckReport};
pub use init::{extend_local_model, initialize_model, InitOptions};
pub use lbfgs::{minimize, IterationRecord, LbfgsConfig, LbfgsReport, Termination};
pub use loss::{loss_and_grad_output, LossKind};
pub use model_io::{load_model, save_model};

use crate::diffusion::{DiffusionModel, Hyperparameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    Plain(InitOptions),
    /// Trained `L = 1` model to embed.
    Local(Box<DiffusionModel>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: Hyperparameters,
    pub stages: usize,
    pub init: InitMode,
    pub loss: LossKind,
    pub lbfgs: LbfgsConfig,
}

impl TrainConfig {
    pub fn initial_model(&self) -> Result<DiffusionModel> {
        match &self.init {
            InitMode::Plain(options) => initialize_model(self.hyper, self.stages, options),
            InitMode::Local(base) => {
                let model = extend_local_model(
                    base,
                    self.hyper.neighbors,
                    self.hyper.patch,
                    self.hyper.window,
                )?;
                if model.stages.len() != self.stages {
                    log::warn!(
                        "base model has {} stages, config asks for {}; using the base model's",
                        model.stages.len(),
                        self.stages
                    );
                }
                Ok(model)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DiffusionModel,
    pub report: LbfgsReport,
}

/// One line of the training log.
pub fn format_record(r: &IterationRecord) -> String {
    format!(
        "iteration={} loss={:.17e} grad_norm={:.17e} step={:.17e} evaluations={}",
        r.iteration, r.loss, r.grad_norm, r.step, r.evaluations
    )
}

/// Jointly trains all stages on the full batch.
pub fn train(
    config: &TrainConfig,
    dataset: &[TrainingSample],
    on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    let model = config.initial_model()?;
    train_from(model, dataset, config.loss, &config.lbfgs, on_iteration)
}

/// Trains starting from `model`.
pub fn train_from(
    model: DiffusionModel,
    dataset: &[TrainingSample],
    loss: LossKind,
    lbfgs: &LbfgsConfig,
    on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let batch = prepare_samples(dataset, &model)?;
    let objective = |x: &[f64]| {
        let m = model.with_vector(x)?;
        loss_and_gradient_prepared(&m, &batch, loss)
    };
    let report = minimize(objective, model.to_vector(), lbfgs, on_iteration)?;
    if report.termination == Termination::LineSearchFailed {
        log::warn!(
            "line search failed after {} iterations; keeping the best iterate (loss {})",
            report.iterations,
            report.loss
        );
    }
    let model = model.with_vector(&report.x)?;
    Ok(TrainOutcome { model, report })
}
