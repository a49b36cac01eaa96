//! Starting points for training.

use crate::diffusion::{DiffusionModel, Hyperparameters, StageParameters};
use crate::error::{ensure, Error, Result};
use crate::param::{shrinkage_influence, LocalFilterCoeffs};

/// Plain-initialization knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Influence slope relative to `1 / m^2`; at 1 one stage with all filters
    /// soft-thresholds the image in the DCT frame.
    pub gain: f64,
    /// Clamp level of the initial influence functions.
    pub threshold: f64,
    pub lambda_raw: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            gain: 1.0,
            threshold: 40.0,
            lambda_raw: 0.0,
        }
    }
}

/// Plain initialization: filter `i` is DCT atom `i`, every `b_i = (1, 0, ..)`,
/// every `phi_i` approximates a scaled clamp.
pub fn initialize_model(
    hyper: Hyperparameters,
    stages: usize,
    options: &InitOptions,
) -> Result<DiffusionModel> {
    hyper.validate()?;
    ensure(stages >= 1, || "need at least one stage".into())?;
    let nc = hyper.coeffs_per_filter();
    ensure(hyper.filters <= nc, || {
        format!(
            "plain init needs N_k <= {nc} distinct atoms for {}x{} filters, got {}",
            hyper.filter_size, hyper.filter_size, hyper.filters
        )
    })?;
    ensure(options.threshold > 0.0 && options.gain.is_finite(), || {
        "init threshold must be positive and gain finite".into()
    })?;
    let m2 = (hyper.filter_size * hyper.filter_size) as f64;
    let phi = shrinkage_influence(hyper.rbf, options.gain / m2, options.threshold)?;
    let mut unit = vec![0.0; hyper.neighbors];
    unit[0] = 1.0;
    let stage = StageParameters {
        lambda_raw: options.lambda_raw,
        filters: (0..hyper.filters)
            .map(|i| {
                let mut c = vec![0.0; nc];
                c[i] = 1.0;
                LocalFilterCoeffs(c)
            })
            .collect(),
        nonlocal: vec![unit; hyper.filters],
        influence: vec![phi; hyper.filters],
    };
    DiffusionModel::new(hyper, vec![stage; stages])
}

/// Embeds a local (`L = 1`) model into an `L = neighbors` model by padding each
/// `b_i` with zeros. The result denoises identically to `base`.
pub fn extend_local_model(
    base: &DiffusionModel,
    neighbors: usize,
    patch: usize,
    window: usize,
) -> Result<DiffusionModel> {
    base.validate()?;
    if base.hyper.neighbors != 1 {
        return Err(Error::InvalidInput(format!(
            "local init needs an L = 1 base model, got L = {}",
            base.hyper.neighbors
        )));
    }
    let hyper = Hyperparameters {
        neighbors,
        patch,
        window,
        ..base.hyper
    };
    hyper.validate()?;
    let stages = base
        .stages
        .iter()
        .map(|s| StageParameters {
            nonlocal: s
                .nonlocal
                .iter()
                .map(|b| {
                    let mut v = vec![0.0; neighbors];
                    v[0] = b[0];
                    v
                })
                .collect(),
            ..s.clone()
        })
        .collect();
    DiffusionModel::new(hyper, stages)
}
