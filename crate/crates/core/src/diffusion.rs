//! Multi-stage nonlocal reaction diffusion.
//!
//! One stage maps `u_prev` to
//!
//! `u = u_prev - ( sum_i Kbar_i W_i^T phi_i(W_i K_i u_prev) + lambda (u_prev - f) )`
//!
//! where `K_i` convolves with the local filter `k_i`, `Kbar_i` with its 180°
//! rotation, and `W_i` is the nonlocal operator of filter `i`. The neighbor
//! table is computed once on the noisy input and shared by every stage.

use rayon::prelude::*;

use crate::block_matching::{compute_neighbor_table, NeighborTable};
use crate::error::{ensure, Error, Result};
use crate::image::{convolve, Image, Kernel};
use crate::nonlocal::{apply_nonlocal, apply_nonlocal_adjoint, NonlocalWeights};
use crate::param::{
    dct_filter_bank, influence_eval, make_local_filter, make_nonlocal_filter, FilterBank,
    InfluenceWeights, LocalFilterCoeffs, RbfGrid,
};

/// Fixed architecture settings shared by all stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Local filter size `m`.
    pub filter_size: usize,
    /// Neighbors per pixel `L`, including the pixel itself.
    pub neighbors: usize,
    /// Filters per stage `N_k`.
    pub filters: usize,
    pub rbf: RbfGrid,
    /// Block-matching patch size.
    pub patch: usize,
    /// Block-matching search window size.
    pub window: usize,
    /// Noise level the model was trained for; informational.
    pub sigma: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            filter_size: 5,
            neighbors: 5,
            filters: 24,
            rbf: RbfGrid::default(),
            patch: 7,
            window: 31,
            sigma: 25.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let m = self.filter_size;
        ensure(m % 2 == 1 && m >= 3, || {
            format!("filter size {m} must be odd and >= 3")
        })?;
        ensure(self.neighbors >= 1, || "neighbor count must be >= 1".into())?;
        ensure(self.filters >= 1, || "need at least one filter".into())?;
        ensure(self.patch % 2 == 1, || {
            format!("patch size {} must be odd", self.patch)
        })?;
        ensure(self.window % 2 == 1, || {
            format!("window size {} must be odd", self.window)
        })?;
        ensure(self.window >= self.patch, || {
            "window must be at least the patch size".into()
        })?;
        ensure(self.sigma >= 0.0, || "sigma must be >= 0".into())?;
        self.rbf.validate()
    }

    pub fn coeffs_per_filter(&self) -> usize {
        self.filter_size * self.filter_size - 1
    }

    /// Trainable scalars in one stage.
    pub fn stage_len(&self) -> usize {
        1 + self.filters * (self.coeffs_per_filter() + self.neighbors + self.rbf.count)
    }
}

/// Trainable parameters of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParameters {
    /// `lambda = exp(lambda_raw)`.
    pub lambda_raw: f64,
    pub filters: Vec<LocalFilterCoeffs>,
    /// Raw nonlocal vectors `b_i`; the applied weights are `b_i / |b_i|`.
    pub nonlocal: Vec<Vec<f64>>,
    pub influence: Vec<InfluenceWeights>,
}

impl StageParameters {
    pub fn lambda(&self) -> f64 {
        self.lambda_raw.exp()
    }

    pub fn validate(&self, hyper: &Hyperparameters) -> Result<()> {
        let nk = hyper.filters;
        if self.filters.len() != nk || self.nonlocal.len() != nk || self.influence.len() != nk {
            return Err(Error::DimensionMismatch(format!(
                "stage has {}/{}/{} filters, expected {nk}",
                self.filters.len(),
                self.nonlocal.len(),
                self.influence.len()
            )));
        }
        for c in &self.filters {
            ensure(c.0.len() == hyper.coeffs_per_filter(), || {
                "local filter coefficient count mismatch".into()
            })?;
        }
        for b in &self.nonlocal {
            ensure(b.len() == hyper.neighbors, || {
                "nonlocal length mismatch".into()
            })?;
        }
        for w in &self.influence {
            ensure(
                w.grid == hyper.rbf && w.alpha.len() == hyper.rbf.count,
                || "influence grid mismatch".into(),
            )?;
        }
        ensure(!self.lambda_raw.is_nan(), || "lambda_raw is NaN".into())
    }

    /// Appends the stage in flat order: `lambda_raw, c_1..c_N, b_1..b_N, alpha_1..alpha_N`.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.push(self.lambda_raw);
        for c in &self.filters {
            out.extend_from_slice(&c.0);
        }
        for b in &self.nonlocal {
            out.extend_from_slice(b);
        }
        for w in &self.influence {
            out.extend_from_slice(&w.alpha);
        }
    }

    /// Inverse of [`write_flat`](Self::write_flat); `flat` must hold exactly one stage.
    pub fn from_flat(flat: &[f64], hyper: &Hyperparameters) -> Result<Self> {
        if flat.len() != hyper.stage_len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a stage of {}",
                flat.len(),
                hyper.stage_len()
            )));
        }
        let nk = hyper.filters;
        let nc = hyper.coeffs_per_filter();
        let mut rest = &flat[1..];
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let filters = (0..nk).map(|_| LocalFilterCoeffs(take(nc))).collect();
        let nonlocal = (0..nk).map(|_| take(hyper.neighbors)).collect();
        let influence = (0..nk)
            .map(|_| InfluenceWeights::new(hyper.rbf, take(hyper.rbf.count)))
            .collect::<Result<_>>()?;
        Ok(StageParameters {
            lambda_raw: flat[0],
            filters,
            nonlocal,
            influence,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub hyper: Hyperparameters,
    pub stages: Vec<StageParameters>,
}

impl DiffusionModel {
    pub fn new(hyper: Hyperparameters, stages: Vec<StageParameters>) -> Result<Self> {
        let model = DiffusionModel { hyper, stages };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        ensure(!self.stages.is_empty(), || {
            "model needs at least one stage".into()
        })?;
        self.stages.iter().try_for_each(|s| s.validate(&self.hyper))
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn param_count(&self) -> usize {
        self.stages.len() * self.hyper.stage_len()
    }

    /// Flattened parameters in gradient-vector order.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in &self.stages {
            s.write_flat(&mut out);
        }
        out
    }

    /// Model with the same hyperparameters and stage count, parameters taken from `flat`.
    pub fn with_vector(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a model of {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let stages = flat
            .chunks_exact(self.hyper.stage_len())
            .map(|chunk| StageParameters::from_flat(chunk, &self.hyper))
            .collect::<Result<_>>()?;
        Ok(DiffusionModel {
            hyper: self.hyper,
            stages,
        })
    }

    pub fn filter_bank(&self) -> Result<FilterBank> {
        dct_filter_bank(self.hyper.filter_size)
    }

    /// Neighbor table of the noisy input under this model's matching settings.
    pub fn neighbor_table(&self, f: &Image) -> Result<NeighborTable> {
        if f.width() < self.hyper.patch || f.height() < self.hyper.patch {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image is smaller than the model's {} px matching patch",
                f.width(),
                f.height(),
                self.hyper.patch
            )));
        }
        compute_neighbor_table(f, self.hyper.patch, self.hyper.window, self.hyper.neighbors)
    }
}

/// Stage parameters mapped to kernels, nonlocal weights and influence functions.
#[derive(Debug, Clone)]
pub struct PreparedStage {
    pub lambda: f64,
    pub kernels: Vec<Kernel>,
    pub rotated: Vec<Kernel>,
    pub weights: Vec<NonlocalWeights>,
    pub influence: Vec<InfluenceWeights>,
}

impl PreparedStage {
    pub fn new(stage: &StageParameters, bank: &FilterBank) -> Result<Self> {
        let kernels = stage
            .filters
            .iter()
            .map(|c| make_local_filter(c, bank))
            .collect::<Result<Vec<_>>>()?;
        let rotated = kernels.iter().map(Kernel::rotate180).collect();
        let weights = stage
            .nonlocal
            .iter()
            .map(|b| make_nonlocal_filter(b))
            .collect::<Result<_>>()?;
        Ok(PreparedStage {
            lambda: stage.lambda(),
            kernels,
            rotated,
            weights,
            influence: stage.influence.clone(),
        })
    }
}

/// Per-filter intermediates of one stage, reused by backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    /// `K u_prev`
    pub u_hat: Vec<f64>,
    /// `W K u_prev`
    pub z: Vec<f64>,
    /// `phi(z)`
    pub h: Vec<f64>,
    /// `phi'(z)`
    pub hprime: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub u_prev: Image,
    pub filters: Vec<FilterTrace>,
}

fn check_step_inputs(u_prev: &Image, f: &Image, table: &NeighborTable) -> Result<()> {
    u_prev.check_same_shape(f, "diffusion step")?;
    if table.pixel_count() != f.len() {
        return Err(Error::DimensionMismatch(format!(
            "neighbor table covers {} pixels, image has {}",
            table.pixel_count(),
            f.len()
        )));
    }
    Ok(())
}

/// One diffusion stage with already prepared operators.
pub fn diffusion_step_prepared(
    u_prev: &Image,
    f: &Image,
    stage: &PreparedStage,
    table: &NeighborTable,
) -> Result<(Image, StageTrace)> {
    check_step_inputs(u_prev, f, table)?;
    if stage
        .weights
        .iter()
        .any(|a| a.len() != table.neighbor_count())
    {
        return Err(Error::DimensionMismatch(
            "nonlocal weight length differs from table neighbor count".into(),
        ));
    }
    let (w, h) = (u_prev.width(), u_prev.height());
    let per_filter: Vec<(FilterTrace, Vec<f64>)> = (0..stage.kernels.len())
        .into_par_iter()
        .map(|i| -> Result<_> {
            let u_hat = convolve(u_prev, &stage.kernels[i])?.into_data();
            let z = apply_nonlocal(&u_hat, table, &stage.weights[i])?;
            let (phi, dphi) = influence_eval(&stage.influence[i], &z);
            let y = apply_nonlocal_adjoint(&phi, table, &stage.weights[i])?;
            let diffused = convolve(&Image::new(w, h, y)?, &stage.rotated[i])?.into_data();
            Ok((
                FilterTrace {
                    u_hat,
                    z,
                    h: phi,
                    hprime: dphi,
                },
                diffused,
            ))
        })
        .collect::<Result<_>>()?;

    let lambda = stage.lambda;
    let mut next: Vec<f64> = u_prev
        .data()
        .iter()
        .zip(f.data())
        .map(|(u, fv)| (1.0 - lambda) * u + lambda * fv)
        .collect();
    let mut filters = Vec::with_capacity(per_filter.len());
    for (trace, diffused) in per_filter {
        for (n, d) in next.iter_mut().zip(&diffused) {
            *n -= d;
        }
        filters.push(trace);
    }
    Ok((
        Image::new(w, h, next)?,
        StageTrace {
            u_prev: u_prev.clone(),
            filters,
        },
    ))
}

/// One diffusion stage; returns the updated image and the trace for backprop.
pub fn diffusion_step(
    u_prev: &Image,
    f: &Image,
    stage: &StageParameters,
    table: &NeighborTable,
    bank: &FilterBank,
) -> Result<(Image, StageTrace)> {
    diffusion_step_prepared(u_prev, f, &PreparedStage::new(stage, bank)?, table)
}

/// Runs all stages from `u_0 = f`, returning the output and every stage trace.
pub fn forward_with_traces(
    f: &Image,
    model: &DiffusionModel,
    table: &NeighborTable,
) -> Result<(Image, Vec<StageTrace>)> {
    let bank = model.filter_bank()?;
    let mut u = f.clone();
    let mut traces = Vec::with_capacity(model.stages.len());
    for stage in &model.stages {
        let (next, trace) = diffusion_step(&u, f, stage, table, &bank)?;
        traces.push(trace);
        u = next;
    }
    Ok((u, traces))
}

/// Denoises with a precomputed neighbor table.
pub fn denoise_with_table(
    f: &Image,
    model: &DiffusionModel,
    table: &NeighborTable,
) -> Result<Image> {
    let bank = model.filter_bank()?;
    let mut u = f.clone();
    for stage in &model.stages {
        u = diffusion_step(&u, f, stage, table, &bank)?.0;
    }
    Ok(u)
}

/// Computes the neighbor table on `f` once, then applies every stage.
pub fn denoise(f: &Image, model: &DiffusionModel) -> Result<Image> {
    model.validate()?;
    let table = model.neighbor_table(f)?;
    denoise_with_table(f, model, &table)
}
