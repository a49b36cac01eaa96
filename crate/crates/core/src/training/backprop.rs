//! Reverse pass through the unrolled diffusion.
//!
//! With `e = dl/du_t` and the traced `u_hat = K u_prev`, `z = W u_hat`,
//! `h = phi(z)`, `h' = phi'(z)`, one stage contributes
//!
//! * `dl/dlambda   = -(u_prev - f)^T e`
//! * `dl/dk        = -(rot180(Y^T e) + U^T W^T diag(h') W Kbar^T e)`
//! * `dl/dalpha_j  = -sum_n G_j(z_n) (W Kbar^T e)_n`
//! * `dl/da`       via [`nonlocal_weight_gradient`]
//! * `dl/du_prev   = (1 - lambda) e - sum_i K^T W^T diag(h') W Kbar^T e`
//!
//! where every `K^T`, `Kbar^T` is the exact transpose of the mirror-padded
//! convolution used in the forward pass.

use rayon::prelude::*;

use crate::block_matching::NeighborTable;
use crate::diffusion::{
    forward_with_traces, DiffusionModel, PreparedStage, StageParameters, StageTrace,
};
use crate::error::{Error, Result};
use crate::image::{convolve_adjoint, kernel_gradient, Image};
use crate::nonlocal::{apply_nonlocal, apply_nonlocal_adjoint, nonlocal_weight_gradient};
use crate::param::{local_filter_chain, nonlocal_filter_chain, rbf_design_row_into, FilterBank};
use crate::training::loss::{loss_and_grad_output, LossKind};

/// Clean/noisy training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub f: Image,
    pub u_gt: Image,
}

impl TrainingSample {
    pub fn new(f: Image, u_gt: Image) -> Result<Self> {
        f.check_same_shape(&u_gt, "training sample")?;
        Ok(TrainingSample { f, u_gt })
    }
}

/// Sample with its neighbor table, which stays fixed during training.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample: TrainingSample,
    pub table: NeighborTable,
}

impl PreparedSample {
    pub fn new(sample: TrainingSample, model: &DiffusionModel) -> Result<Self> {
        let table = model.neighbor_table(&sample.f)?;
        Ok(PreparedSample { sample, table })
    }
}

pub fn prepare_samples(
    samples: &[TrainingSample],
    model: &DiffusionModel,
) -> Result<Vec<PreparedSample>> {
    samples
        .par_iter()
        .map(|s| PreparedSample::new(s.clone(), model))
        .collect()
}

/// Gradient of the loss with respect to the raw parameters of one stage, flat
/// in stage order (`lambda_raw, c_1..c_N, b_1..b_N, alpha_1..alpha_N`).
#[derive(Debug, Clone, PartialEq)]
pub struct StageGradient {
    pub lambda_raw: f64,
    pub filters: Vec<Vec<f64>>,
    pub nonlocal: Vec<Vec<f64>>,
    pub influence: Vec<Vec<f64>>,
}

impl StageGradient {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.push(self.lambda_raw);
        for block in [&self.filters, &self.nonlocal, &self.influence] {
            for g in block {
                out.extend_from_slice(g);
            }
        }
    }
}

struct FilterGradient {
    c: Vec<f64>,
    b: Vec<f64>,
    alpha: Vec<f64>,
    e_prev: Vec<f64>,
}

/// Back-propagates `e_t = dl/du_t` through one stage.
pub fn backprop_stage(
    e_t: &Image,
    trace: &StageTrace,
    stage: &StageParameters,
    f: &Image,
    table: &NeighborTable,
    bank: &FilterBank,
) -> Result<(StageGradient, Image)> {
    let prepared = PreparedStage::new(stage, bank)?;
    let u_prev = &trace.u_prev;
    e_t.check_same_shape(u_prev, "upstream gradient")?;
    f.check_same_shape(u_prev, "noisy input")?;
    if trace.filters.len() != stage.filters.len() {
        return Err(Error::DimensionMismatch(format!(
            "trace has {} filters, stage has {}",
            trace.filters.len(),
            stage.filters.len()
        )));
    }
    if table.pixel_count() != u_prev.len() {
        return Err(Error::DimensionMismatch(
            "neighbor table does not match the traced image".into(),
        ));
    }
    let (w, h) = (u_prev.width(), u_prev.height());
    let m = bank.size();
    let neg_e = Image::new(w, h, e_t.data().iter().map(|v| -v).collect())?;

    let per_filter: Vec<FilterGradient> = (0..prepared.kernels.len())
        .into_par_iter()
        .map(|i| -> Result<FilterGradient> {
            let ft = &trace.filters[i];
            let a = &prepared.weights[i];
            let e_hat = convolve_adjoint(e_t, &prepared.rotated[i])?.into_data();
            let w_e = apply_nonlocal(&e_hat, table, a)?;
            // dl/dz = -h' * (W e_hat); dl/du_hat = W^T dl/dz
            let dz: Vec<f64> = ft.hprime.iter().zip(&w_e).map(|(d, we)| -d * we).collect();
            let du_hat = Image::new(w, h, apply_nonlocal_adjoint(&dz, table, a)?)?;
            let e_prev = convolve_adjoint(&du_hat, &prepared.kernels[i])?.into_data();

            // Kernel taps enter through K (u_hat) and through Kbar (output).
            let y = Image::new(w, h, apply_nonlocal_adjoint(&ft.h, table, a)?)?;
            let through_k = kernel_gradient(u_prev, &du_hat, m)?;
            let through_kbar = kernel_gradient(&y, &neg_e, m)?.rotate180();
            let g_k = crate::image::Kernel::new(
                m,
                through_k
                    .taps()
                    .iter()
                    .zip(through_kbar.taps())
                    .map(|(x, y)| x + y)
                    .collect(),
            )?;
            let c = local_filter_chain(&stage.filters[i], &g_k, bank)?;

            let g_a = nonlocal_weight_gradient(&ft.h, &ft.hprime, &ft.u_hat, &e_hat, table, a)?;
            let b = nonlocal_filter_chain(&stage.nonlocal[i], &g_a)?;

            let grid = &prepared.influence[i].grid;
            let mut alpha = vec![0.0; grid.count];
            let mut row = vec![0.0; grid.count];
            for (z, we) in ft.z.iter().zip(&w_e) {
                rbf_design_row_into(grid, *z, &mut row);
                for (g, r) in alpha.iter_mut().zip(&row) {
                    *g -= r * we;
                }
            }
            Ok(FilterGradient {
                c,
                b,
                alpha,
                e_prev,
            })
        })
        .collect::<Result<_>>()?;

    let lambda = prepared.lambda;
    let dl_dlambda: f64 = -u_prev
        .data()
        .iter()
        .zip(f.data())
        .zip(e_t.data())
        .map(|((u, fv), e)| (u - fv) * e)
        .sum::<f64>();
    // lambda = exp(lambda_raw)
    let lambda_raw = lambda * dl_dlambda;

    let mut e_prev: Vec<f64> = e_t.data().iter().map(|e| (1.0 - lambda) * e).collect();
    let mut grad = StageGradient {
        lambda_raw,
        filters: Vec::with_capacity(per_filter.len()),
        nonlocal: Vec::with_capacity(per_filter.len()),
        influence: Vec::with_capacity(per_filter.len()),
    };
    for fg in per_filter {
        for (acc, v) in e_prev.iter_mut().zip(&fg.e_prev) {
            *acc += v;
        }
        grad.filters.push(fg.c);
        grad.nonlocal.push(fg.b);
        grad.influence.push(fg.alpha);
    }
    Ok((grad, Image::new(w, h, e_prev)?))
}

/// Loss and flat gradient of one prepared sample.
pub fn sample_loss_and_gradient(
    model: &DiffusionModel,
    sample: &PreparedSample,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let f = &sample.sample.f;
    let (u_t, traces) = forward_with_traces(f, model, &sample.table)?;
    let (loss, mut e) = loss_and_grad_output(&u_t, &sample.sample.u_gt, kind)?;
    let bank = model.filter_bank()?;
    let mut stage_grads = Vec::with_capacity(model.stages.len());
    for (stage, trace) in model.stages.iter().zip(&traces).rev() {
        let (g, e_prev) = backprop_stage(&e, trace, stage, f, &sample.table, &bank)?;
        stage_grads.push(g);
        e = e_prev;
    }
    let mut flat = Vec::with_capacity(model.param_count());
    for g in stage_grads.iter().rev() {
        g.write_flat(&mut flat);
    }
    Ok((loss, flat))
}

/// Loss of one prepared sample, forward pass only.
pub fn sample_loss(model: &DiffusionModel, sample: &PreparedSample, kind: LossKind) -> Result<f64> {
    let u_t = crate::diffusion::denoise_with_table(&sample.sample.f, model, &sample.table)?;
    Ok(loss_and_grad_output(&u_t, &sample.sample.u_gt, kind)?.0)
}

/// Pairwise sum in a fixed tree shape, independent of how the parts were computed.
fn tree_reduce(mut parts: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((la, mut ga)) = it.next() {
            if let Some((lb, gb)) = it.next() {
                for (x, y) in ga.iter_mut().zip(&gb) {
                    *x += y;
                }
                next.push((la + lb, ga));
            } else {
                next.push((la, ga));
            }
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Total loss over the batch and its gradient in flat parameter order.
pub fn loss_and_gradient_prepared(
    model: &DiffusionModel,
    batch: &[PreparedSample],
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let parts = batch
        .par_iter()
        .map(|s| sample_loss_and_gradient(model, s, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(tree_reduce(parts))
}

/// Total loss over the batch, forward passes only.
pub fn loss_prepared(
    model: &DiffusionModel,
    batch: &[PreparedSample],
    kind: LossKind,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let parts = batch
        .par_iter()
        .map(|s| sample_loss(model, s, kind).map(|l| (l, Vec::new())))
        .collect::<Result<Vec<_>>>()?;
    Ok(tree_reduce(parts).0)
}

/// Computes neighbor tables for every sample, then the batch loss and gradient.
pub fn loss_and_gradient(
    model: &DiffusionModel,
    batch: &[TrainingSample],
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    model.validate()?;
    let prepared = prepare_samples(batch, model)?;
    loss_and_gradient_prepared(model, &prepared, kind)
}
