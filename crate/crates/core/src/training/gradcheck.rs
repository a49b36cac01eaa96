//! Analytic gradients against central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::diffusion::DiffusionModel;
use crate::error::Result;
use crate::training::backprop::{loss_and_gradient_prepared, loss_prepared, PreparedSample};
use crate::training::loss::LossKind;

/// Parameter blocks of the flat gradient vector.
pub const BLOCKS: [&str; 4] = ["lambda_raw", "c", "b", "alpha"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// `(block, relative error)` for [`BLOCKS`] in order, then `"all"`.
    pub blocks: Vec<(&'static str, f64)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.1).fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Block label of every flat parameter index.
pub fn block_of_each(model: &DiffusionModel) -> Vec<usize> {
    let h = &model.hyper;
    let nk = h.filters;
    let mut out = Vec::with_capacity(model.param_count());
    for _ in &model.stages {
        out.push(0);
        out.extend(std::iter::repeat_n(1, nk * h.coeffs_per_filter()));
        out.extend(std::iter::repeat_n(2, nk * h.neighbors));
        out.extend(std::iter::repeat_n(3, nk * h.rbf.count));
    }
    out
}

/// Randomizes every parameter of `model` around its current value so that no
/// block has a degenerate gradient.
pub fn perturb_model(model: &DiffusionModel, seed: u64) -> Result<DiffusionModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut x = model.to_vector();
    let alpha_scale = x
        .iter()
        .zip(block_of_each(model))
        .filter(|(_, b)| *b == 3)
        .fold(0.0f64, |m, (v, _)| m.max(v.abs()))
        .max(1.0);
    for (v, block) in x.iter_mut().zip(block_of_each(model)) {
        let r: f64 = n.sample(&mut rng);
        *v += match block {
            0 => 0.5 * r - 1.0,
            1 | 2 => 0.4 * r,
            _ => 0.3 * alpha_scale * r,
        };
    }
    model.with_vector(&x)
}

/// Compares the analytic batch gradient of `model` with central differences of
/// step `eps` in every raw parameter.
pub fn gradient_check(
    model: &DiffusionModel,
    batch: &[PreparedSample],
    kind: LossKind,
    eps: f64,
) -> Result<GradcheckReport> {
    let (_, analytic) = loss_and_gradient_prepared(model, batch, kind)?;
    let x = model.to_vector();
    let numeric = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut xp = x.clone();
            xp[i] = x[i] + eps;
            let lp = loss_prepared(&model.with_vector(&xp)?, batch, kind)?;
            xp[i] = x[i] - eps;
            let lm = loss_prepared(&model.with_vector(&xp)?, batch, kind)?;
            Ok((lp - lm) / (2.0 * eps))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = block_of_each(model);
    let mut blocks: Vec<(&'static str, f64)> = BLOCKS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let pick = |v: &[f64]| -> Vec<f64> {
                v.iter()
                    .zip(&labels)
                    .filter(|(_, b)| **b == k)
                    .map(|(x, _)| *x)
                    .collect()
            };
            (*name, relative_error(&pick(&analytic), &pick(&numeric)))
        })
        .collect();
    blocks.push(("all", relative_error(&analytic, &numeric)));
    Ok(GradcheckReport {
        blocks,
        analytic,
        numeric,
    })
}
