//! The nonlocal operator `W_a = sum_j a_j V_j`.
//!
//! `W_a` is never materialized: all rows share the same `L` weights, so the
//! neighbor table plus the weight vector is the whole operator.

use crate::block_matching::NeighborTable;
use crate::error::{Error, Result};

/// Weights `a_1..a_L` of one nonlocal filter.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalWeights(Vec<f64>);

impl NonlocalWeights {
    pub fn new(a: Vec<f64>) -> Self {
        NonlocalWeights(a)
    }

    /// `(1, 0, ..., 0)`, for which `W_a` is the identity.
    pub fn reference_only(len: usize) -> Self {
        let mut a = vec![0.0; len];
        if len > 0 {
            a[0] = 1.0;
        }
        NonlocalWeights(a)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check(values: usize, table: &NeighborTable, a: &NonlocalWeights) -> Result<()> {
    if values != table.pixel_count() {
        return Err(Error::DimensionMismatch(format!(
            "{values} values for a table over {} pixels",
            table.pixel_count()
        )));
    }
    if a.len() != table.neighbor_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} nonlocal weights for {} neighbors",
            a.len(),
            table.neighbor_count()
        )));
    }
    Ok(())
}

/// `out[n] = sum_j a_j * v[q(n, j)]`.
pub fn apply_nonlocal(v: &[f64], table: &NeighborTable, a: &NonlocalWeights) -> Result<Vec<f64>> {
    check(v.len(), table, a)?;
    let a = a.as_slice();
    Ok(table
        .rows()
        .map(|row| row.iter().zip(a).map(|(&q, w)| w * v[q as usize]).sum())
        .collect())
}

/// `W_a^T h`: scatter-accumulate `a_j * h[n]` into `q(n, j)`.
///
/// Accumulation runs in `(n, j)` order, so repeated indexes within a row are
/// summed and results do not depend on scheduling.
pub fn apply_nonlocal_adjoint(
    h: &[f64],
    table: &NeighborTable,
    a: &NonlocalWeights,
) -> Result<Vec<f64>> {
    check(h.len(), table, a)?;
    let a = a.as_slice();
    let mut out = vec![0.0; h.len()];
    for (row, &hn) in table.rows().zip(h) {
        for (&q, w) in row.iter().zip(a) {
            out[q as usize] += w * hn;
        }
    }
    Ok(out)
}

/// Gradient of the stage loss with respect to the nonlocal weights.
///
/// Inputs are the traced `h = phi(z)`, `h' = phi'(z)`, `u_hat = K u` and the
/// back-propagated `e_hat = Kbar^T e`:
///
/// `grad[j] = sum_n ( -h[n] e_hat[q(n,j)] - (W e_hat)[n] h'[n] u_hat[q(n,j)] )`
pub fn nonlocal_weight_gradient(
    h: &[f64],
    hprime: &[f64],
    u_hat: &[f64],
    e_hat: &[f64],
    table: &NeighborTable,
    a: &NonlocalWeights,
) -> Result<Vec<f64>> {
    let p = table.pixel_count();
    for (len, name) in [
        (h.len(), "h"),
        (hprime.len(), "h'"),
        (u_hat.len(), "u_hat"),
        (e_hat.len(), "e_hat"),
    ] {
        if len != p {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {len} values, table has {p} pixels"
            )));
        }
    }
    let w_e = apply_nonlocal(e_hat, table, a)?;
    let mut grad = vec![0.0; table.neighbor_count()];
    for (n, row) in table.rows().enumerate() {
        let lin = w_e[n] * hprime[n];
        for (g, &q) in grad.iter_mut().zip(row) {
            *g -= h[n] * e_hat[q as usize] + lin * u_hat[q as usize];
        }
    }
    Ok(grad)
}
