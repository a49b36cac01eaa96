//! Maps from raw trainable coefficients to the constrained model pieces, and
//! the chain-rule factors back through each map.
//!
//! * local filters: `k = B c / |c|` over a DCT basis with the DC atom removed
//! * nonlocal filters: `a = b / |b|`
//! * influence functions: Gaussian RBF mixtures on an equidistant grid

use crate::error::{ensure, Error, Result};
use crate::image::Kernel;
use crate::nonlocal::NonlocalWeights;

/// Norms below this are treated as a broken parameter state.
pub const MIN_NORM: f64 = 1e-12;

/// Zero-mean orthonormal DCT atoms of size `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    size: usize,
    basis: Vec<Kernel>,
}

impl FilterBank {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of atoms, `m^2 - 1`.
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn atom(&self, r: usize) -> &Kernel {
        &self.basis[r]
    }

    pub fn atoms(&self) -> &[Kernel] {
        &self.basis
    }

    /// `B^T g`: coordinates of a tap vector in the bank.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.taps().iter().zip(g).map(|(x, y)| x * y).sum())
            .collect()
    }
}

/// 2-D DCT-II basis without the constant atom, ordered by
/// (vertical frequency, horizontal frequency).
pub fn dct_filter_bank(m: usize) -> Result<FilterBank> {
    ensure(m % 2 == 1 && m >= 3, || {
        format!("filter size must be odd and >= 3, got {m}")
    })?;
    let dct = |u: usize, x: usize| -> f64 {
        let s = if u == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        s * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * m) as f64).cos()
    };
    let mut basis = Vec::with_capacity(m * m - 1);
    for fu in 0..m {
        for fv in 0..m {
            if fu == 0 && fv == 0 {
                continue;
            }
            let mut taps = Vec::with_capacity(m * m);
            for y in 0..m {
                for x in 0..m {
                    taps.push(dct(fu, y) * dct(fv, x));
                }
            }
            let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
            taps.iter_mut().for_each(|t| *t /= norm);
            basis.push(Kernel::new(m, taps)?);
        }
    }
    Ok(FilterBank { size: m, basis })
}

/// Raw coefficients `c` of one local filter in the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFilterCoeffs(pub Vec<f64>);

fn checked_norm(v: &[f64], what: &str) -> Result<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n.is_finite() && n >= MIN_NORM {
        Ok(n)
    } else {
        Err(Error::InvalidInput(format!(
            "{what} has degenerate norm {n:e}"
        )))
    }
}

/// `(1/|v|) (I - v_hat v_hat^T) g` with `v_hat = v / |v|`.
fn normalize_chain(v: &[f64], g: &[f64], norm: f64) -> Vec<f64> {
    let radial: f64 = v.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / norm;
    v.iter()
        .zip(g)
        .map(|(vi, gi)| (gi - vi / norm * radial) / norm)
        .collect()
}

pub fn make_local_filter(c: &LocalFilterCoeffs, bank: &FilterBank) -> Result<Kernel> {
    if c.0.len() != bank.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a bank of {} atoms",
            c.0.len(),
            bank.len()
        )));
    }
    let norm = checked_norm(&c.0, "local filter coefficients")?;
    let m = bank.size;
    let mut taps = vec![0.0; m * m];
    for (coef, atom) in c.0.iter().zip(&bank.basis) {
        let s = coef / norm;
        for (t, b) in taps.iter_mut().zip(atom.taps()) {
            *t += s * b;
        }
    }
    Kernel::new(m, taps)
}

/// Gradient w.r.t. `c` given the gradient `g_k` w.r.t. the kernel taps.
pub fn local_filter_chain(
    c: &LocalFilterCoeffs,
    g_k: &Kernel,
    bank: &FilterBank,
) -> Result<Vec<f64>> {
    if c.0.len() != bank.len() || g_k.size() != bank.size {
        return Err(Error::DimensionMismatch(
            "coefficient, kernel and bank shapes disagree".into(),
        ));
    }
    let norm = checked_norm(&c.0, "local filter coefficients")?;
    let bt_g = bank.project(g_k.taps());
    Ok(normalize_chain(&c.0, &bt_g, norm))
}

pub fn make_nonlocal_filter(b: &[f64]) -> Result<NonlocalWeights> {
    let norm = checked_norm(b, "nonlocal coefficients")?;
    Ok(NonlocalWeights::new(b.iter().map(|v| v / norm).collect()))
}

/// Gradient w.r.t. the raw vector `b` given the gradient `g_a` w.r.t. `a = b/|b|`.
pub fn nonlocal_filter_chain(b: &[f64], g_a: &[f64]) -> Result<Vec<f64>> {
    if b.len() != g_a.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients vs {} gradient entries",
            b.len(),
            g_a.len()
        )));
    }
    let norm = checked_norm(b, "nonlocal coefficients")?;
    Ok(normalize_chain(b, g_a, norm))
}

/// Equidistant Gaussian RBF centers `mu_1 < ... < mu_M` with common width `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfGrid {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub gamma: f64,
}

impl Default for RbfGrid {
    fn default() -> Self {
        RbfGrid {
            count: 63,
            min: -310.0,
            max: 310.0,
            gamma: 10.0,
        }
    }
}

impl RbfGrid {
    pub fn validate(&self) -> Result<()> {
        ensure(self.count >= 2, || "need at least two RBF centers".into())?;
        ensure(self.max > self.min, || {
            "RBF range must be increasing".into()
        })?;
        ensure(self.gamma > 0.0 && self.gamma.is_finite(), || {
            format!("RBF gamma must be positive, got {}", self.gamma)
        })
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        self.min + j as f64 * self.spacing()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|j| self.center(j)).collect()
    }
}

/// Weights of one influence function `phi(z) = sum_j alpha_j exp(-(z - mu_j)^2 / (2 gamma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceWeights {
    pub grid: RbfGrid,
    pub alpha: Vec<f64>,
}

impl InfluenceWeights {
    pub fn new(grid: RbfGrid, alpha: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if alpha.len() != grid.count {
            return Err(Error::DimensionMismatch(format!(
                "{} RBF weights for {} centers",
                alpha.len(),
                grid.count
            )));
        }
        Ok(InfluenceWeights { grid, alpha })
    }

    /// `(phi(z), phi'(z))` at one point.
    #[inline]
    pub fn eval_one(&self, z: f64) -> (f64, f64) {
        let inv = 1.0 / (2.0 * self.grid.gamma * self.grid.gamma);
        let step = self.grid.spacing();
        let mut phi = 0.0;
        let mut dphi = 0.0;
        for (j, a) in self.alpha.iter().enumerate() {
            let d = z - (self.grid.min + j as f64 * step);
            let g = (-d * d * inv).exp();
            phi += a * g;
            dphi -= a * g * 2.0 * d * inv;
        }
        (phi, dphi)
    }
}

/// Evaluates `phi` and its derivative at every entry of `z`.
pub fn influence_eval(w: &InfluenceWeights, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    z.iter().map(|&v| w.eval_one(v)).unzip()
}

/// Row of the RBF design matrix at `z`.
pub fn rbf_design_row(grid: &RbfGrid, z: f64) -> Vec<f64> {
    let mut row = vec![0.0; grid.count];
    rbf_design_row_into(grid, z, &mut row);
    row
}

#[inline]
pub(crate) fn rbf_design_row_into(grid: &RbfGrid, z: f64, row: &mut [f64]) {
    let inv = 1.0 / (2.0 * grid.gamma * grid.gamma);
    let step = grid.spacing();
    for (j, r) in row.iter_mut().enumerate() {
        let d = z - (grid.min + j as f64 * step);
        *r = (-d * d * inv).exp();
    }
}

/// RBF weights whose mixture approximates `scale * clamp(z, -threshold, threshold)`,
/// i.e. `scale * (z - soft_threshold(z))`: a diffusion step with this
/// influence soft-shrinks unit-filter responses.
pub fn shrinkage_influence(grid: RbfGrid, scale: f64, threshold: f64) -> Result<InfluenceWeights> {
    grid.validate()?;
    // Quasi-interpolation: sum_j g(z - mu_j) ~ gamma sqrt(2 pi) / spacing.
    let w = grid.spacing() / (grid.gamma * (2.0 * std::f64::consts::PI).sqrt());
    let alpha = grid
        .centers()
        .into_iter()
        .map(|mu| scale * mu.clamp(-threshold, threshold) * w)
        .collect();
    InfluenceWeights::new(grid, alpha)
}
