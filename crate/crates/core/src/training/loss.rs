use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::ssim_with_gradient;

/// Training loss on the final stage output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `0.5 * |u - u_gt|^2`
    #[default]
    Quadratic,
    /// `1 - ssim(u, u_gt)`
    Ssim,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" | "quadratic" => Ok(LossKind::Quadratic),
            "ssim" => Ok(LossKind::Ssim),
            other => Err(Error::InvalidInput(format!("unknown loss '{other}'"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Quadratic => "l2",
            LossKind::Ssim => "ssim",
        })
    }
}

/// Loss value and its gradient with respect to `u_t`.
pub fn loss_and_grad_output(u_t: &Image, u_gt: &Image, kind: LossKind) -> Result<(f64, Image)> {
    u_t.check_same_shape(u_gt, "loss")?;
    match kind {
        LossKind::Quadratic => {
            let e: Vec<f64> = u_t
                .data()
                .iter()
                .zip(u_gt.data())
                .map(|(a, b)| a - b)
                .collect();
            let loss = 0.5 * e.iter().map(|v| v * v).sum::<f64>();
            Ok((loss, Image::new(u_t.width(), u_t.height(), e)?))
        }
        LossKind::Ssim => {
            let (s, mut grad) = ssim_with_gradient(u_t, u_gt)?;
            grad.data_mut().iter_mut().for_each(|g| *g = -*g);
            Ok((1.0 - s, grad))
        }
    }
}
