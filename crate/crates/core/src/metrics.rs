//! PSNR and SSIM, both evaluated on raw double-precision intensities
//! (no clamping or 8-bit rounding).

use crate::error::{ensure, Result};
use crate::image::Image;

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

pub fn mse(u: &Image, v: &Image) -> Result<f64> {
    u.check_same_shape(v, "mse")?;
    let sum: f64 = u
        .data()
        .iter()
        .zip(v.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / u.len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak 255. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(u: &Image, v: &Image) -> Result<f64> {
    let e = mse(u, v)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / e).log10())
}

/// Formats a PSNR value, printing the zero-error sentinel as `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window_1d() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-mode separable filtering: output is `(w - n + 1) x (h - n + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (a, ga) in g.iter().enumerate() {
                acc += ga * tmp[(y + a) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Transpose of [`filter_valid`]: maps a `(w - n + 1) x (h - n + 1)` grid back to `w x h`.
fn filter_valid_adjoint(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for (a, ga) in g.iter().enumerate() {
                tmp[(y + a) * ow + x] += ga * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            let row = &mut out[y * w + x..y * w + x + n];
            for (o, ga) in row.iter_mut().zip(g) {
                *o += ga * v;
            }
        }
    }
    out
}

struct LocalStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn local_stats(u: &Image, v: &Image, g: &[f64]) -> LocalStats {
    let (w, h) = (u.width(), u.height());
    let x = u.data();
    let y = v.data();
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, w, h, g);
    let mu_y = filter_valid(y, w, h, g);
    let exx = filter_valid(&xx, w, h, g);
    let eyy = filter_valid(&yy, w, h, g);
    let exy = filter_valid(&xy, w, h, g);
    let var_x = exx.iter().zip(&mu_x).map(|(e, m)| e - m * m).collect();
    let var_y = eyy.iter().zip(&mu_y).map(|(e, m)| e - m * m).collect();
    let cov = exy
        .iter()
        .zip(mu_x.iter().zip(&mu_y))
        .map(|(e, (a, b))| e - a * b)
        .collect();
    LocalStats {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

fn check_ssim_inputs(u: &Image, v: &Image) -> Result<()> {
    u.check_same_shape(v, "ssim")?;
    ensure(
        u.width() >= SSIM_WINDOW && u.height() >= SSIM_WINDOW,
        || {
            format!(
                "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
                u.width(),
                u.height()
            )
        },
    )
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows.
pub fn ssim(u: &Image, v: &Image) -> Result<f64> {
    check_ssim_inputs(u, v)?;
    let g = gaussian_window_1d();
    let s = local_stats(u, v, &g);
    let n = s.mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (s.mu_x[i], s.mu_y[i]);
            ((2.0 * mx * my + C1) * (2.0 * s.cov[i] + C2))
                / ((mx * mx + my * my + C1) * (s.var_x[i] + s.var_y[i] + C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean SSIM together with its gradient with respect to the pixels of `u`.
pub fn ssim_with_gradient(u: &Image, v: &Image) -> Result<(f64, Image)> {
    check_ssim_inputs(u, v)?;
    let g = gaussian_window_1d();
    let (w, h) = (u.width(), u.height());
    let s = local_stats(u, v, &g);
    let n = s.mu_x.len();
    let inv_n = 1.0 / n as f64;

    // Per-window partials of the index w.r.t. (mu_x, var_x, cov).
    let mut d_mu = vec![0.0; n];
    let mut d_var = vec![0.0; n];
    let mut d_cov = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (s.mu_x[i], s.mu_y[i]);
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * s.cov[i] + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = s.var_x[i] + s.var_y[i] + C2;
        let idx = a1 * a2 / (b1 * b2);
        total += idx;
        d_mu[i] = (2.0 * my * a2 / (b1 * b2) - idx * 2.0 * mx / b1) * inv_n;
        d_var[i] = -idx / b2 * inv_n;
        d_cov[i] = 2.0 * a1 / (b1 * b2) * inv_n;
    }

    let offset: Vec<f64> = (0..n)
        .map(|i| d_mu[i] - 2.0 * d_var[i] * s.mu_x[i] - d_cov[i] * s.mu_y[i])
        .collect();
    let t_offset = filter_valid_adjoint(&offset, w, h, &g);
    let t_var = filter_valid_adjoint(&d_var, w, h, &g);
    let t_cov = filter_valid_adjoint(&d_cov, w, h, &g);
    let grad: Vec<f64> = (0..w * h)
        .map(|p| t_offset[p] + 2.0 * u.data()[p] * t_var[p] + v.data()[p] * t_cov[p])
        .collect();
    Ok((total * inv_n, Image::new(w, h, grad)?))
}
