//! Straight-from-definition reference implementations shared by the integration tests.
#![allow(dead_code)]

use nlrd::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    Image::from_fn(w, h, |_, _| r.random_range(0.0..255.0))
}

pub fn random_int_image(w: usize, h: usize, levels: u32, seed: u64) -> Image {
    let mut r = rng(seed);
    Image::from_fn(w, h, |_, _| r.random_range(0..levels) as f64)
}

/// Half-sample symmetric reflection, valid for one reflection at either end.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    assert!((0..n).contains(&j), "reflection out of range");
    j as usize
}

pub fn pixel(u: &Image, x: isize, y: isize) -> f64 {
    u.get(reflect(x, u.width()), reflect(y, u.height()))
}

/// `out(y, x) = sum_{a,b} k[a][b] u(y + r - a, x + r - b)`, `k` row-major `m x m`.
pub fn convolve_naive(u: &Image, k: &[f64], m: usize) -> Image {
    let r = (m / 2) as isize;
    Image::from_fn(u.width(), u.height(), |x, y| {
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                acc += k[a * m + b]
                    * pixel(u, x as isize + r - b as isize, y as isize + r - a as isize);
            }
        }
        acc
    })
}

pub fn rotate(k: &[f64]) -> Vec<f64> {
    k.iter().rev().copied().collect()
}

/// Dense `p x p` matrix of the mirror-padded convolution.
pub fn convolution_matrix(w: usize, h: usize, k: &[f64], m: usize) -> Vec<Vec<f64>> {
    let p = w * h;
    let r = (m / 2) as isize;
    let mut mat = vec![vec![0.0; p]; p];
    for y in 0..h {
        for x in 0..w {
            for a in 0..m {
                for b in 0..m {
                    let sx = reflect(x as isize + r - b as isize, w);
                    let sy = reflect(y as isize + r - a as isize, h);
                    mat[y * w + x][sy * w + sx] += k[a * m + b];
                }
            }
        }
    }
    mat
}

pub fn matvec(mat: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    mat.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn transpose(mat: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = mat.first().map_or(0, |r| r.len());
    (0..n).map(|j| mat.iter().map(|r| r[j]).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Orthonormal 2-D DCT-II atoms without the constant one, frequency pairs in
/// row-major order; the first frequency varies along rows.
pub fn dct_atoms(m: usize) -> Vec<Vec<f64>> {
    let c = |u: usize, x: usize| {
        let s = if u == 0 {
            1.0 / m as f64
        } else {
            2.0 / m as f64
        }
        .sqrt();
        s * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * m) as f64).cos()
    };
    let mut out = Vec::new();
    for fu in 0..m {
        for fv in 0..m {
            if fu + fv == 0 {
                continue;
            }
            out.push((0..m * m).map(|i| c(fu, i / m) * c(fv, i % m)).collect());
        }
    }
    out
}

/// Sum of squared patch differences under half-sample reflection.
pub fn patch_ssd(f: &Image, n1: usize, n2: usize, patch: usize) -> f64 {
    let w = f.width() as isize;
    let r = (patch / 2) as isize;
    let (x1, y1) = (n1 as isize % w, n1 as isize / w);
    let (x2, y2) = (n2 as isize % w, n2 as isize / w);
    let mut acc = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let d = pixel(f, x1 + dx, y1 + dy) - pixel(f, x2 + dx, y2 + dy);
            acc += d * d;
        }
    }
    acc
}

/// Exhaustive block matching: pixel itself first, then the `neighbors - 1`
/// closest candidates of the clipped window by (distance, index).
pub fn brute_force_table(
    f: &Image,
    patch: usize,
    window: usize,
    neighbors: usize,
) -> Vec<Vec<usize>> {
    let (w, h) = (f.width(), f.height());
    let wr = (window / 2) as isize;
    (0..w * h)
        .map(|n| {
            let (x, y) = ((n % w) as isize, (n / w) as isize);
            let mut cands: Vec<(f64, usize)> = (0..w * h)
                .filter(|&q| {
                    let (qx, qy) = ((q % w) as isize, (q / w) as isize);
                    q != n && (qx - x).abs() <= wr && (qy - y).abs() <= wr
                })
                .map(|q| (patch_ssd(f, n, q, patch), q))
                .collect();
            cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            std::iter::once(n)
                .chain(cands.into_iter().take(neighbors - 1).map(|c| c.1))
                .collect()
        })
        .collect()
}

/// Mean SSIM over all full 11x11 windows, computed per window with a 2-D Gaussian.
pub fn ssim_definition(u: &Image, v: &Image) -> f64 {
    let n = 11;
    let c = 5.0;
    let mut win = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let d2 = (a as f64 - c).powi(2) + (b as f64 - c).powi(2);
            win[a * n + b] = (-d2 / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|x| *x /= s);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=u.height() - n {
        for x0 in 0..=u.width() - n {
            let at = |im: &Image, a: usize, b: usize| im.get(x0 + b, y0 + a);
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    mx += win[a * n + b] * at(u, a, b);
                    my += win[a * n + b] * at(v, a, b);
                }
            }
            let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let dx = at(u, a, b) - mx;
                    let dy = at(v, a, b) - my;
                    sx += win[a * n + b] * dx * dx;
                    sy += win[a * n + b] * dy * dy;
                    sxy += win[a * n + b] * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sx + sy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// One local reaction-diffusion step written from its definition.
#[allow(clippy::too_many_arguments)]
pub fn local_step_oracle(
    u: &Image,
    f: &Image,
    lambda: f64,
    coeffs: &[Vec<f64>],
    alphas: &[Vec<f64>],
    grid: nlrd::param::RbfGrid,
    m: usize,
) -> Image {
    let atoms = dct_atoms(m);
    let mut out: Vec<f64> = u
        .data()
        .iter()
        .zip(f.data())
        .map(|(a, b)| a - lambda * (a - b))
        .collect();
    for (c, alpha) in coeffs.iter().zip(alphas) {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut k = vec![0.0; m * m];
        for (ci, atom) in c.iter().zip(&atoms) {
            for (t, a) in k.iter_mut().zip(atom) {
                *t += ci / norm * a;
            }
        }
        let response = convolve_naive(u, &k, m);
        let influenced = Image::from_fn(u.width(), u.height(), |x, y| {
            let z = response.get(x, y);
            (0..grid.count)
                .map(|j| {
                    let mu = grid.min + j as f64 * (grid.max - grid.min) / (grid.count - 1) as f64;
                    alpha[j] * (-(z - mu).powi(2) / (2.0 * grid.gamma * grid.gamma)).exp()
                })
                .sum()
        });
        let back = convolve_naive(&influenced, &rotate(&k), m);
        for (o, v) in out.iter_mut().zip(back.data()) {
            *o -= v;
        }
    }
    Image::new(u.width(), u.height(), out).unwrap()
}
