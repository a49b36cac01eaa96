//! Grayscale raster, mirror-padded convolution and noise synthesis.
//!
//! Pixels are stored row-major as `f64`. Every convolution in the crate uses
//! half-sample symmetric padding: the sample at `-1` mirrors the sample at `0`,
//! so `[a b c]` extends to `... b a | a b c | c b ...`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with mirror extension outside the raster.
    #[inline]
    pub fn get_mirrored(&self, x: isize, y: isize) -> f64 {
        let x = mirror_index(x, self.width);
        let y = mirror_index(y, self.height);
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Copy of the `size`×`size` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        ensure(x0 + w <= self.width && y0 + h <= self.height, || {
            format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )
        })?;
        Ok(Image::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Centered crop; returns the crop and its top-left offset.
    pub fn center_crop(&self, w: usize, h: usize) -> Result<(Image, (usize, usize))> {
        ensure(w <= self.width && h <= self.height, || {
            format!(
                "cannot center-crop {w}x{h} from {}x{}",
                self.width, self.height
            )
        })?;
        let x0 = (self.width - w) / 2;
        let y0 = (self.height - h) / 2;
        Ok((self.crop(x0, y0, w, h)?, (x0, y0)))
    }
}

/// Half-sample symmetric reflection of `i` into `0..n`.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as isize;
    let period = 2 * n;
    let r = i.rem_euclid(period);
    (if r < n { r } else { period - 1 - r }) as usize
}

/// Square odd-sized filter, taps stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        ensure(size % 2 == 1, || format!("kernel size {size} is not odd"))?;
        if taps.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "{} taps for a {size}x{size} kernel",
                taps.len()
            )));
        }
        Ok(Kernel { size, taps })
    }

    /// Center tap one, all others zero.
    pub fn delta(size: usize) -> Result<Self> {
        let mut taps = vec![0.0; size * size];
        if size % 2 == 1 {
            taps[size * size / 2] = 1.0;
        }
        Kernel::new(size, taps)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    /// Taps reversed along both axes.
    pub fn rotate180(&self) -> Kernel {
        let mut taps = self.taps.clone();
        taps.reverse();
        Kernel {
            size: self.size,
            taps,
        }
    }
}

struct Padded {
    width: usize,
    data: Vec<f64>,
}

fn pad(u: &Image, r: usize) -> Padded {
    let pw = u.width + 2 * r;
    let ph = u.height + 2 * r;
    let mut data = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let y = mirror_index(py as isize - r as isize, u.height);
        let row = &u.data[y * u.width..(y + 1) * u.width];
        for px in 0..pw {
            data.push(row[mirror_index(px as isize - r as isize, u.width)]);
        }
    }
    Padded { width: pw, data }
}

fn check_kernel_fits(u: &Image, size: usize) -> Result<()> {
    ensure(size % 2 == 1, || format!("kernel size {size} is not odd"))?;
    ensure(u.width >= size && u.height >= size, || {
        format!(
            "{}x{} image is smaller than a {size}x{size} kernel",
            u.width, u.height
        )
    })
}

/// 2-D convolution with mirror boundary:
/// `out(y, x) = sum_{a,b} k(a, b) * u(y + r - a, x + r - b)`.
pub fn convolve(u: &Image, k: &Kernel) -> Result<Image> {
    check_kernel_fits(u, k.size)?;
    let m = k.size;
    let r = k.radius();
    let p = pad(u, r);
    let w = u.width;
    let mut out = vec![0.0; u.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..m {
                let base = (y + 2 * r - a) * p.width + x + 2 * r;
                let krow = &k.taps[a * m..(a + 1) * m];
                for (b, &t) in krow.iter().enumerate() {
                    acc += t * p.data[base - b];
                }
            }
            *o = acc;
        }
    });
    Image::new(u.width, u.height, out)
}

/// Exact transpose of [`convolve`] including the mirror boundary, so that
/// `<convolve(u, k), e> = <u, convolve_adjoint(e, k)>` holds for all images.
pub fn convolve_adjoint(e: &Image, k: &Kernel) -> Result<Image> {
    check_kernel_fits(e, k.size)?;
    let m = k.size;
    let r = k.radius();
    let (w, h) = (e.width, e.height);
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    // Full correlation onto the padded grid, then fold the border back.
    let mut grid = vec![0.0; pw * ph];
    grid.par_chunks_mut(pw).enumerate().for_each(|(py, row)| {
        for (px, g) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..m {
                let ey = py as isize - 2 * r as isize + a as isize;
                if ey < 0 || ey >= h as isize {
                    continue;
                }
                let erow = &e.data[ey as usize * w..(ey as usize + 1) * w];
                for b in 0..m {
                    let ex = px as isize - 2 * r as isize + b as isize;
                    if ex < 0 || ex >= w as isize {
                        continue;
                    }
                    acc += k.taps[a * m + b] * erow[ex as usize];
                }
            }
            *g = acc;
        }
    });
    let mut out = vec![0.0; w * h];
    for py in 0..ph {
        let y = mirror_index(py as isize - r as isize, h);
        for px in 0..pw {
            let x = mirror_index(px as isize - r as isize, w);
            out[y * w + x] += grid[py * pw + px];
        }
    }
    Image::new(w, h, out)
}

/// Gradient of `<g, convolve(u, k)>` with respect to the taps of `k`.
pub fn kernel_gradient(u: &Image, g: &Image, size: usize) -> Result<Kernel> {
    u.check_same_shape(g, "kernel gradient")?;
    check_kernel_fits(u, size)?;
    let r = size / 2;
    let p = pad(u, r);
    let w = u.width;
    let taps: Vec<f64> = (0..size * size)
        .into_par_iter()
        .map(|t| {
            let (a, b) = (t / size, t % size);
            let mut acc = 0.0;
            for y in 0..u.height {
                let prow = &p.data[(y + 2 * r - a) * p.width + 2 * r - b..];
                let grow = &g.data[y * w..(y + 1) * w];
                for (x, &gv) in grow.iter().enumerate() {
                    acc += gv * prow[x];
                }
            }
            acc
        })
        .collect();
    Kernel::new(size, taps)
}

/// `u + v` with `v` iid N(0, sigma²) drawn from a ChaCha8 stream seeded by `seed`.
pub fn add_gaussian_noise(u: &Image, sigma: f64, seed: u64) -> Result<Image> {
    ensure(sigma >= 0.0 && sigma.is_finite(), || {
        format!("noise sigma must be finite and >= 0, got {sigma}")
    })?;
    if sigma == 0.0 {
        return Ok(u.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = u
        .data
        .iter()
        .map(|&v| v + normal.sample(&mut rng))
        .collect();
    Image::new(u.width, u.height, data)
}
