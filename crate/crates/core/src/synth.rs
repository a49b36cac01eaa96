//! Procedural grayscale scenes: shaded backgrounds, flat shapes with sharp
//! edges and patches of oriented stripes. Pixel values are integers in
//! `[0, 255]`, so scenes survive a PGM round trip unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

enum Shape {
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        v: f64,
    },
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
        v: f64,
    },
    Stripes {
        cx: f64,
        cy: f64,
        r: f64,
        freq: f64,
        angle: f64,
        v: f64,
        amp: f64,
    },
}

pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let base = rng.random_range(40.0..200.0);
    let gx = rng.random_range(-60.0..60.0) / w.max(1.0);
    let gy = rng.random_range(-60.0..60.0) / h.max(1.0);
    let count = 4 + (width * height / 600).min(12);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let v = rng.random_range(0.0..255.0);
            match rng.random_range(0..3) {
                0 => {
                    let (x0, y0) = (
                        rng.random_range(-0.1..0.9) * w,
                        rng.random_range(-0.1..0.9) * h,
                    );
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.random_range(0.1..0.5) * w,
                        y1: y0 + rng.random_range(0.1..0.5) * h,
                        v,
                    }
                }
                1 => Shape::Disk {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    r: rng.random_range(0.05..0.3) * w.min(h),
                    v,
                },
                _ => Shape::Stripes {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    r: rng.random_range(0.15..0.35) * w.min(h),
                    freq: rng.random_range(0.15..0.6),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    v,
                    amp: rng.random_range(20.0..60.0),
                },
            }
        })
        .collect();
    Image::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut val = base + gx * px + gy * py;
        for s in &shapes {
            match *s {
                Shape::Rect { x0, y0, x1, y1, v } => {
                    if px >= x0 && px < x1 && py >= y0 && py < y1 {
                        val = v;
                    }
                }
                Shape::Disk { cx, cy, r, v } => {
                    if (px - cx).powi(2) + (py - cy).powi(2) < r * r {
                        val = v;
                    }
                }
                Shape::Stripes {
                    cx,
                    cy,
                    r,
                    freq,
                    angle,
                    v,
                    amp,
                } => {
                    if (px - cx).powi(2) + (py - cy).powi(2) < r * r {
                        let t = (px * angle.cos() + py * angle.sin()) * freq;
                        val = v + amp * t.sin();
                    }
                }
            }
        }
        val.round().clamp(0.0, 255.0)
    })
}
