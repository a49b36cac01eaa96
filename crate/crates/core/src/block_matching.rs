//! Exhaustive k-NN patch search.
//!
//! For every pixel `n` the table row holds `n` itself followed by the `L - 1`
//! most similar patch centers inside the search window, sorted by
//! `(distance, linear index)`. Column `j` of the table defines the selection
//! matrix `V_j` (row `n` of `V_j` has a single one at column `q[n][j]`).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::image::{mirror_index, Image};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    pixel_count: usize,
    neighbor_count: usize,
    indexes: Vec<u32>,
}

impl NeighborTable {
    /// Builds a table from raw row-major indexes, checking only shape and range.
    pub fn from_raw(pixel_count: usize, neighbor_count: usize, indexes: Vec<u32>) -> Result<Self> {
        ensure(neighbor_count >= 1, || "neighbor count must be >= 1".into())?;
        if indexes.len() != pixel_count * neighbor_count {
            return Err(Error::DimensionMismatch(format!(
                "{} indexes for {pixel_count} pixels x {neighbor_count} neighbors",
                indexes.len()
            )));
        }
        ensure(indexes.iter().all(|&q| (q as usize) < pixel_count), || {
            "neighbor index out of range".into()
        })?;
        Ok(NeighborTable {
            pixel_count,
            neighbor_count,
            indexes,
        })
    }

    /// The `L = 1` table: every pixel is its only neighbor.
    pub fn identity(pixel_count: usize) -> Self {
        NeighborTable {
            pixel_count,
            neighbor_count: 1,
            indexes: (0..pixel_count as u32).collect(),
        }
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    #[inline]
    pub fn neighbor_count(&self) -> usize {
        self.neighbor_count
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[u32] {
        &self.indexes[n * self.neighbor_count..(n + 1) * self.neighbor_count]
    }

    #[inline]
    pub fn get(&self, n: usize, j: usize) -> usize {
        self.indexes[n * self.neighbor_count + j] as usize
    }

    pub fn indexes(&self) -> &[u32] {
        &self.indexes
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, u32> {
        self.indexes.chunks_exact(self.neighbor_count)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.indexes.len());
        out.extend((self.pixel_count as u32).to_le_bytes());
        out.extend((self.neighbor_count as u32).to_le_bytes());
        for q in &self.indexes {
            out.extend(q.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Option<u32> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        };
        let bad = || Error::InvalidInput("truncated neighbor table".into());
        let p = word(0).ok_or_else(bad)? as usize;
        let l = word(1).ok_or_else(bad)? as usize;
        if bytes.len() != 8 + 4 * p * l {
            return Err(bad());
        }
        let indexes = (0..p * l).map(|i| word(i + 2).unwrap()).collect();
        NeighborTable::from_raw(p, l, indexes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        NeighborTable::from_bytes(&bytes)
    }
}

fn check_odd(v: usize, what: &str) -> Result<()> {
    ensure(v % 2 == 1, || format!("{what} size {v} must be odd"))
}

/// Mean squared difference between the patches centered at `n1` and `n2`.
pub fn patch_distance(f: &Image, n1: usize, n2: usize, patch: usize) -> Result<f64> {
    check_odd(patch, "patch")?;
    ensure(n1 < f.len() && n2 < f.len(), || {
        format!("pixel index out of range for {} pixels", f.len())
    })?;
    let w = f.width();
    let r = (patch / 2) as isize;
    let (x1, y1) = ((n1 % w) as isize, (n1 / w) as isize);
    let (x2, y2) = ((n2 % w) as isize, (n2 / w) as isize);
    let mut acc = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let d = f.get_mirrored(x1 + dx, y1 + dy) - f.get_mirrored(x2 + dx, y2 + dy);
            acc += d * d;
        }
    }
    Ok(acc / (patch * patch) as f64)
}

/// Mirror-padded copy used for fast patch comparisons.
struct PaddedImage {
    width: usize,
    data: Vec<f64>,
}

impl PaddedImage {
    fn new(f: &Image, r: usize) -> Self {
        let pw = f.width() + 2 * r;
        let ph = f.height() + 2 * r;
        let mut data = Vec::with_capacity(pw * ph);
        for py in 0..ph {
            let y = mirror_index(py as isize - r as isize, f.height());
            for px in 0..pw {
                let x = mirror_index(px as isize - r as isize, f.width());
                data.push(f.get(x, y));
            }
        }
        PaddedImage { width: pw, data }
    }

    /// Same summation order as [`patch_distance`], so results agree bitwise.
    #[inline]
    fn distance(&self, x1: usize, y1: usize, x2: usize, y2: usize, patch: usize) -> f64 {
        let mut acc = 0.0;
        for a in 0..patch {
            let r1 = &self.data[(y1 + a) * self.width + x1..][..patch];
            let r2 = &self.data[(y2 + a) * self.width + x2..][..patch];
            for (p, q) in r1.iter().zip(r2) {
                let d = p - q;
                acc += d * d;
            }
        }
        acc / (patch * patch) as f64
    }
}

/// Computes the neighbor table of `f` by dense search of a `window`×`window`
/// neighborhood (clipped to the image) around every pixel.
pub fn compute_neighbor_table(
    f: &Image,
    patch: usize,
    window: usize,
    neighbors: usize,
) -> Result<NeighborTable> {
    check_odd(patch, "patch")?;
    check_odd(window, "window")?;
    ensure(neighbors >= 1, || "neighbor count must be >= 1".into())?;
    ensure(window >= patch, || {
        format!("window {window} smaller than patch {patch}")
    })?;
    let (w, h) = (f.width(), f.height());
    let p = w * h;
    if neighbors == 1 {
        return Ok(NeighborTable::identity(p));
    }
    // Smallest candidate set is at a corner.
    let wr = window / 2;
    let min_candidates = (wr.min(w - 1) + 1) * (wr.min(h - 1) + 1) - 1;
    ensure(neighbors - 1 <= min_candidates, || {
        format!(
            "{neighbors} neighbors requested but some pixels have only {min_candidates} candidates"
        )
    })?;

    let pr = patch / 2;
    let padded = PaddedImage::new(f, pr);
    let keep = neighbors - 1;
    let mut indexes = vec![0u32; p * neighbors];
    indexes
        .par_chunks_mut(neighbors)
        .enumerate()
        .for_each(|(n, row)| {
            let (x, y) = (n % w, n / w);
            let y_lo = y.saturating_sub(wr);
            let y_hi = (y + wr).min(h - 1);
            let x_lo = x.saturating_sub(wr);
            let x_hi = (x + wr).min(w - 1);
            let mut cands: Vec<(f64, u32)> =
                Vec::with_capacity((y_hi - y_lo + 1) * (x_hi - x_lo + 1));
            for cy in y_lo..=y_hi {
                for cx in x_lo..=x_hi {
                    let q = cy * w + cx;
                    if q == n {
                        continue;
                    }
                    cands.push((padded.distance(x, y, cx, cy, patch), q as u32));
                }
            }
            let order = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cands.len() > keep {
                cands.select_nth_unstable_by(keep, order);
                cands.truncate(keep);
            }
            cands.sort_unstable_by(order);
            row[0] = n as u32;
            for (slot, (_, q)) in row[1..].iter_mut().zip(&cands) {
                *slot = *q;
            }
        });
    NeighborTable::from_raw(p, neighbors, indexes)
}

/// Cache file name for a table computed from `f` with the given search settings.
pub fn cache_key(f: &Image, patch: usize, window: usize, neighbors: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update((f.width() as u64).to_le_bytes());
    hasher.update((f.height() as u64).to_le_bytes());
    for v in f.data() {
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    format!(
        "{}_p{patch}_w{window}_l{neighbors}.nbt",
        hex::encode(&digest[..16])
    )
}

/// Loads the table from `dir` when a matching cache entry exists, otherwise
/// computes and stores it.
pub fn cached_neighbor_table(
    dir: &Path,
    f: &Image,
    patch: usize,
    window: usize,
    neighbors: usize,
) -> Result<NeighborTable> {
    let path: PathBuf = dir.join(cache_key(f, patch, window, neighbors));
    if let Ok(table) = NeighborTable::read(&path) {
        if table.pixel_count() == f.len() && table.neighbor_count() == neighbors {
            return Ok(table);
        }
        log::warn!("ignoring stale neighbor cache {}", path.display());
    }
    let table = compute_neighbor_table(f, patch, window, neighbors)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    table.write(&path)?;
    Ok(table)
}
