//! Training sets built from a directory of clean PGM images.
//!
//! On disk a dataset is a directory holding the clean crops under `clean/` and
//! a `manifest.txt` with one tab-separated `key=value` record per sample. Noisy
//! inputs are not stored; they are regenerated from each record's sigma and seed.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{add_gaussian_noise, Image};
use crate::pgm::{read_image, write_image};
use crate::training::backprop::TrainingSample;

pub const MANIFEST: &str = "manifest.txt";
pub const CLEAN_DIR: &str = "clean";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub source: String,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn to_record(&self) -> String {
        format!(
            "name={}\tsource={}\tx0={}\ty0={}\twidth={}\theight={}\tsigma={}\tseed={}",
            self.name,
            self.source,
            self.x0,
            self.y0,
            self.width,
            self.height,
            self.sigma,
            self.seed
        )
    }

    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let mut fields = std::collections::HashMap::new();
        for part in line.split('\t') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("field without '=': {part:?}"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing {k}"));
        let num = |k: &str| -> std::result::Result<usize, String> {
            get(k)?.parse().map_err(|e| format!("{k}: {e}"))
        };
        Ok(ManifestEntry {
            name: get("name")?.to_string(),
            source: get("source")?.to_string(),
            x0: num("x0")?,
            y0: num("y0")?,
            width: num("width")?,
            height: num("height")?,
            sigma: get("sigma")?.parse().map_err(|e| format!("sigma: {e}"))?,
            seed: get("seed")?.parse().map_err(|e| format!("seed: {e}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub samples: Vec<TrainingSample>,
}

/// `.pgm` files of `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if is_pgm && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Noise seed of the image at `index` in the sorted listing.
pub fn image_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add(index as u64)
}

/// Center-crops every readable image of `clean_dir` to `crop x crop` and adds
/// noise. Unreadable or undersized images are skipped with a warning.
pub fn make_dataset(
    clean_dir: impl AsRef<Path>,
    sigma: f64,
    seed: u64,
    crop: usize,
) -> Result<Dataset> {
    if sigma.is_nan() || sigma < 0.0 || crop == 0 {
        return Err(Error::InvalidInput(format!(
            "need sigma >= 0 and crop > 0, got sigma {sigma}, crop {crop}"
        )));
    }
    let clean_dir = clean_dir.as_ref();
    let paths = list_images(clean_dir)?;
    let built: Vec<Option<(ManifestEntry, TrainingSample)>> = paths
        .par_iter()
        .enumerate()
        .map(|(index, path)| {
            let image = match read_image(path) {
                Ok(im) => im,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            if image.width() < crop || image.height() < crop {
                warn!(
                    "skipping {}: {}x{} is smaller than the {crop}x{crop} crop",
                    path.display(),
                    image.width(),
                    image.height()
                );
                return Ok(None);
            }
            let (clean, (x0, y0)) = image.center_crop(crop, crop)?;
            let seed = image_seed(seed, index);
            let noisy = add_gaussian_noise(&clean, sigma, seed)?;
            let entry = ManifestEntry {
                name: path.file_name().unwrap().to_string_lossy().into_owned(),
                source: path.display().to_string(),
                x0,
                y0,
                width: crop,
                height: crop,
                sigma,
                seed,
            };
            Ok(Some((entry, TrainingSample::new(noisy, clean)?)))
        })
        .collect::<Result<_>>()?;
    let (entries, samples): (Vec<_>, Vec<_>) = built.into_iter().flatten().unzip();
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no usable images of at least {crop}x{crop} in {}",
            clean_dir.display()
        )));
    }
    Ok(Dataset { entries, samples })
}

/// Writes clean crops and the manifest into `out_dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    let clean = out_dir.join(CLEAN_DIR);
    fs::create_dir_all(&clean).map_err(|e| Error::io(&clean, e))?;
    let mut manifest = String::new();
    for (entry, sample) in dataset.entries.iter().zip(&dataset.samples) {
        write_image(&sample.u_gt, clean.join(&entry.name))?;
        manifest.push_str(&entry.to_record());
        manifest.push('\n');
    }
    let path = out_dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            ManifestEntry::parse(l).map_err(|reason| Error::Malformed {
                path: path.clone(),
                reason,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if entries.is_empty() {
        return Err(Error::Malformed {
            path,
            reason: "manifest lists no samples".into(),
        });
    }
    let samples = entries
        .par_iter()
        .map(|e| {
            let clean: Image = read_image(dir.join(CLEAN_DIR).join(&e.name))?;
            if clean.width() != e.width || clean.height() != e.height {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{}, manifest says {}x{}",
                    e.name,
                    clean.width(),
                    clean.height(),
                    e.width,
                    e.height
                )));
            }
            let noisy = add_gaussian_noise(&clean, e.sigma, e.seed)?;
            TrainingSample::new(noisy, clean)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { entries, samples })
}
