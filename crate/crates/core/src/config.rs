//! Run configuration: a flat `key = value` file, overridable from the command line.
//!
//! ```text
//! # toy model
//! stages = 2
//! filter_size = 5
//! rbf_range = -310, 310
//! loss = l2
//! ```
//!
//! Short aliases `T`, `m`, `L`, `N_k` and `M` are accepted for the
//! architecture keys.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffusion::Hyperparameters;
use crate::error::{ensure, Error, Result};
use crate::param::RbfGrid;
use crate::training::{InitOptions, LbfgsConfig, LossKind};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sigma: f64,
    pub stages: usize,
    pub filter_size: usize,
    pub neighbors: usize,
    pub filters: usize,
    pub rbf_centers: usize,
    pub rbf_min: f64,
    pub rbf_max: f64,
    pub gamma: f64,
    pub patch: usize,
    pub window: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub init_gain: f64,
    pub init_threshold: f64,
    pub init_lambda_raw: f64,
    /// Side of the synthetic image used by `gradcheck`.
    pub gradcheck_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparameters::default();
        let init = InitOptions::default();
        RunConfig {
            sigma: h.sigma,
            stages: 5,
            filter_size: h.filter_size,
            neighbors: h.neighbors,
            filters: h.filters,
            rbf_centers: h.rbf.count,
            rbf_min: h.rbf.min,
            rbf_max: h.rbf.max,
            gamma: h.rbf.gamma,
            patch: h.patch,
            window: h.window,
            iterations: 200,
            seed: 0,
            loss: LossKind::Quadratic,
            init_gain: init.gain,
            init_threshold: init.threshold,
            init_lambda_raw: init.lambda_raw,
            gradcheck_size: 16,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidInput(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "sigma" => self.sigma = parse(key, value)?,
            "stages" | "T" => self.stages = parse(key, value)?,
            "filter_size" | "m" => self.filter_size = parse(key, value)?,
            "neighbors" | "L" => self.neighbors = parse(key, value)?,
            "filters" | "N_k" => self.filters = parse(key, value)?,
            "rbf_centers" | "M" => self.rbf_centers = parse(key, value)?,
            "rbf_range" => {
                let (a, b) = value.split_once(',').ok_or_else(|| {
                    Error::InvalidInput(format!("rbf_range = {value:?}: expected MIN, MAX"))
                })?;
                self.rbf_min = parse(key, a.trim())?;
                self.rbf_max = parse(key, b.trim())?;
            }
            "gamma" => self.gamma = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss" => self.loss = parse(key, value)?,
            "init_gain" => self.init_gain = parse(key, value)?,
            "init_threshold" => self.init_threshold = parse(key, value)?,
            "init_lambda_raw" => self.init_lambda_raw = parse(key, value)?,
            "gradcheck_size" => self.gradcheck_size = parse(key, value)?,
            _ => return Err(Error::InvalidInput(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sigma >= 0.0 && self.sigma.is_finite(), || {
            format!("sigma must be >= 0, got {}", self.sigma)
        })?;
        ensure(self.stages >= 1, || "stages must be >= 1".into())?;
        ensure(self.window % 2 == 1, || {
            format!("window {} must be odd", self.window)
        })?;
        ensure(self.iterations >= 1, || "iterations must be >= 1".into())?;
        ensure(self.init_threshold > 0.0, || {
            "init_threshold must be positive".into()
        })?;
        ensure(self.gradcheck_size >= self.patch, || {
            "gradcheck_size must be at least the patch size".into()
        })?;
        self.hyperparameters().validate()
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            filter_size: self.filter_size,
            neighbors: self.neighbors,
            filters: self.filters,
            rbf: RbfGrid {
                count: self.rbf_centers,
                min: self.rbf_min,
                max: self.rbf_max,
                gamma: self.gamma,
            },
            patch: self.patch,
            window: self.window,
            sigma: self.sigma,
        }
    }

    pub fn init_options(&self) -> InitOptions {
        InitOptions {
            gain: self.init_gain,
            threshold: self.init_threshold,
            lambda_raw: self.init_lambda_raw,
        }
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            max_iterations: self.iterations,
            ..LbfgsConfig::default()
        }
    }

    /// Serializes to the config-file format; `from_text(to_text())` is lossless.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "stages = {}", self.stages);
        let _ = writeln!(s, "filter_size = {}", self.filter_size);
        let _ = writeln!(s, "neighbors = {}", self.neighbors);
        let _ = writeln!(s, "filters = {}", self.filters);
        let _ = writeln!(s, "rbf_centers = {}", self.rbf_centers);
        let _ = writeln!(s, "rbf_range = {}, {}", self.rbf_min, self.rbf_max);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "patch = {}", self.patch);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "loss = {}", self.loss);
        let _ = writeln!(s, "init_gain = {}", self.init_gain);
        let _ = writeln!(s, "init_threshold = {}", self.init_threshold);
        let _ = writeln!(s, "init_lambda_raw = {}", self.init_lambda_raw);
        let _ = writeln!(s, "gradcheck_size = {}", self.gradcheck_size);
        s
    }
}
