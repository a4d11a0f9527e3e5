//! Training run configuration: presets, a flat `key = value` file format and
//! the echo written next to every run.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::{LambdaMode, LossConfig, TopologyMode};

/// Arithmetic used by the network during training. Fits and solves are
/// always double precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::Config(format!(
                "unknown precision {other:?} (expected single or double)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub loss: LossConfig,
    /// Hidden layer widths; input width comes from the dataset.
    pub hidden: Vec<usize>,
    pub descriptor_dim: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub precision: Precision,
    /// Worker threads for per-anchor work; 0 uses every core.
    pub workers: usize,
    /// Fraction of scenes held out from training.
    pub holdout: f64,
    pub log_every: u64,
    /// Non-matching verification pairs per matching pair at evaluation.
    pub eval_negatives: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small preset that trains in seconds on one core.
    pub fn desk() -> Self {
        Self {
            loss: LossConfig {
                k: 8,
                lambda_n0: 400,
                lambda_step: 80,
                ..LossConfig::default()
            },
            hidden: vec![64, 64],
            descriptor_dim: 32,
            batch_size: 64,
            iterations: 2000,
            lr_start: 0.1,
            lr_end: 0.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            dataset: None,
            out_dir: None,
            precision: Precision::Double,
            workers: 1,
            holdout: 0.2,
            log_every: 1,
            eval_negatives: 1,
        }
    }

    /// Full-scale schedule: batch 1024, k = 20, 250k iterations.
    pub fn full() -> Self {
        Self {
            loss: LossConfig::default(),
            hidden: vec![128, 128],
            descriptor_dim: 128,
            batch_size: 1024,
            iterations: 250_000,
            log_every: 100,
            workers: 0,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected desk or full)"
            ))),
        }
    }

    /// Network widths for patches of dimension `input_dim`.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.hidden);
        w.push(self.descriptor_dim);
        w
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "margin" => self.loss.margin = num(key, value)?,
            "k" => self.loss.k = num(key, value)?,
            "lambda_n0" => self.loss.lambda_n0 = num(key, value)?,
            "lambda_step" => self.loss.lambda_step = num(key, value)?,
            "lambda_r" => self.loss.lambda_r = num(key, value)?,
            "lambda_floor" => self.loss.lambda_floor = num(key, value)?,
            "lambda_mode" => self.loss.lambda_mode = value.parse()?,
            "topology" => self.loss.topology = value.parse()?,
            "lle_eps" => self.loss.lle_eps = num(key, value)?,
            "hidden" => {
                self.hidden = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| num(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "descriptor_dim" => self.descriptor_dim = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "lr_start" => self.lr_start = num(key, value)?,
            "lr_end" => self.lr_end = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dataset" => self.dataset = path(value),
            "out_dir" => self.out_dir = path(value),
            "precision" => self.precision = value.parse()?,
            "workers" => self.workers = num(key, value)?,
            "holdout" => self.holdout = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "eval_negatives" => self.eval_negatives = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.descriptor_dim == 0 || self.hidden.contains(&0) {
            return fail("layer widths must be nonzero");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be >= 2");
        }
        if self.loss.topology != TopologyMode::Off && self.loss.k >= self.batch_size {
            return fail("k must be smaller than batch_size");
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0) {
            return fail("learning rates must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return fail("holdout must lie in [0, 1)");
        }
        if self.log_every == 0 {
            return fail("log_every must be >= 1");
        }
        Ok(())
    }

    /// Effective configuration in the same format [`Self::apply_text`] reads.
    pub fn to_text(&self) -> String {
        let l = &self.loss;
        let lambda_mode = match l.lambda_mode {
            LambdaMode::Dynamic => "dynamic".to_string(),
            LambdaMode::Fixed(v) => format!("fixed:{v}"),
        };
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("margin", &l.margin);
        kv("k", &l.k);
        kv("lambda_n0", &l.lambda_n0);
        kv("lambda_step", &l.lambda_step);
        kv("lambda_r", &l.lambda_r);
        kv("lambda_floor", &l.lambda_floor);
        kv("lambda_mode", &lambda_mode);
        kv("topology", &l.topology);
        kv("lle_eps", &l.lle_eps);
        kv("hidden", &hidden.join(","));
        kv("descriptor_dim", &self.descriptor_dim);
        kv("batch_size", &self.batch_size);
        kv("iterations", &self.iterations);
        kv("lr_start", &self.lr_start);
        kv("lr_end", &self.lr_end);
        kv("momentum", &self.momentum);
        kv("weight_decay", &self.weight_decay);
        kv("seed", &self.seed);
        kv("dataset", &path(&self.dataset));
        kv("out_dir", &path(&self.out_dir));
        kv("precision", &self.precision);
        kv("workers", &self.workers);
        kv("holdout", &self.holdout);
        kv("log_every", &self.log_every);
        kv("eval_negatives", &self.eval_negatives);
        s
    }
}
