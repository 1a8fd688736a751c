//! Line-based `key = value` run settings.
//!
//! Blank lines and `#` comments are ignored. A `preset = paper|desk` line
//! resets the training section before any other key is applied, wherever it
//! appears in the file. Unknown keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{Averaging, Binarization, EvalSettings};
use crate::postproc::PostprocParams;
use crate::training::{ComparisonPhase, Regeneration, TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("invalid preset {s:?} (paper, desk)"))),
        }
    }
}

impl Preset {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub preset: Preset,
    pub train: TrainConfig,
    pub postproc: PostprocParams,
    pub eval: EvalSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Self::with_preset(Preset::Paper)
    }
}

/// `key = value` pairs of `text` with their 1-based line numbers.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl FromStr for Binarization {
    type Err = Error;

    /// `adaptive` or `fixed:T`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(Binarization::Adaptive);
        }
        match s.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(t)) if (0.0..=1.0).contains(&t) => Ok(Binarization::Fixed(t)),
            _ => Err(Error::Config(format!(
                "invalid binarization {s:?} (adaptive, fixed:T with T in [0, 1])"
            ))),
        }
    }
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_image" => Ok(Averaging::PerImage),
            "pooled" => Ok(Averaging::Pooled),
            _ => Err(Error::Config(format!(
                "invalid averaging {s:?} (per_image, pooled)"
            ))),
        }
    }
}

impl Settings {
    pub fn with_preset(preset: Preset) -> Self {
        Self {
            preset,
            train: preset.train_config(),
            postproc: PostprocParams::default(),
            eval: EvalSettings::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_lines(text)?;
        let mut presets = pairs.iter().filter(|(_, k, _)| k == "preset");
        let preset = match (presets.next(), presets.next()) {
            (_, Some((line, _, _))) => {
                return Err(Error::Config(format!("line {line}: preset given twice")))
            }
            (Some((_, _, v)), None) => v.parse()?,
            (None, None) => Preset::Paper,
        };
        let mut s = Self::with_preset(preset);
        for (line, k, v) in &pairs {
            if k != "preset" {
                s.set(k, v)
                    .map_err(|e| Error::Config(format!("line {line}: {}", strip(e))))?;
            }
        }
        Ok(s)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    /// Apply one setting; `preset` here discards earlier training overrides.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let p = &mut self.postproc;
        match key {
            "preset" => {
                self.preset = v.parse()?;
                self.train = self.preset.train_config();
            }
            "iterations" => t.iterations = num(key, v)?,
            "d_epochs" => t.d_epochs = num(key, v)?,
            "g_epochs" => t.g_epochs = num(key, v)?,
            "batch" => t.batch = num(key, v)?,
            "d_lr0" => t.d_lr0 = num(key, v)?,
            "g_lr0" => t.g_lr0 = num(key, v)?,
            "lr_decay" => t.lr_decay = num(key, v)?,
            "alpha" => t.alpha = num(key, v)?,
            "map_dims" => t.map_dims = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "mode" => t.mode = v.parse::<TrainMode>()?,
            "comparison_phase" => t.comparison_phase = v.parse::<ComparisonPhase>()?,
            "regeneration" => t.regeneration = v.parse::<Regeneration>()?,
            "g_widths" => t.g_widths = list(key, v)?,
            "d_widths" => t.d_widths = list(key, v)?,
            "d_stride2" => t.d_stride2 = list(key, v)?,
            "d_comparison" => t.d_comparison = list(key, v)?,
            "leaky_slope" => t.leaky_slope = num(key, v)?,
            "weak_fraction" => p.weak_fraction = num(key, v)?,
            "slic_k" => p.slic_k = num(key, v)?,
            "slic_compactness" => p.slic_compactness = num(key, v)?,
            "slic_iters" => p.slic_iters = num(key, v)?,
            "refine_weight" => p.refine_weight = num(key, v)?,
            "beta" => self.eval.beta = num(key, v)?,
            "binarization" => self.eval.binarization = v.parse()?,
            "averaging" => self.eval.averaging = v.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.postproc
            .validate()
            .map_err(|e| Error::Config(format!("postproc: {}", strip(e))))?;
        if !(self.eval.beta > 0.0 && self.eval.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.eval.beta
            )));
        }
        Ok(())
    }

    /// The full effective configuration, re-parseable by [`Settings::parse`].
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let p = &self.postproc;
        let binarization = match self.eval.binarization {
            Binarization::Adaptive => "adaptive".to_string(),
            Binarization::Fixed(x) => format!("fixed:{x}"),
        };
        let averaging = match self.eval.averaging {
            Averaging::PerImage => "per_image",
            Averaging::Pooled => "pooled",
        };
        let comparison = match t.comparison_phase {
            ComparisonPhase::Both => "both",
            ComparisonPhase::D => "d",
            ComparisonPhase::G => "g",
        };
        let regeneration = match t.regeneration {
            Regeneration::PerBatch => "per_batch",
            Regeneration::PerIteration => "per_iteration",
        };
        let preset = match self.preset {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("preset", preset.into());
        kv("iterations", t.iterations.to_string());
        kv("d_epochs", t.d_epochs.to_string());
        kv("g_epochs", t.g_epochs.to_string());
        kv("batch", t.batch.to_string());
        kv("d_lr0", t.d_lr0.to_string());
        kv("g_lr0", t.g_lr0.to_string());
        kv("lr_decay", t.lr_decay.to_string());
        kv("alpha", t.alpha.to_string());
        kv("map_dims", t.map_dims.to_string());
        kv("seed", t.seed.to_string());
        kv("mode", t.mode.to_string());
        kv("comparison_phase", comparison.into());
        kv("regeneration", regeneration.into());
        kv("g_widths", join(&t.g_widths));
        kv("d_widths", join(&t.d_widths));
        kv("d_stride2", join(&t.d_stride2));
        kv("d_comparison", join(&t.d_comparison));
        kv("leaky_slope", t.leaky_slope.to_string());
        kv("weak_fraction", p.weak_fraction.to_string());
        kv("slic_k", p.slic_k.to_string());
        kv("slic_compactness", p.slic_compactness.to_string());
        kv("slic_iters", p.slic_iters.to_string());
        kv("refine_weight", p.refine_weight.to_string());
        kv("beta", self.eval.beta.to_string());
        kv("binarization", binarization);
        kv("averaging", averaging.into());
        out
    }

    /// Write `config.txt` into `dir`.
    pub fn echo_into(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.txt");
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
