//! Binarization, precision / recall, F_β and evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SaliencySample;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::Network;
use crate::postproc::{postprocess_pipeline, PostprocParams};
use crate::tensor::Tensor;
use crate::training::average_channels;

pub const DEFAULT_BETA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binarization {
    /// Threshold `min(1, 2·mean(map))`.
    Adaptive,
    Fixed(f64),
}

impl Binarization {
    pub fn threshold(&self, map: &Tensor<f32>) -> Result<f64> {
        match *self {
            Binarization::Adaptive => {
                let mean = map.data().iter().map(|&v| v as f64).sum::<f64>() / map.len() as f64;
                Ok((2.0 * mean).min(1.0))
            }
            Binarization::Fixed(t) if (0.0..=1.0).contains(&t) => Ok(t),
            Binarization::Fixed(t) => Err(Error::invalid(format!("threshold {t} outside [0, 1]"))),
        }
    }
}

/// Pixels with `value ≥ threshold` are positive.
pub fn binarize(map: &Tensor<f32>, method: Binarization) -> Result<(Vec<bool>, f64)> {
    let t = method.threshold(map)?;
    Ok((map.data().iter().map(|&v| v as f64 >= t).collect(), t))
}

/// Ground-truth mask as booleans (`value > 0.5`).
pub fn mask_bits(mask: &Tensor<f32>) -> Vec<bool> {
    mask.data().iter().map(|&v| v > 0.5).collect()
}

/// Confusion counts of a binary prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn of(pred: &[bool], gt: &[bool]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let mut c = Counts::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        Ok(c)
    }

    /// `(P, R)`; `P = 0` when nothing is predicted positive.
    pub fn precision_recall(&self) -> Result<(f64, f64)> {
        let Counts { tp, fp, fn_ } = *self;
        if tp + fn_ == 0 {
            return Err(Error::invalid("ground truth has no positive pixels"));
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        Ok((precision, tp as f64 / (tp + fn_) as f64))
    }
}

/// `(P, R)`; `P = 0` when nothing is predicted positive.
pub fn precision_recall(pred: &[bool], gt: &[bool]) -> Result<(f64, f64)> {
    Counts::of(pred, gt)?.precision_recall()
}

/// `(1 + β²)·P·R / (β²·P + R)`, zero when the denominator vanishes.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

/// How per-image results are combined into the dataset score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean of per-image F_β.
    PerImage,
    /// F_β of the confusion counts summed over all pixels of all images.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub beta: f64,
    pub binarization: Binarization,
    pub averaging: Averaging,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            binarization: Binarization::Adaptive,
            averaging: Averaging::PerImage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub threshold: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    /// Dataset F_β under `averaging`.
    pub mean_f_beta: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub beta: f64,
    pub binarization: Binarization,
    pub postproc: bool,
    pub averaging: Averaging,
}

pub fn score_map(
    id: &str,
    map: &Tensor<f32>,
    mask: &Tensor<f32>,
    settings: &EvalSettings,
) -> Result<ImageScore> {
    if map.len() != mask.len() {
        return Err(Error::shape(format!(
            "{id}: map {:?} vs mask {:?}",
            map.shape(),
            mask.shape()
        )));
    }
    let (pred, threshold) = binarize(map, settings.binarization)?;
    let counts = Counts::of(&pred, &mask_bits(mask))?;
    let (precision, recall) = counts
        .precision_recall()
        .map_err(|e| Error::Dataset(format!("{id}: {e}")))?;
    Ok(ImageScore {
        id: id.to_string(),
        precision,
        recall,
        f_beta: f_beta(precision, recall, settings.beta),
        threshold,
        counts,
    })
}

impl EvalReport {
    pub fn from_scores(
        mut images: Vec<ImageScore>,
        settings: &EvalSettings,
        postproc: bool,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("nothing to evaluate"));
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let n = images.len() as f64;
        let mean = |f: fn(&ImageScore) -> f64| images.iter().map(f).sum::<f64>() / n;
        let (mean_f_beta, mean_precision, mean_recall) = match settings.averaging {
            Averaging::PerImage => (
                mean(|s| s.f_beta),
                mean(|s| s.precision),
                mean(|s| s.recall),
            ),
            Averaging::Pooled => {
                let total = images.iter().fold(Counts::default(), |a, s| Counts {
                    tp: a.tp + s.counts.tp,
                    fp: a.fp + s.counts.fp,
                    fn_: a.fn_ + s.counts.fn_,
                });
                let (p, r) = total.precision_recall()?;
                (f_beta(p, r, settings.beta), p, r)
            }
        };
        Ok(Self {
            mean_f_beta,
            mean_precision,
            mean_recall,
            images,
            beta: settings.beta,
            binarization: settings.binarization,
            postproc,
            averaging: settings.averaging,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,precision,recall,f_beta\n");
        for s in &self.images {
            let _ = writeln!(out, "{},{},{},{}", s.id, s.precision, s.recall, s.f_beta);
        }
        out
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("report.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
    }
}

/// Append `variant,mean_f_beta` to `summary.csv` in `dir`, creating it with a header.
pub fn append_summary(dir: impl AsRef<Path>, variant: &str, report: &EvalReport) -> Result<()> {
    let path = dir.as_ref().join("summary.csv");
    let mut text = if path.exists() {
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?
    } else {
        String::from("variant,mean_f_beta\n")
    };
    let _ = writeln!(text, "{variant},{}", report.mean_f_beta);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Raw saliency maps `(1, 1, h, w)` of `samples` from generator `g`, run in eval mode.
pub fn predict_maps(g: &mut Network<f32>, samples: &[SaliencySample]) -> Result<Vec<Tensor<f32>>> {
    let previous = g.mode();
    g.set_mode(Mode::Eval);
    let result = samples
        .chunks(8)
        .map(|chunk| {
            let parts: Vec<&Tensor<f32>> = chunk.iter().map(|s| &s.image).collect();
            let maps = average_channels(&g.forward(&Tensor::concat(&parts)?)?)?;
            (0..chunk.len())
                .map(|i| maps.select(&[i]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>();
    g.set_mode(previous);
    Ok(result?.into_iter().flatten().collect())
}

/// Score precomputed maps against `samples`, optionally post-processing each first.
pub fn evaluate_maps(
    samples: &[SaliencySample],
    maps: &[Tensor<f32>],
    postproc: Option<&PostprocParams>,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if samples.len() != maps.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} maps",
            samples.len(),
            maps.len()
        )));
    }
    let scores = samples
        .par_iter()
        .zip(maps)
        .map(|(s, map)| {
            let map = match postproc {
                Some(p) => postprocess_pipeline(&s.image, map, p)?,
                None => map.clone(),
            };
            score_map(&s.id, &map, &s.mask, settings)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(scores, settings, postproc.is_some())
}

/// Generator forward, channel average, optional post-processing, binarization, F_β.
pub fn evaluate_dataset(
    g: &mut Network<f32>,
    samples: &[SaliencySample],
    postproc: Option<&PostprocParams>,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let maps = predict_maps(g, samples)?;
    evaluate_maps(samples, &maps, postproc, settings)
}
