//! Saliency-map post-processing: weak-signal filtering, superpixel smoothing,
//! low-level contrast refinement and normalization.

mod lab;
mod slic;

pub use lab::{image_to_lab, srgb_to_lab};
pub use slic::{is_connected_partition, slic, Segment, SuperpixelMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocParams {
    /// Values below this fraction of the map maximum are zeroed.
    pub weak_fraction: f64,
    pub slic_k: usize,
    pub slic_compactness: f64,
    pub slic_iters: usize,
    /// Weight of the contrast refinement.
    pub refine_weight: f64,
}

impl Default for PostprocParams {
    fn default() -> Self {
        Self {
            weak_fraction: 0.2,
            slic_k: 128,
            slic_compactness: 10.0,
            slic_iters: 10,
            refine_weight: 0.5,
        }
    }
}

impl PostprocParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.weak_fraction) {
            return Err(Error::invalid("weak_fraction must be in [0, 1)"));
        }
        if self.slic_k < 2 {
            return Err(Error::invalid("slic_k must be at least 2"));
        }
        if !(self.slic_compactness > 0.0) {
            return Err(Error::invalid("slic_compactness must be positive"));
        }
        if !(0.0..=1.0).contains(&self.refine_weight) {
            return Err(Error::invalid("refine_weight must be in [0, 1]"));
        }
        Ok(())
    }
}

fn expect_map(map: &Tensor<f32>) -> Result<()> {
    let s = map.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape(format!(
            "expected a (1, 1, h, w) map, got {s:?}"
        )));
    }
    Ok(())
}

fn expect_aligned(map: &Tensor<f32>, sp: &SuperpixelMap) -> Result<()> {
    expect_map(map)?;
    let s = map.shape();
    if (s.h, s.w) != (sp.height, sp.width) {
        return Err(Error::shape(format!(
            "map {}×{} vs superpixels {}×{}",
            s.h, s.w, sp.height, sp.width
        )));
    }
    Ok(())
}

/// Zero every value below `fraction · max(map)`.
pub fn threshold_weak(map: &Tensor<f32>, fraction: f64) -> Tensor<f32> {
    let max = map.data().iter().copied().fold(0.0f32, f32::max);
    let cut = (fraction * max as f64) as f32;
    map.map(|v| if v < cut { 0.0 } else { v })
}

/// Min-max normalization; a constant map becomes all zeros.
pub fn normalize(map: &Tensor<f32>) -> Tensor<f32> {
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return map.map(|_| 0.0);
    }
    let range = (hi - lo) as f64;
    map.map(|v| ((v - lo) as f64 / range) as f32)
}

/// Mean map value of every segment.
pub fn segment_means(map: &Tensor<f32>, sp: &SuperpixelMap) -> Result<Vec<f64>> {
    expect_aligned(map, sp)?;
    let mut sums = vec![0.0f64; sp.len()];
    for (&l, &v) in sp.labels.iter().zip(map.data()) {
        sums[l] += v as f64;
    }
    Ok(sums
        .iter()
        .zip(&sp.segments)
        .map(|(s, seg)| s / seg.count as f64)
        .collect())
}

fn paint(sp: &SuperpixelMap, values: &[f64]) -> Tensor<f32> {
    Tensor::from_fn((1, 1, sp.height, sp.width), |p| values[sp.labels[p]] as f32)
}

/// Replace every pixel with the mean value of its segment.
pub fn smooth_by_superpixels(map: &Tensor<f32>, sp: &SuperpixelMap) -> Result<Tensor<f32>> {
    Ok(paint(sp, &segment_means(map, sp)?))
}

/// Spatially weighted color contrast of every segment, min-max normalized;
/// all ones when the contrast does not vary.
pub fn segment_contrast(sp: &SuperpixelMap) -> Vec<f64> {
    let n = (sp.width * sp.height) as f64;
    let diag = ((sp.width * sp.width + sp.height * sp.height) as f64).sqrt();
    let two_sigma2 = 2.0 * (0.25 * diag).powi(2);
    let raw: Vec<f64> = sp
        .segments
        .iter()
        .map(|si| {
            sp.segments
                .iter()
                .map(|sj| {
                    let dc = (0..3)
                        .map(|c| (si.lab[c] - sj.lab[c]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let dx = si.centroid.0 - sj.centroid.0;
                    let dy = si.centroid.1 - sj.centroid.1;
                    (sj.count as f64 / n) * dc * (-(dx * dx + dy * dy) / two_sigma2).exp()
                })
                .sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; raw.len()]
    }
}

/// `(1 − λ)·s + λ·s·contrast` per segment, where `s` is the segment mean of `map`.
pub fn lowlevel_refine(sp: &SuperpixelMap, map: &Tensor<f32>, lambda: f64) -> Result<Tensor<f32>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("refine weight must be in [0, 1]"));
    }
    let means = segment_means(map, sp)?;
    let contrast = segment_contrast(sp);
    let refined: Vec<f64> = means
        .iter()
        .zip(&contrast)
        .map(|(&s, &c)| (1.0 - lambda) * s + lambda * s * c)
        .collect();
    Ok(paint(sp, &refined))
}

/// Full pipeline over one image and its raw map.
pub fn postprocess_pipeline(
    image: &Tensor<f32>,
    raw_map: &Tensor<f32>,
    params: &PostprocParams,
) -> Result<Tensor<f32>> {
    params.validate()?;
    expect_map(raw_map)?;
    let (is, ms) = (image.shape(), raw_map.shape());
    if (is.h, is.w) != (ms.h, ms.w) {
        return Err(Error::shape(format!("image {is:?} vs map {ms:?}")));
    }
    let filtered = threshold_weak(raw_map, params.weak_fraction);
    let k = params.slic_k.min(is.h * is.w);
    let sp = slic(image, k, params.slic_compactness, params.slic_iters)?;
    let smoothed = smooth_by_superpixels(&filtered, &sp)?;
    let refined = lowlevel_refine(&sp, &smoothed, params.refine_weight)?;
    Ok(threshold_weak(&normalize(&refined), params.weak_fraction))
}
