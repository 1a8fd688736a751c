//! Image / mask / label triples: NetPBM I/O, the VOC-style directory loader
//! and the synthetic shapes generator.

pub mod netpbm;
mod synthetic;
mod voc;

pub use netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use synthetic::{gen_synthetic_dataset, shape_name, MAX_SYNTHETIC_CLASSES};
pub use voc::{load_voc_style, write_voc_style, VOID_INDEX};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencySample {
    pub id: String,
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `(1, 1, h, w)` with values in `{0, 1}`.
    pub mask: Tensor<f32>,
    /// Class index in `1..=L`.
    pub label: usize,
}

impl SaliencySample {
    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s.h, s.w)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (is, ms) = (self.image.shape(), self.mask.shape());
        if is.n != 1 || is.c != 3 || ms.n != 1 || ms.c != 1 || (is.h, is.w) != (ms.h, ms.w) {
            return Err(Error::Dataset(format!(
                "{}: image {is:?} and mask {ms:?} do not align",
                self.id
            )));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset(format!("{}: image outside [0, 1]", self.id)));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dataset(format!("{}: mask is not binary", self.id)));
        }
        if self.label == 0 || self.label > num_classes {
            return Err(Error::LabelOutOfRange {
                label: self.label,
                max: num_classes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    /// `L`, the number of object classes.
    pub num_classes: usize,
    /// Names of classes `1..=L`.
    pub class_names: Vec<String>,
    pub len: usize,
}

/// Stack the images of `samples[indices]` into one `(n, 3, h, w)` batch.
pub fn stack_images(samples: &[SaliencySample], indices: &[usize]) -> Result<Tensor<f32>> {
    let parts: Vec<&Tensor<f32>> = indices.iter().map(|&i| &samples[i].image).collect();
    Tensor::concat(&parts)
}

/// Stack the masks of `samples[indices]` into one `(n, 1, h, w)` batch.
pub fn stack_masks(samples: &[SaliencySample], indices: &[usize]) -> Result<Tensor<f32>> {
    let parts: Vec<&Tensor<f32>> = indices.iter().map(|&i| &samples[i].mask).collect();
    Tensor::concat(&parts)
}

pub fn labels_of(samples: &[SaliencySample], indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| samples[i].label).collect()
}

/// Nearest-neighbour source index for `dst` when resampling `src_len` to `dst_len`.
pub(crate) fn nearest(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (((2 * dst + 1) * src_len) / (2 * dst_len)).min(src_len - 1)
}

/// Nearest-neighbour resize of a `(1, c, h, w)` tensor.
pub fn resize_nearest(t: &Tensor<f32>, size: (usize, usize)) -> Tensor<f32> {
    let s = t.shape();
    let (h, w) = size;
    Tensor::from_fn((s.n, s.c, h, w), |i| {
        let x = i % w;
        let y = (i / w) % h;
        let nc = i / (w * h);
        t.data()[(nc * s.h + nearest(y, s.h, h)) * s.w + nearest(x, s.w, w)]
    })
}
