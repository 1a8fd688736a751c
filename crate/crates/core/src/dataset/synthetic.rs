//! Synthetic shapes: one flat-colored shape on a noisy background; the shape
//! kind is the class.

use crate::dataset::SaliencySample;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const MAX_SYNTHETIC_CLASSES: usize = 5;

const MIN_AREA: f64 = 0.05;
const MAX_AREA: f64 = 0.30;
const NOISE_AMPLITUDE: f64 = 0.08;

pub fn shape_name(label: usize) -> &'static str {
    match label {
        1 => "disc",
        2 => "square",
        3 => "triangle",
        4 => "diamond",
        5 => "cross",
        _ => "unknown",
    }
}

/// Whether pixel center `(x, y)` lies inside shape `label` of half-extent `r`
/// centered at `(cx, cy)`.
fn inside(label: usize, dx: f64, dy: f64, r: f64) -> bool {
    match label {
        1 => dx * dx + dy * dy <= r * r,
        2 => dx.abs() <= r && dy.abs() <= r,
        // Apex up, base at +r; the half-width grows linearly toward the base.
        3 => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
        4 => dx.abs() + dy.abs() <= r,
        _ => {
            let arm = r / 3.0;
            (dx.abs() <= r && dy.abs() <= arm) || (dy.abs() <= r && dx.abs() <= arm)
        }
    }
}

/// Area of shape `label` with half-extent `r`, as a multiple of `r²`.
fn area_factor(label: usize) -> f64 {
    match label {
        1 => std::f64::consts::PI,
        2 => 4.0,
        3 => 2.0,
        4 => 2.0,
        _ => 20.0 / 9.0,
    }
}

fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

fn one_sample(id: String, label: usize, size: usize, rng: &mut Prng) -> SaliencySample {
    let n = size as f64;
    let mut mask;
    loop {
        let target = rng.uniform(0.08, 0.25) * n * n;
        let r = (target / area_factor(label)).sqrt();
        let cx = rng.uniform(r + 1.0, n - r - 1.0);
        let cy = rng.uniform(r + 1.0, n - r - 1.0);
        mask = Tensor::from_fn((1, 1, size, size), |i| {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            inside(label, x - cx, y - cy, r) as u8 as f32
        });
        let frac = mask.sum() as f64 / (n * n);
        if (MIN_AREA..=MAX_AREA).contains(&frac) {
            break;
        }
    }

    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform(0.15, 0.85));
    let fg: [f64; 3] = std::array::from_fn(|c| {
        let step = rng.uniform(0.35, 0.5);
        if base[c] < 0.5 {
            base[c] + step
        } else {
            base[c] - step
        }
    });
    let plane = size * size;
    let mut image = Tensor::zeros((1, 3, size, size));
    for c in 0..3 {
        for p in 0..plane {
            let noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE);
            let v = if mask.data()[p] > 0.0 {
                fg[c]
            } else {
                base[c] + noise
            };
            image.data_mut()[c * plane + p] = quantize(v);
        }
    }
    SaliencySample {
        id,
        image,
        mask,
        label,
    }
}

/// `n` samples of `size × size`; sample `i` has class `i mod K + 1`.
pub fn gen_synthetic_dataset(
    n: usize,
    num_classes: usize,
    size: usize,
    rng: &mut Prng,
) -> Result<Vec<SaliencySample>> {
    if !(2..=MAX_SYNTHETIC_CLASSES).contains(&num_classes) {
        return Err(Error::invalid(format!(
            "synthetic classes must be in 2..={MAX_SYNTHETIC_CLASSES}, got {num_classes}"
        )));
    }
    if size < 8 {
        return Err(Error::invalid(format!("synthetic size {size} below 8")));
    }
    Ok((0..n)
        .map(|i| one_sample(format!("s{i:04}"), i % num_classes + 1, size, rng))
        .collect())
}
