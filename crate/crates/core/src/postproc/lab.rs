//! sRGB → CIELAB under the D65 white point.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

fn linearize(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// One sRGB triple in `[0, 1]` to `(L, a, b)`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(linearize);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (f(x / WHITE[0]), f(y / WHITE[1]), f(z / WHITE[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Per-pixel Lab values of a `(1, 3, h, w)` image, row-major.
pub fn image_to_lab(image: &Tensor<f32>) -> Result<Vec<[f64; 3]>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(format!(
            "expected a (1, 3, h, w) image, got {s:?}"
        )));
    }
    let plane = s.plane();
    let d = image.data();
    Ok((0..plane)
        .map(|p| srgb_to_lab([d[p], d[plane + p], d[2 * plane + p]].map(f64::from)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        let w = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-3 && w[1].abs() < 1e-2 && w[2].abs() < 1e-2);
        let k = srgb_to_lab([0.0, 0.0, 0.0]);
        assert!(k.iter().all(|v| v.abs() < 1e-12));
        // Mid gray and pure red, standard published values.
        let g = srgb_to_lab([0.5, 0.5, 0.5]);
        assert!((g[0] - 53.389).abs() < 1e-2);
        let r = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!((r[0] - 53.24).abs() < 0.01);
        assert!((r[1] - 80.09).abs() < 0.02);
        assert!((r[2] - 67.20).abs() < 0.02);
    }
}
