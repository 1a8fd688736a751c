//! Binary NetPBM: P6 color and P5 gray, maxval 255 only.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded 8-bit raster, channels interleaved per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bytes: Vec<u8>,
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "netpbm",
        reason: reason.into(),
    }
}

/// Parse a P5 or P6 file held in memory.
pub fn decode(data: &[u8]) -> Result<Raster> {
    let channels = match data.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(malformed("expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments run to the next token.
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while data.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&data[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(malformed(format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after maxval"));
    }
    pos += 1;
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| malformed("image too large"))?;
    let payload = data
        .get(pos..pos + len)
        .ok_or_else(|| malformed(format!("truncated payload: need {len} bytes")))?;
    Ok(Raster {
        width,
        height,
        channels,
        bytes: payload.to_vec(),
    })
}

pub fn encode(raster: &Raster) -> Vec<u8> {
    let magic = if raster.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.bytes);
    out
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(raster)).map_err(|e| Error::io(path, e))
}

/// Planar `(1, c, h, w)` tensor with values `byte / 255`.
pub fn raster_to_tensor(r: &Raster) -> Tensor<f32> {
    let plane = r.width * r.height;
    Tensor::from_fn((1, r.channels, r.height, r.width), |i| {
        let (c, p) = (i / plane, i % plane);
        r.bytes[p * r.channels + c] as f32 / 255.0
    })
}

/// Quantize a `(1, c, h, w)` tensor in `[0, 1]` with `round(v·255)`.
pub fn tensor_to_raster(t: &Tensor<f32>) -> Result<Raster> {
    let s = t.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::shape(format!(
            "netpbm needs a (1, 1|3, h, w) tensor, got {s:?}"
        )));
    }
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
    }
    let plane = s.plane();
    let mut bytes = vec![0u8; s.len()];
    for (i, &v) in t.data().iter().enumerate() {
        let (c, p) = (i / plane, i % plane);
        bytes[p * s.c + c] = (v * 255.0).round() as u8;
    }
    Ok(Raster {
        width: s.w,
        height: s.h,
        channels: s.c,
        bytes,
    })
}

fn read_channels(path: &Path, channels: usize) -> Result<Tensor<f32>> {
    let r = read_raster(path)?;
    if r.channels != channels {
        return Err(malformed(format!(
            "{}: expected {} channel(s), found {}",
            path.display(),
            channels,
            r.channels
        )));
    }
    Ok(raster_to_tensor(&r))
}

/// P6 image as a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read_channels(path.as_ref(), 3)
}

/// P5 image as a `(1, 1, h, w)` tensor in `[0, 1]`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read_channels(path.as_ref(), 1)
}

pub fn write_pgm(map: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    if map.shape().c != 1 {
        return Err(Error::shape("write_pgm needs a single channel"));
    }
    write_raster(&tensor_to_raster(map)?, path)
}

pub fn write_ppm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    if image.shape().c != 3 {
        return Err(Error::shape("write_ppm needs three channels"));
    }
    write_raster(&tensor_to_raster(image)?, path)
}
