//! VOC-style directory layout.
//!
//! ```text
//! root/images/<id>.ppm    P6 color image
//! root/masks/<id>.pgm     P5, 0 = background, 1..=L class index, 255 = void
//! root/labels.txt         <id>\t<label> per line
//! root/classes.txt        optional <index>\t<name> per line, defines L
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataset::netpbm::{self, Raster};
use crate::dataset::{resize_nearest, synthetic, DatasetMeta, SaliencySample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mask value for unlabeled boundary pixels; counted as background.
pub const VOID_INDEX: u8 = 255;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines split at the first tab.
fn table(text: &str, file: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim_end)
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| Error::Dataset(format!("{file}:{}: expected a tab", i + 1)))
        })
        .collect()
}

fn parse_index(s: &str, file: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Dataset(format!("{file}: bad class index {s:?}")))
}

/// Class with the largest pixel count; ties go to the lower index.
fn largest_class(counts: &BTreeMap<u8, usize>) -> Option<usize> {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&c, _)| c as usize)
}

fn mask_from_indices(
    id: &str,
    raster: &Raster,
    num_classes: usize,
) -> Result<(Tensor<f32>, usize)> {
    let mut counts = BTreeMap::new();
    for &b in &raster.bytes {
        if b == 0 || b == VOID_INDEX {
            continue;
        }
        if b as usize > num_classes {
            return Err(Error::Dataset(format!(
                "{id}: unknown class index {b} in mask (L = {num_classes})"
            )));
        }
        *counts.entry(b).or_insert(0usize) += 1;
    }
    let label = largest_class(&counts).ok_or_else(|| {
        Error::Dataset(format!("{id}: mask has no foreground, no salient object"))
    })?;
    let mask = Tensor::from_fn((1, 1, raster.height, raster.width), |i| {
        let b = raster.bytes[i];
        (b != 0 && b != VOID_INDEX) as u8 as f32
    });
    Ok((mask, label))
}

/// Load every sample listed in `labels.txt`, ordered by id.
///
/// The saliency mask is the union of all foreground classes and the label is
/// the class covering the most pixels. `resize_to` is `(height, width)`.
pub fn load_voc_style(
    root: impl AsRef<Path>,
    resize_to: Option<(usize, usize)>,
) -> Result<(Vec<SaliencySample>, DatasetMeta)> {
    let root = root.as_ref();
    let listed = table(&read_text(&root.join("labels.txt"))?, "labels.txt")?;
    if listed.is_empty() {
        return Err(Error::Dataset("labels.txt lists no samples".into()));
    }
    let mut declared = BTreeMap::new();
    for (id, label) in &listed {
        let label = parse_index(label, "labels.txt")?;
        if declared.insert(id.clone(), label).is_some() {
            return Err(Error::Dataset(format!("duplicate id {id}")));
        }
    }

    let classes_path = root.join("classes.txt");
    let class_names = if classes_path.exists() {
        let rows = table(&read_text(&classes_path)?, "classes.txt")?;
        let mut names = Vec::new();
        for (i, (index, name)) in rows.into_iter().enumerate() {
            if parse_index(&index, "classes.txt")? != i + 1 {
                return Err(Error::Dataset(
                    "classes.txt indices must run 1, 2, 3, ...".into(),
                ));
            }
            names.push(name);
        }
        names
    } else {
        let max = declared.values().copied().max().unwrap_or(0);
        (1..=max).map(|i| format!("class{i}")).collect()
    };
    let num_classes = class_names.len();
    if num_classes == 0 {
        return Err(Error::Dataset("no classes defined".into()));
    }

    let mut samples = Vec::with_capacity(declared.len());
    for (id, &listed_label) in &declared {
        if listed_label == 0 || listed_label > num_classes {
            return Err(Error::Dataset(format!(
                "{id}: unknown class index {listed_label} in labels.txt"
            )));
        }
        let image_path = root.join("images").join(format!("{id}.ppm"));
        let mask_path = root.join("masks").join(format!("{id}.pgm"));
        for p in [&image_path, &mask_path] {
            if !p.exists() {
                return Err(Error::Dataset(format!("{id}: missing {}", p.display())));
            }
        }
        let image = netpbm::read_ppm(&image_path)?;
        let raster = netpbm::read_raster(&mask_path)?;
        if raster.channels != 1 {
            return Err(Error::Dataset(format!("{id}: mask must be P5")));
        }
        let (mask, label) = mask_from_indices(id, &raster, num_classes)?;
        let (is, ms) = (image.shape(), mask.shape());
        if (is.h, is.w) != (ms.h, ms.w) {
            return Err(Error::Dataset(format!(
                "{id}: image {}×{} vs mask {}×{}",
                is.h, is.w, ms.h, ms.w
            )));
        }
        let (image, mask) = match resize_to {
            Some(size) => (resize_nearest(&image, size), resize_nearest(&mask, size)),
            None => (image, mask),
        };
        let sample = SaliencySample {
            id: id.clone(),
            image,
            mask,
            label,
        };
        sample.validate(num_classes)?;
        samples.push(sample);
    }
    let meta = DatasetMeta {
        num_classes,
        class_names,
        len: samples.len(),
    };
    Ok((samples, meta))
}

/// Write `samples` in the layout read by [`load_voc_style`]; masks store the
/// sample label as class index.
pub fn write_voc_style(
    root: impl AsRef<Path>,
    samples: &[SaliencySample],
    num_classes: usize,
) -> Result<()> {
    let root = root.as_ref();
    for dir in [root.join("images"), root.join("masks")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut labels = String::new();
    for s in samples {
        s.validate(num_classes)?;
        netpbm::write_ppm(&s.image, root.join("images").join(format!("{}.ppm", s.id)))?;
        let index = s.mask.map(|v| v * s.label as f32);
        let raster = Raster {
            width: index.shape().w,
            height: index.shape().h,
            channels: 1,
            bytes: index.data().iter().map(|&v| v as u8).collect(),
        };
        netpbm::write_raster(&raster, root.join("masks").join(format!("{}.pgm", s.id)))?;
        labels.push_str(&format!("{}\t{}\n", s.id, s.label));
    }
    let classes: String = (1..=num_classes)
        .map(|k| format!("{k}\t{}\n", synthetic::shape_name(k)))
        .collect();
    for (name, text) in [("labels.txt", labels), ("classes.txt", classes)] {
        let p = root.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
