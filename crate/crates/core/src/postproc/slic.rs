//! SLIC superpixels: local k-means over (L, a, b, x, y) followed by
//! connectivity enforcement.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::postproc::lab::image_to_lab;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Mean CIELAB color.
    pub lab: [f64; 3],
    /// Mean pixel position `(x, y)`, pixel centers at integer coordinates.
    pub centroid: (f64, f64),
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    /// Row-major segment id per pixel, `0..segments.len()`.
    pub labels: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl SuperpixelMap {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Grid of about `k` cells with the aspect ratio of the image.
fn grid(width: usize, height: usize, k: usize) -> (usize, usize) {
    let nx = ((k as f64 * width as f64 / height as f64).sqrt().round() as usize).clamp(1, width);
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, height);
    (nx, ny)
}

pub fn slic(
    image: &Tensor<f32>,
    k: usize,
    compactness: f64,
    iters: usize,
) -> Result<SuperpixelMap> {
    let s = image.shape();
    let (w, h) = (s.w, s.h);
    let n = w * h;
    if k < 1 || k > n {
        return Err(Error::invalid(format!("slic k = {k} outside 1..={n}")));
    }
    if !(compactness > 0.0) {
        return Err(Error::invalid("slic compactness must be positive"));
    }
    let lab = image_to_lab(image)?;
    let step = (n as f64 / k as f64).sqrt();

    let at = |x: usize, y: usize| &lab[y * w + x];
    let gradient = |x: usize, y: usize| {
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        dist2(at(xr, y), at(xl, y)) + dist2(at(x, yd), at(x, yu))
    };

    let (nx, ny) = grid(w, h, k);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // Cell center in pixel coordinates, then the lowest-gradient
            // pixel of the 3×3 neighbourhood if it beats the nearest pixel.
            let (fx, fy) = ((i as f64 + 0.5) * sx - 0.5, (j as f64 + 0.5) * sy - 0.5);
            let cx = (fx.round() as usize).min(w - 1);
            let cy = (fy.round() as usize).min(h - 1);
            let (mut pos, mut px, mut bg) = ((fx, fy), (cx, cy), gradient(cx, cy));
            for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = gradient(x, y);
                    if g < bg {
                        (pos, px, bg) = ((x as f64, y as f64), (x, y), g);
                    }
                }
            }
            centers.push(Center {
                lab: *at(px.0, px.1),
                x: pos.0,
                y: pos.1,
            });
        }
    }

    let spatial = (compactness / step).powi(2);
    let distance = |c: &Center, p: usize| {
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        dist2(&c.lab, &lab[p]) + spatial * ((x - c.x).powi(2) + (y - c.y).powi(2))
    };
    let mut labels = vec![usize::MAX; n];
    for _ in 0..iters.max(1) {
        let mut best = vec![f64::INFINITY; n];
        labels.fill(usize::MAX);
        for (ci, c) in centers.iter().enumerate() {
            let x0 = (c.x - step).floor().max(0.0) as usize;
            let x1 = ((c.x + step).ceil() as usize).min(w - 1);
            let y0 = (c.y - step).floor().max(0.0) as usize;
            let y1 = ((c.y + step).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    let d = distance(c, p);
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = ci;
                    }
                }
            }
        }
        // Pixels outside every window go to the nearest center overall.
        for p in 0..n {
            if labels[p] == usize::MAX {
                labels[p] = (0..centers.len())
                    .min_by(|&a, &b| distance(&centers[a], p).total_cmp(&distance(&centers[b], p)))
                    .unwrap_or(0);
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for p in 0..n {
            let a = &mut acc[labels[p]];
            a[0] += lab[p][0];
            a[1] += lab[p][1];
            a[2] += lab[p][2];
            a[3] += (p % w) as f64;
            a[4] += (p / w) as f64;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                *c = Center {
                    lab: [a[0] / a[5], a[1] / a[5], a[2] / a[5]],
                    x: a[3] / a[5],
                    y: a[4] / a[5],
                };
            }
        }
    }

    let labels = enforce_connectivity(&labels, w, h);
    Ok(build_map(&lab, labels, w, h))
}

fn neighbours(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
}

/// 4-connected components of `labels`, numbered in scan order.
fn components(labels: &[usize], w: usize, h: usize) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbours(p, w, h) {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Keep the largest component of every cluster and merge every other
/// component into its largest adjacent region. Returns compact labels
/// numbered in scan order.
pub(crate) fn enforce_connectivity(labels: &[usize], w: usize, h: usize) -> Vec<usize> {
    let (comp, sizes) = components(labels, w, h);
    let ncomp = sizes.len();

    let mut cluster_of = vec![0; ncomp];
    let mut first_pixel = vec![usize::MAX; ncomp];
    for (p, &c) in comp.iter().enumerate() {
        if first_pixel[c] == usize::MAX {
            first_pixel[c] = p;
            cluster_of[c] = labels[p];
        }
    }
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut largest: Vec<Option<usize>> = vec![None; clusters];
    for c in 0..ncomp {
        let slot = &mut largest[cluster_of[c]];
        if slot.is_none_or(|b| sizes[c] > sizes[b]) {
            *slot = Some(c);
        }
    }
    let kept: Vec<bool> = (0..ncomp)
        .map(|c| largest[cluster_of[c]] == Some(c))
        .collect();

    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for p in 0..comp.len() {
        for q in neighbours(p, w, h) {
            if comp[p] != comp[q] {
                adjacent[comp[p]].push(comp[q]);
            }
        }
    }
    let mut parent: Vec<usize> = (0..ncomp).collect();
    let mut group_size = sizes.clone();
    for c in (0..ncomp).filter(|&c| !kept[c]) {
        let mut target: Option<usize> = None;
        for &a in &adjacent[c] {
            let r = find(&mut parent, a);
            let me = find(&mut parent, c);
            if r == me {
                continue;
            }
            if target.is_none_or(|t| {
                group_size[r] > group_size[t] || (group_size[r] == group_size[t] && r < t)
            }) {
                target = Some(r);
            }
        }
        if let Some(t) = target {
            let me = find(&mut parent, c);
            parent[me] = t;
            group_size[t] += group_size[me];
        }
    }

    let mut compact = vec![usize::MAX; ncomp];
    let mut next = 0;
    comp.iter()
        .map(|&c| {
            let r = find(&mut parent, c);
            if compact[r] == usize::MAX {
                compact[r] = next;
                next += 1;
            }
            compact[r]
        })
        .collect()
}

fn build_map(lab: &[[f64; 3]], labels: Vec<usize>, w: usize, h: usize) -> SuperpixelMap {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut acc = vec![[0.0f64; 6]; k];
    for (p, &l) in labels.iter().enumerate() {
        let a = &mut acc[l];
        a[0] += lab[p][0];
        a[1] += lab[p][1];
        a[2] += lab[p][2];
        a[3] += (p % w) as f64;
        a[4] += (p / w) as f64;
        a[5] += 1.0;
    }
    let segments = acc
        .iter()
        .map(|a| Segment {
            lab: [a[0] / a[5], a[1] / a[5], a[2] / a[5]],
            centroid: (a[3] / a[5], a[4] / a[5]),
            count: a[5] as usize,
        })
        .collect();
    SuperpixelMap {
        width: w,
        height: h,
        labels,
        segments,
    }
}

/// Whether every segment of `sp` is one 4-connected region.
pub fn is_connected_partition(sp: &SuperpixelMap) -> bool {
    let (_, sizes) = components(&sp.labels, sp.width, sp.height);
    sizes.len() == sp.segments.len()
        && sp.segments.iter().all(|s| s.count > 0)
        && sp.labels.iter().all(|&l| l < sp.segments.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(h: usize, w: usize) -> Tensor<f32> {
        Tensor::full((1, 3, h, w), 0.4)
    }

    #[test]
    fn uniform_image_gives_grid() {
        let sp = slic(&uniform(16, 16), 4, 10.0, 10).unwrap();
        assert_eq!(sp.len(), 4);
        assert!(sp.segments.iter().all(|s| s.count == 64));
        assert!(is_connected_partition(&sp));
    }

    #[test]
    fn two_tone_split_follows_the_edge() {
        let img = Tensor::from_fn(
            (1, 3, 20, 20),
            |i| if (i % 400) / 20 < 7 { 0.1 } else { 0.9 },
        );
        let sp = slic(&img, 2, 10.0, 10).unwrap();
        assert_eq!(sp.len(), 2);
        for p in 0..400 {
            assert_eq!(sp.labels[p], usize::from(p / 20 >= 7));
        }
    }

    #[test]
    fn orphans_merge_into_largest_neighbour() {
        // Clusters 1 and 2 are both split in two.
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 1, 1,
            0, 0, 1, 2,
            0, 0, 2, 1,
        ];
        let out = enforce_connectivity(&labels, 4, 3);
        let sp = build_map(&vec![[0.0; 3]; 12], out, 4, 3);
        assert!(is_connected_partition(&sp));
        assert_eq!(sp.segments.iter().map(|s| s.count).sum::<usize>(), 12);
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        assert!(slic(&uniform(4, 4), 0, 10.0, 1).is_err());
        assert!(slic(&uniform(4, 4), 17, 10.0, 1).is_err());
    }
}
