//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. Criterion 6 trains real networks and takes several minutes.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use san_core::checkpoint::{decode, encode, restore};
use san_core::dataset::{gen_synthetic_dataset, write_voc_style, SaliencySample};
use san_core::eval::{evaluate_dataset, evaluate_maps, f_beta, precision_recall, EvalSettings};
use san_core::gradcheck::run_suite;
use san_core::layers::{Conv2d, Layer};
use san_core::ops::{conv2d_backward, ConvGeometry};
use san_core::postproc::{is_connected_partition, slic, PostprocParams};
use san_core::training::{
    dataset_mse, run_training, EpochRecord, Snapshot, StepStats, TrainConfig, TrainMode,
    TrainObserver, Trainer,
};
use san_core::{build_d_network, build_g_network, LayerKind, Mode, Network, Prng, Tensor};

// Pinned tolerances and budgets.
const GRADCHECK_TOL: f64 = 1e-5;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const BLEND_TOL: f64 = 1e-12;
const SLIC_COUNT_SLACK: f64 = 0.20;
const SLIC_ALIGNMENT: f64 = 0.95;
const SLIC_BUDGET: Duration = Duration::from_secs(30);
const BASELINE1_MSE: f64 = 0.03;
const BASELINE1_MAX_EPOCHS: usize = 200;
const SAN_TRAIN_F: f64 = 0.70;
const SAN_TEST_F: f64 = 0.60;
const SAN_MAX_ITERATIONS: usize = 20;
const POSTPROC_MAX_DROP: f64 = 0.02;
const NOISY_IMPROVE_SHARE: f64 = 0.90;
const SPECKLE_RATE: f64 = 0.15;
const TRAINING_BUDGET: Duration = Duration::from_secs(20 * 60);

// The seeded desk dataset: 48 train / 16 test, 3 classes, 64×64.
const DATA_SEED: u64 = 2024;
const BASELINE1_SEED: u64 = 2;
const BASELINE1_LR: f64 = 2e-4;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

type Outcome = Result<Verdict, String>;

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn random_tensor(shape: (usize, usize, usize, usize), rng: &mut Prng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

// 1 ---------------------------------------------------------------------

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let checks = run_suite(20240501).map_err(e)?;
    let elapsed = start.elapsed();
    let names: BTreeSet<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    let required = [
        "conv",
        "conv_stride2",
        "batchnorm",
        "leaky_relu",
        "sigmoid",
        "fully_connected",
        "softmax_ce",
        "conv_comparison_alpha_0",
        "conv_comparison_alpha_0.3",
        "conv_comparison_alpha_0.8",
        "conv_comparison_alpha_1",
    ];
    let missing: Vec<_> = required.iter().filter(|n| !names.contains(*n)).collect();
    let worst = checks
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0f64, f64::max);
    let ok = missing.is_empty() && worst < GRADCHECK_TOL && elapsed < GRADCHECK_BUDGET;
    Ok(verdict(
        ok,
        format!(
            "{} checks, worst rel err {worst:.2e} (< {GRADCHECK_TOL:e}), {:.1}s, missing {missing:?}",
            checks.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

// 2 ---------------------------------------------------------------------

/// Input, weight and bias gradients of a conv layer for upstream `g_u`.
fn comparison_grads(
    alpha: Option<f64>,
    x: &Tensor<f64>,
    reference: &Tensor<f64>,
    g_u: &Tensor<f64>,
) -> Result<Vec<Vec<f64>>, String> {
    let mut conv = Conv2d::<f64>::new(3, 4, 3, 1, &mut Prng::new(77)).map_err(e)?;
    if let Some(a) = alpha {
        conv = conv.with_comparison(a).map_err(e)?;
    }
    let mut layer = Layer::Conv(conv);
    layer.forward(x, Mode::Train).map_err(e)?;
    if let Layer::Conv(c) = &mut layer {
        if c.is_comparison() {
            c.record_reference(reference.clone()).map_err(e)?;
        }
    }
    let gin = layer.backward(g_u, true).map_err(e)?;
    let mut out = vec![gin.data().to_vec()];
    out.extend(layer.params().iter().map(|p| p.grad.data().to_vec()));
    Ok(out)
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn limit_laws() -> Outcome {
    let mut rng = Prng::new(31);
    let x = random_tensor((2, 3, 6, 6), &mut rng);
    let reference = random_tensor((2, 4, 6, 6), &mut rng);
    let g_u = random_tensor((2, 4, 6, 6), &mut rng);

    let plain = comparison_grads(None, &x, &reference, &g_u)?;
    let alpha0 = comparison_grads(Some(0.0), &x, &reference, &g_u)?;
    let bitwise = plain
        .iter()
        .zip(&alpha0)
        .all(|(a, b)| a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));

    // Independent oracle for α = 1: rescale y − C_g to the upstream norm and
    // push it through the plain conv backward.
    let mut conv = Conv2d::<f64>::new(3, 4, 3, 1, &mut Prng::new(77)).map_err(e)?;
    let y = conv.forward(&x).map_err(e)?;
    let diff: Vec<f64> = y
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| a - b)
        .collect();
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let scale = norm(g_u.data()) / norm(&diff);
    let g_hat =
        Tensor::from_vec(g_u.shape(), diff.iter().map(|d| d * scale).collect()).map_err(e)?;
    let layer = Layer::Conv(Conv2d::<f64>::new(3, 4, 3, 1, &mut Prng::new(77)).map_err(e)?);
    let weights = &layer.params()[0].value;
    let oracle = conv2d_backward(&x, weights, ConvGeometry::new(1, 1), &g_hat).map_err(e)?;
    let oracle = vec![
        oracle.input.data().to_vec(),
        oracle.weights.data().to_vec(),
        oracle.bias,
    ];
    let alpha1 = comparison_grads(Some(1.0), &x, &reference, &g_u)?;
    let err1 = max_abs_diff(&alpha1, &oracle);

    let alpha08 = comparison_grads(Some(0.8), &x, &reference, &g_u)?;
    let convex: Vec<Vec<f64>> = alpha0
        .iter()
        .zip(&alpha1)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| 0.2 * p + 0.8 * q).collect())
        .collect();
    let err08 = max_abs_diff(&alpha08, &convex);
    Ok(verdict(
        bitwise && err1 < BLEND_TOL && err08 < BLEND_TOL,
        format!(
            "α=0 bitwise {bitwise}, α=1 vs oracle {err1:.1e}, α=0.8 vs convex {err08:.1e} (< {BLEND_TOL:e})"
        ),
    ))
}

// 3 ---------------------------------------------------------------------

fn brute_force_f(pred: &[bool], gt: &[bool], beta: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = tp as f64 / (tp + fn_) as f64;
    let b2 = beta * beta;
    if precision + recall == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / (b2 * precision + recall)
    }
}

fn f_beta_oracle() -> Outcome {
    let mut rng = Prng::new(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let density = rng.uniform(0.05, 0.95);
        let pred: Vec<bool> = (0..256).map(|_| rng.next_f64() < density).collect();
        let mut gt: Vec<bool> = (0..256).map(|_| rng.next_f64() < 0.4).collect();
        if !gt.contains(&true) {
            gt[rng.below(256)] = true;
        }
        let (p, r) = precision_recall(&pred, &gt).map_err(e)?;
        if f_beta(p, r, 0.3).to_bits() != brute_force_f(&pred, &gt, 0.3).to_bits() {
            mismatches += 1;
        }
    }
    // Precision emphasis: swapping a larger precision with a smaller recall
    // never raises the score.
    let mut violations = 0;
    for i in 0..=100 {
        for j in 0..=100 {
            let (p, r) = (i as f64 / 100.0, j as f64 / 100.0);
            if p > r && r > 0.0 && f_beta(p, r, 0.3) <= f_beta(r, p, 0.3) {
                violations += 1;
            }
        }
    }
    Ok(verdict(
        mismatches == 0 && violations == 0,
        format!("{mismatches}/1000 oracle mismatches, {violations} emphasis violations on 101×101"),
    ))
}

// 4 ---------------------------------------------------------------------

fn random_image(size: usize, rng: &mut Prng, blocky: bool) -> Tensor<f32> {
    if !blocky {
        return Tensor::from_fn((1, 3, size, size), |_| rng.next_f64() as f32);
    }
    let rects: Vec<(usize, usize, usize, usize, [f32; 3])> = (0..6)
        .map(|_| {
            let (x0, y0) = (rng.below(size), rng.below(size));
            let (w, h) = (8 + rng.below(size / 2), 8 + rng.below(size / 2));
            let c = [
                rng.next_f64() as f32,
                rng.next_f64() as f32,
                rng.next_f64() as f32,
            ];
            (x0, y0, w, h, c)
        })
        .collect();
    let noise: Vec<f32> = (0..3 * size * size)
        .map(|_| 0.05 * rng.normal() as f32)
        .collect();
    Tensor::from_fn((1, 3, size, size), |i| {
        let (c, p) = (i / (size * size), i % (size * size));
        let (y, x) = (p / size, p % size);
        let base = rects
            .iter()
            .rev()
            .find(|r| (r.0..r.0 + r.2).contains(&x) && (r.1..r.1 + r.3).contains(&y))
            .map_or(0.5, |r| r.4[c]);
        (base + noise[i]).clamp(0.0, 1.0)
    })
}

fn slic_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = Prng::new(4);
    let (size, k) = (128, 64);
    let mut bad = Vec::new();
    let (mut min_count, mut max_count) = (usize::MAX, 0);
    for i in 0..20 {
        let img = random_image(size, &mut rng, i % 2 == 1);
        let sp = slic(&img, k, 10.0, 10).map_err(e)?;
        let covered = sp.labels.len() == size * size
            && sp.labels.iter().all(|&l| l < sp.len())
            && sp.segments.iter().map(|s| s.count).sum::<usize>() == size * size
            && sp.segments.iter().all(|s| s.count > 0);
        let count_ok = (sp.len() as f64 - k as f64).abs() <= SLIC_COUNT_SLACK * k as f64;
        min_count = min_count.min(sp.len());
        max_count = max_count.max(sp.len());
        if !(covered && is_connected_partition(&sp) && count_ok) {
            bad.push(i);
        }
    }

    // Two-tone top/bottom halves: with k = 2 every segment boundary pixel
    // must sit on the colour edge; with k = 64 segments must cut the edge.
    let two_tone = Tensor::from_fn((1, 3, size, size), |i| {
        if (i % (size * size)) / size < size / 2 {
            0.15
        } else {
            0.85
        }
    });
    let on_edge = |y: usize| y == size / 2 - 1 || y == size / 2;
    let sp2 = slic(&two_tone, 2, 10.0, 10).map_err(e)?;
    let (mut boundary, mut aligned) = (0usize, 0usize);
    for y in 0..size {
        for x in 0..size {
            let l = sp2.labels[y * size + x];
            let differs = (x + 1 < size && sp2.labels[y * size + x + 1] != l)
                || (y + 1 < size && sp2.labels[(y + 1) * size + x] != l)
                || (x > 0 && sp2.labels[y * size + x - 1] != l)
                || (y > 0 && sp2.labels[(y - 1) * size + x] != l);
            if differs {
                boundary += 1;
                aligned += usize::from(on_edge(y));
            }
        }
    }
    let precision = if boundary == 0 {
        0.0
    } else {
        aligned as f64 / boundary as f64
    };
    let sp64 = slic(&two_tone, k, 10.0, 10).map_err(e)?;
    let cut = (0..size)
        .filter(|x| sp64.labels[(size / 2 - 1) * size + x] != sp64.labels[size / 2 * size + x])
        .count();
    let recall = cut as f64 / size as f64;
    let elapsed = start.elapsed();
    Ok(verdict(
        bad.is_empty()
            && precision >= SLIC_ALIGNMENT
            && recall >= SLIC_ALIGNMENT
            && elapsed < SLIC_BUDGET,
        format!(
            "20 images, counts {min_count}..={max_count} (k={k} ±20%), failing {bad:?}; \
             two-tone alignment {:.1}% (k=2), edge recall {:.1}% (k=64); {:.1}s",
            100.0 * precision,
            100.0 * recall,
            elapsed.as_secs_f64()
        ),
    ))
}

// 5 ---------------------------------------------------------------------

fn architecture() -> Outcome {
    let mut rng = Prng::new(5);
    let mut g = build_g_network::<f32>(3, 9, &mut rng).map_err(e)?;
    g.set_mode(Mode::Eval);
    let x = Tensor::from_fn((2, 3, 64, 64), |_| rng.next_f64() as f32);
    let y = g.forward(&x).map_err(e)?;
    let g_shape = y.shape();
    let in_range = y.data().iter().all(|&v| v > 0.0 && v < 1.0);
    let g_convs = g.conv_count();

    let mut d = build_d_network::<f32>(9, 21, (64, 64), &mut rng).map_err(e)?;
    d.set_mode(Mode::Eval);
    let logits = d.forward(&y).map_err(e)?;
    let comparisons = d.comparison_indices().len();
    let convs = d.conv_count();
    let halvings = d.count_kind(LayerKind::ConvStride2);
    let mut h = y.clone();
    let mut pre_fc = None;
    for layer in d.layers_mut() {
        if matches!(layer, Layer::Linear(_)) {
            pre_fc = Some(h.shape());
            break;
        }
        h = layer.forward(&h, Mode::Eval).map_err(e)?;
    }
    let pre_fc = pre_fc.ok_or("discriminator has no fully-connected layer")?;
    let ok = (g_shape.n, g_shape.c, g_shape.h, g_shape.w) == (2, 9, 64, 64)
        && in_range
        && g_convs == 9
        && logits.shape().item_len() == 21
        && comparisons == 3
        && convs == 15
        && halvings == 4
        && (pre_fc.c, pre_fc.h, pre_fc.w) == (128, 4, 4);
    Ok(verdict(
        ok,
        format!(
            "G {g_convs} convs → {g_shape:?} in (0,1): {in_range}; D {convs} convs, {comparisons} comparison, \
             {halvings} halvings, pre-FC {pre_fc:?}, {} logits",
            logits.shape().item_len()
        ),
    ))
}

// 6 ---------------------------------------------------------------------

struct Progress;

impl TrainObserver for Progress {
    fn on_epoch(&mut self, r: &EpochRecord) {
        if r.phase != san_core::training::Phase::D {
            eprintln!(
                "    iteration {:>2} {} epoch {:>3}: loss {:.4} ({:.0}s)",
                r.iteration, r.phase, r.epoch, r.loss, r.elapsed_s
            );
        }
    }

    fn on_snapshot(&mut self, s: &Snapshot) {
        eprintln!(
            "    iteration {:>2}: train F_beta {:.4}",
            s.iteration, s.train_f_beta
        );
    }
}

/// Ground truth rendered as foreground U(0.6, 1) over background U(0, 0.3),
/// with a fraction of pixels flipped to the opposite range.
fn noisy_map(mask: &Tensor<f32>, rng: &mut Prng) -> Tensor<f32> {
    let d = mask.data();
    Tensor::from_fn(mask.shape(), |i| {
        let fg = (d[i] > 0.5) != (rng.next_f64() < SPECKLE_RATE);
        if fg {
            rng.uniform(0.6, 1.0) as f32
        } else {
            rng.uniform(0.0, 0.3) as f32
        }
    })
}

fn desk_training() -> Outcome {
    let start = Instant::now();
    let all = gen_synthetic_dataset(64, 3, 64, &mut Prng::new(DATA_SEED)).map_err(e)?;
    let (train, test) = all.split_at(48);

    // (a) Generator alone under the pixel MSE loss.
    let mut cfg = TrainConfig::desk();
    cfg.mode = TrainMode::Baseline1;
    cfg.g_lr0 = BASELINE1_LR;
    cfg.seed = BASELINE1_SEED;
    let mut trainer = Trainer::new(cfg, 3, (64, 64)).map_err(e)?;
    let mut mse = f64::INFINITY;
    let mut epochs = 0;
    while epochs < BASELINE1_MAX_EPOCHS && mse >= BASELINE1_MSE {
        trainer
            .mse_epoch(train, 1, &mut san_core::training::NoObserver)
            .map_err(e)?;
        epochs += 1;
        if epochs % 5 == 0 {
            mse = dataset_mse(&mut trainer.g, train).map_err(e)?;
            eprintln!("    baseline1 epoch {epochs:>3}: mse {mse:.4}");
        }
    }
    let a_ok = mse < BASELINE1_MSE;

    // (b) Full adversarial training with the desk preset.
    let cfg = TrainConfig::desk();
    let mut outcome = run_training(&cfg, train, 3, None, &mut Progress).map_err(e)?;
    let best_train = outcome
        .log
        .snapshots
        .iter()
        .take(SAN_MAX_ITERATIONS)
        .map(|s| s.train_f_beta)
        .fold(0.0f64, f64::max);
    let settings = EvalSettings::default();
    let params = PostprocParams::default();
    let raw = evaluate_dataset(&mut outcome.g, test, None, &settings).map_err(e)?;
    let pp = evaluate_dataset(&mut outcome.g, test, Some(&params), &settings).map_err(e)?;
    let b_ok = best_train >= SAN_TRAIN_F && pp.mean_f_beta >= SAN_TEST_F;

    // (c) Post-processing must not hurt the trained model and must help on
    // synthetic noisy maps.
    let mut rng = Prng::new(6);
    let fixture = gen_synthetic_dataset(50, 3, 64, &mut rng).map_err(e)?;
    let maps: Vec<Tensor<f32>> = fixture
        .iter()
        .map(|s| noisy_map(&s.mask, &mut rng))
        .collect();
    let noisy_raw = evaluate_maps(&fixture, &maps, None, &settings).map_err(e)?;
    let noisy_pp = evaluate_maps(&fixture, &maps, Some(&params), &settings).map_err(e)?;
    let improved = noisy_raw
        .images
        .iter()
        .zip(&noisy_pp.images)
        .filter(|(r, p)| p.f_beta > r.f_beta)
        .count();
    let share = improved as f64 / fixture.len() as f64;
    let c_ok =
        pp.mean_f_beta >= raw.mean_f_beta - POSTPROC_MAX_DROP && share >= NOISY_IMPROVE_SHARE;

    let elapsed = start.elapsed();
    Ok(verdict(
        a_ok && b_ok && c_ok && elapsed < TRAINING_BUDGET,
        format!(
            "(a) {} baseline1 mse {mse:.4} after {epochs} epochs; \
             (b) {} best train F {best_train:.3} (≥ {SAN_TRAIN_F}), test F with post-processing {:.3} (≥ {SAN_TEST_F}); \
             (c) {} test F raw {:.3} → post {:.3}, noisy fixture improved {improved}/{} ({:.0}% ≥ {:.0}%); {:.0}s",
            pass_word(a_ok),
            pass_word(b_ok),
            pp.mean_f_beta,
            pass_word(c_ok),
            raw.mean_f_beta,
            pp.mean_f_beta,
            fixture.len(),
            100.0 * share,
            100.0 * NOISY_IMPROVE_SHARE,
            elapsed.as_secs_f64()
        ),
    ))
}

// 7 ---------------------------------------------------------------------

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: 1,
        d_epochs: 2,
        g_epochs: 2,
        batch: 4,
        map_dims: 3,
        seed,
        g_widths: vec![4, 6, 4],
        d_widths: vec![4, 4, 6, 6, 8, 8],
        d_stride2: vec![2, 4],
        d_comparison: vec![3, 5],
        ..TrainConfig::desk()
    }
}

#[derive(Default)]
struct Recorder {
    losses: Vec<u64>,
    d_batches: Vec<(Vec<usize>, Vec<bool>)>,
    g_batches: Vec<Vec<usize>>,
    d_moved: usize,
    g_updates: usize,
}

impl TrainObserver for Recorder {
    fn on_d_batch(&mut self, labels: &[usize], synthetic: &[bool], stats: &StepStats) {
        self.losses.push(stats.loss.to_bits());
        self.d_batches.push((labels.to_vec(), synthetic.to_vec()));
    }

    fn on_g_batch(&mut self, labels: &[usize], stats: &StepStats) {
        self.losses.push(stats.loss.to_bits());
        self.g_batches.push(labels.to_vec());
    }

    fn on_g_update(&mut self, before: &Network<f32>, after: &Network<f32>) {
        self.g_updates += 1;
        if encode(before).ok() != encode(after).ok() {
            self.d_moved += 1;
        }
    }

    fn watch_discriminator(&self) -> bool {
        true
    }
}

fn tiny_dataset() -> Result<Vec<SaliencySample>, String> {
    gen_synthetic_dataset(8, 3, 32, &mut Prng::new(8)).map_err(e)
}

fn file_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(root).unwrap().display().to_string();
                out.push((name, std::fs::read(&path).unwrap_or_default()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let data = tiny_dataset()?;
    let run = |seed| -> Result<(Vec<u64>, Network<f32>, Option<Network<f32>>), String> {
        let mut rec = Recorder::default();
        let out = run_training(&tiny_config(seed), &data, 3, None, &mut rec).map_err(e)?;
        Ok((rec.losses, out.g, out.d))
    };
    let (first, g, d) = run(9)?;
    let (second, _, _) = run(9)?;
    let (other, _, _) = run(10)?;
    let same = !first.is_empty() && first == second;
    let differs = first != other;

    let mut round_trips = true;
    for net in [Some(g), d].into_iter().flatten() {
        let bytes = encode(&net).map_err(e)?;
        let prototype = net.clone();
        let restored = restore(&decode(&bytes).map_err(e)?, prototype).map_err(e)?;
        round_trips &= encode(&restored).map_err(e)? == bytes;
    }

    let dir = tempfile::tempdir().map_err(e)?;
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let samples = gen_synthetic_dataset(12, 3, 32, &mut Prng::new(7)).map_err(e)?;
        write_voc_style(dir.path().join(name), &samples, 3).map_err(e)?;
        trees.push(file_tree(&dir.path().join(name)));
    }
    let data_same = !trees[0].is_empty() && trees[0] == trees[1];
    Ok(verdict(
        same && differs && round_trips && data_same,
        format!(
            "{} step losses bitwise equal {same} (other seed differs {differs}); \
             checkpoint save/load/save identical {round_trips}; dataset bytes identical {data_same}",
            first.len()
        ),
    ))
}

// 8 ---------------------------------------------------------------------

fn labeling_protocol() -> Outcome {
    let data = tiny_dataset()?;
    let classes: BTreeSet<usize> = data.iter().map(|s| s.label).collect();
    let num_classes = 3;
    let synthetic_label = num_classes + 1;
    let mut rec = Recorder::default();
    run_training(&tiny_config(12), &data, num_classes, None, &mut rec).map_err(e)?;

    let mut d_ok = !rec.d_batches.is_empty();
    let (mut gt_seen, mut syn_seen) = (0, 0);
    for (labels, synthetic) in &rec.d_batches {
        for (&l, &s) in labels.iter().zip(synthetic) {
            if s {
                syn_seen += 1;
                d_ok &= l == synthetic_label;
            } else {
                gt_seen += 1;
                d_ok &= (1..=num_classes).contains(&l) && classes.contains(&l);
            }
        }
    }
    d_ok &= gt_seen > 0 && syn_seen == gt_seen;
    let g_ok = !rec.g_batches.is_empty()
        && rec
            .g_batches
            .iter()
            .flatten()
            .all(|&l| (1..=num_classes).contains(&l));
    let frozen = rec.g_updates > 0 && rec.d_moved == 0;
    Ok(verdict(
        d_ok && g_ok && frozen,
        format!(
            "D batches {} ({gt_seen} truth in 1..={num_classes}, {syn_seen} synthetic as {synthetic_label}) {d_ok}; \
             G batches {} without {synthetic_label} {g_ok}; D unchanged across {} G-updates {frozen}",
            rec.d_batches.len(),
            rec.g_batches.len(),
            rec.g_updates
        ),
    ))
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    // Accept and ignore libtest-style flags passed by `cargo test`.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient checks", gradient_checks),
        ("2 comparison limit laws", limit_laws),
        ("3 f-beta oracle", f_beta_oracle),
        ("4 slic properties", slic_properties),
        ("5 architecture contracts", architecture),
        ("6 desk-scale training", desk_training),
        ("7 determinism and persistence", determinism),
        ("8 labeling protocol", labeling_protocol),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match check() {
            Ok(v) => (v.passed, v.detail),
            Err(err) => (false, format!("error: {err}")),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {name}: {} [{:.1}s] {detail}",
            pass_word(ok),
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
