//! Three-phase supervised adversarial training and the ablation baselines.
//!
//! Every iteration runs `d_epochs` discriminator epochs, each batch pairing
//! ground-truth maps (labelled with the image class) with maps freshly
//! generated by G (labelled `L + 1`), then `g_epochs` generator epochs through
//! a frozen D that is asked to see the image class.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::dataset::{stack_images, stack_masks, SaliencySample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, EvalSettings};
use crate::layers::Mode;
use crate::network::{
    build_discriminator, build_generator, DiscriminatorSpec, GeneratorSpec, Network,
};
use crate::ops::{argmax_labels, softmax_cross_entropy};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Replicate a `(n, 1, h, w)` mask over `k` channels.
pub fn expand_ground_truth(mask: &Tensor<f32>, k: usize) -> Result<Tensor<f32>> {
    let s = mask.shape();
    if k < 1 {
        return Err(Error::invalid("expand_ground_truth needs k ≥ 1"));
    }
    if s.c != 1 {
        return Err(Error::shape(format!(
            "expected a single-channel mask, got {s:?}"
        )));
    }
    let plane = s.plane();
    Ok(Tensor::from_fn((s.n, k, s.h, s.w), |i| {
        let n = i / (k * plane);
        mask.data()[n * plane + i % plane]
    }))
}

/// Per-pixel mean over channels: `(n, k, h, w)` → `(n, 1, h, w)`.
pub fn average_channels(maps: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = maps.shape();
    if s.c < 1 {
        return Err(Error::shape("average_channels of zero channels"));
    }
    let plane = s.plane();
    let mut out = Tensor::zeros((s.n, 1, s.h, s.w));
    for n in 0..s.n {
        let dst = out.item_mut(n);
        for c in 0..s.c {
            let src = &maps.item(n)[c * plane..(c + 1) * plane];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
        let k = s.c as f32;
        dst.iter_mut().for_each(|d| *d /= k);
    }
    Ok(out)
}

/// Synthetic maps from `g` in its current mode.
pub fn generate_saliency_batch(g: &mut Network<f32>, images: &Tensor<f32>) -> Result<Tensor<f32>> {
    let maps = g.forward(images)?;
    let (si, sm) = (images.shape(), maps.shape());
    if (si.h, si.w) != (sm.h, sm.w) {
        return Err(Error::shape(format!(
            "generator changed size {si:?} → {sm:?}"
        )));
    }
    Ok(maps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    San,
    /// Generator alone, squared error to the ground truth.
    Baseline1,
    /// Two-class discriminator: ground truth versus synthetic.
    Baseline2,
    /// No conv-comparison layers.
    Baseline3,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::San => "san",
            TrainMode::Baseline1 => "baseline1",
            TrainMode::Baseline2 => "baseline2",
            TrainMode::Baseline3 => "baseline3",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "san" => Ok(TrainMode::San),
            "baseline1" => Ok(TrainMode::Baseline1),
            "baseline2" => Ok(TrainMode::Baseline2),
            "baseline3" => Ok(TrainMode::Baseline3),
            _ => Err(Error::Config(format!(
                "invalid mode {s:?} (san, baseline1, baseline2, baseline3)"
            ))),
        }
    }
}

/// Training phases in which the comparison gradient is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonPhase {
    Both,
    D,
    G,
}

impl ComparisonPhase {
    fn in_d(self) -> bool {
        matches!(self, ComparisonPhase::Both | ComparisonPhase::D)
    }

    fn in_g(self) -> bool {
        matches!(self, ComparisonPhase::Both | ComparisonPhase::G)
    }
}

impl FromStr for ComparisonPhase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ComparisonPhase::Both),
            "d" => Ok(ComparisonPhase::D),
            "g" => Ok(ComparisonPhase::G),
            _ => Err(Error::Config(format!(
                "invalid comparison_phase {s:?} (both, d, g)"
            ))),
        }
    }
}

/// When synthetic maps for the discriminator are regenerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regeneration {
    PerBatch,
    PerIteration,
}

impl FromStr for Regeneration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_batch" => Ok(Regeneration::PerBatch),
            "per_iteration" => Ok(Regeneration::PerIteration),
            _ => Err(Error::Config(format!(
                "invalid regeneration {s:?} (per_batch, per_iteration)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub d_epochs: usize,
    pub g_epochs: usize,
    /// Discriminator batch: half ground truth, half synthetic. Generator
    /// batches hold `batch / 2` images.
    pub batch: usize,
    pub d_lr0: f64,
    pub g_lr0: f64,
    pub lr_decay: f64,
    pub alpha: f64,
    pub map_dims: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub comparison_phase: ComparisonPhase,
    pub regeneration: Regeneration,
    pub g_widths: Vec<usize>,
    pub d_widths: Vec<usize>,
    pub d_stride2: Vec<usize>,
    pub d_comparison: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GeneratorSpec::default();
        let d = DiscriminatorSpec::default();
        Self {
            iterations: 20,
            d_epochs: 6,
            g_epochs: 2,
            batch: 16,
            d_lr0: 0.0006,
            g_lr0: 0.0001,
            lr_decay: 0.98,
            alpha: 0.8,
            map_dims: 9,
            seed: 0,
            mode: TrainMode::San,
            comparison_phase: ComparisonPhase::Both,
            regeneration: Regeneration::PerBatch,
            g_widths: g.hidden_widths,
            d_widths: d.widths,
            d_stride2: d.stride2_layers,
            d_comparison: d.comparison_layers,
            leaky_slope: d.leaky_slope,
        }
    }
}

impl TrainConfig {
    /// Narrower networks and larger step sizes that train on one CPU core in
    /// minutes; depths, schedule and layer placement are unchanged.
    pub fn desk() -> Self {
        Self {
            d_lr0: 0.0006,
            g_lr0: 0.0005,
            g_widths: vec![8, 12, 16, 16, 16, 12, 8, 8],
            d_widths: vec![8, 8, 16, 16, 16, 24, 24, 24, 32, 32, 32, 48, 48, 48, 48],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.batch < 2 || !self.batch.is_multiple_of(2) {
            return bad(format!("batch must be even and ≥ 2, got {}", self.batch));
        }
        for (name, lr) in [("d_lr0", self.d_lr0), ("g_lr0", self.g_lr0)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.map_dims == 0 {
            return bad("map_dims must be positive".into());
        }
        self.generator_spec().validate()?;
        Ok(())
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            input_channels: 3,
            hidden_widths: self.g_widths.clone(),
            map_dims: self.map_dims,
        }
    }

    /// Discriminator for `L` classes on `size` inputs under the current mode.
    pub fn discriminator_spec(
        &self,
        num_classes: usize,
        size: (usize, usize),
    ) -> DiscriminatorSpec {
        DiscriminatorSpec {
            input_channels: self.map_dims,
            widths: self.d_widths.clone(),
            stride2_layers: self.d_stride2.clone(),
            comparison_layers: if self.mode == TrainMode::Baseline3 {
                Vec::new()
            } else {
                self.d_comparison.clone()
            },
            num_classes: if self.mode == TrainMode::Baseline2 {
                2
            } else {
                num_classes + 1
            },
            input_size: size,
            leaky_slope: self.leaky_slope,
            alpha: self.alpha,
        }
    }

    /// Learning rate at 0-based phase epoch `e`.
    pub fn lr_at(lr0: f64, decay: f64, e: usize) -> f64 {
        lr0 * decay.powi(e as i32)
    }
}

/// Label scheme for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labels {
    /// `L`.
    pub classes: usize,
    pub two_class: bool,
}

impl Labels {
    pub fn synthetic(&self) -> usize {
        if self.two_class {
            2
        } else {
            self.classes + 1
        }
    }

    pub fn real(&self, class: usize) -> usize {
        if self.two_class {
            1
        } else {
            class
        }
    }
}

/// One minibatch of paired images and expanded ground truth.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    /// `(p, map_dims, h, w)`.
    pub ground_truth: Tensor<f32>,
    /// Image classes in `1..=L`.
    pub classes: Vec<usize>,
}

impl Batch {
    pub fn gather(samples: &[SaliencySample], indices: &[usize], map_dims: usize) -> Result<Self> {
        Ok(Self {
            images: stack_images(samples, indices)?,
            ground_truth: expand_ground_truth(&stack_masks(samples, indices)?, map_dims)?,
            classes: indices.iter().map(|&i| samples[i].label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub accuracy: f64,
}

fn accuracy(logits: &Tensor<f32>, labels: &[usize]) -> f64 {
    let hits = argmax_labels(logits)
        .iter()
        .zip(labels)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len() as f64
}

/// Labels of a discriminator batch: the ground-truth half first, then the synthetic half.
pub fn d_batch_labels(classes: &[usize], labels: Labels) -> Vec<usize> {
    classes
        .iter()
        .map(|&c| labels.real(c))
        .chain(classes.iter().map(|_| labels.synthetic()))
        .collect()
}

/// One SGD step on `d` over ground truth paired with `synthetic`.
pub fn train_d_step(
    d: &mut Network<f32>,
    ground_truth: &Tensor<f32>,
    synthetic: &Tensor<f32>,
    batch_labels: &[usize],
    lr: f64,
    comparison: bool,
) -> Result<StepStats> {
    ground_truth.expect_same_shape(synthetic, "train_d_step")?;
    let p = ground_truth.shape().n;
    let x = Tensor::concat(&[ground_truth, synthetic])?;
    d.set_mode(Mode::Train);
    d.set_frozen(false);
    let logits = d.forward(&x)?;
    if comparison {
        let pairing: Vec<usize> = (0..p).chain(0..p).collect();
        d.record_paired_references(&pairing)?;
    }
    let (loss, grad) = softmax_cross_entropy(&logits, batch_labels)?;
    let result = d.backward(&grad).and_then(|_| d.sgd_step(lr));
    d.clear_references();
    result?;
    Ok(StepStats {
        loss,
        accuracy: accuracy(&logits, batch_labels),
    })
}

/// Forward G → frozen D and back-propagate into G, leaving gradients in `g`.
/// With `zero_classification` the classification gradient entering D is
/// replaced by zeros, so only comparison gradients reach G.
pub fn g_step_backward(
    g: &mut Network<f32>,
    d: &mut Network<f32>,
    batch: &Batch,
    targets: &[usize],
    comparison: bool,
    zero_classification: bool,
) -> Result<StepStats> {
    let max = d
        .layers()
        .last()
        .map(|l| l.spec(0).channels_out)
        .unwrap_or(0);
    if let Some(&bad) = targets.iter().find(|&&t| t == 0 || t >= max) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            max: max.saturating_sub(1),
        });
    }
    let d_mode = d.mode();
    d.set_mode(Mode::Eval);
    d.set_frozen(true);
    let result = (|| {
        if comparison {
            d.record_references(&batch.ground_truth)?;
        }
        g.set_mode(Mode::Train);
        let maps = generate_saliency_batch(g, &batch.images)?;
        let logits = d.forward(&maps)?;
        let (loss, mut grad) = softmax_cross_entropy(&logits, targets)?;
        if zero_classification {
            grad.fill(0.0);
        }
        let grad_maps = d.backward(&grad)?;
        g.backward(&grad_maps)?;
        Ok(StepStats {
            loss,
            accuracy: accuracy(&logits, targets),
        })
    })();
    d.clear_references();
    d.set_frozen(false);
    d.set_mode(d_mode);
    result
}

/// One SGD step on `g` through frozen `d`; `d` is left bitwise unchanged.
pub fn train_g_step(
    g: &mut Network<f32>,
    d: &mut Network<f32>,
    batch: &Batch,
    targets: &[usize],
    lr: f64,
    comparison: bool,
) -> Result<StepStats> {
    let stats = g_step_backward(g, d, batch, targets, comparison, false)?;
    g.sgd_step(lr)?;
    Ok(stats)
}

/// Per-image loss `Σ_pixels mean_channels (m − t)²`, averaged over the batch;
/// returns the loss, the mean per-pixel squared error, and leaves gradients in `g`.
pub fn mse_step_backward(g: &mut Network<f32>, batch: &Batch) -> Result<(f64, f64)> {
    g.set_mode(Mode::Train);
    let maps = generate_saliency_batch(g, &batch.images)?;
    maps.expect_same_shape(&batch.ground_truth, "mse_step")?;
    let s = maps.shape();
    let per_image = (s.c * s.n) as f32;
    let mut sq = 0.0f64;
    let grad = maps.zip_map(&batch.ground_truth, |m, t| 2.0 * (m - t) / per_image)?;
    for (m, t) in maps.data().iter().zip(batch.ground_truth.data()) {
        sq += ((m - t) as f64).powi(2);
    }
    g.backward(&grad)?;
    let per_pixel = sq / maps.len() as f64;
    Ok((per_pixel * s.plane() as f64, per_pixel))
}

/// Mean per-pixel squared error of the channel-averaged maps, eval mode.
pub fn dataset_mse(g: &mut Network<f32>, samples: &[SaliencySample]) -> Result<f64> {
    let maps = crate::eval::predict_maps(g, samples)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (m, s) in maps.iter().zip(samples) {
        for (a, b) in m.data().iter().zip(s.mask.data()) {
            total += ((a - b) as f64).powi(2);
        }
        count += m.len();
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    D,
    G,
    Mse,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::D => "d",
            Phase::G => "g",
            Phase::Mse => "mse",
        })
    }
}

/// Mean statistics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub iteration: usize,
    pub phase: Phase,
    /// 0-based count of earlier epochs of the same phase in the run.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub train_f_beta: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,phase,epoch,loss,accuracy,lr";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration, r.phase, r.epoch, r.loss, r.accuracy, r.lr
            ));
        }
        out
    }

    pub fn phase_epochs(&self, phase: Phase) -> usize {
        self.epochs.iter().filter(|r| r.phase == phase).count()
    }
}

/// Hooks into the training loop for instrumentation.
pub trait TrainObserver {
    /// Labels fed to the classification loss of a D-update; `synthetic[i]`
    /// tells whether item `i` is a generated map.
    fn on_d_batch(&mut self, _labels: &[usize], _synthetic: &[bool], _stats: &StepStats) {}
    /// Labels fed to the classification loss of a G-update.
    fn on_g_batch(&mut self, _labels: &[usize], _stats: &StepStats) {}
    /// Discriminator copies around every G-update; only called when
    /// [`TrainObserver::watch_discriminator`] is true.
    fn on_g_update(&mut self, _d_before: &Network<f32>, _d_after: &Network<f32>) {}
    fn watch_discriminator(&self) -> bool {
        false
    }
    fn on_epoch(&mut self, _record: &EpochRecord) {}
    fn on_snapshot(&mut self, _snapshot: &Snapshot) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Output files of a run: `train_log.csv`, `train_log.jsonl` and
/// `checkpoints/{g,d}_iterNN.ckpt`.
struct RunFiles {
    dir: PathBuf,
    jsonl: fs::File,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        let path = dir.join("train_log.jsonl");
        let jsonl = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            jsonl,
        })
    }

    fn line(&mut self, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string(value).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(self.jsonl, "{text}").map_err(|e| Error::io(self.dir.join("train_log.jsonl"), e))
    }
}

/// State of a run in progress.
pub struct Trainer {
    pub config: TrainConfig,
    pub g: Network<f32>,
    /// Absent in baseline 1.
    pub d: Option<Network<f32>>,
    pub labels: Labels,
    pub log: TrainLog,
    shuffle_rng: Prng,
    d_epoch: usize,
    g_epoch: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig, num_classes: usize, size: (usize, usize)) -> Result<Self> {
        config.validate()?;
        if num_classes < 1 {
            return Err(Error::Config("need at least one class".into()));
        }
        let g = build_generator(&config.generator_spec(), &mut Prng::derived(config.seed, 1))?;
        let d = if config.mode == TrainMode::Baseline1 {
            None
        } else {
            let spec = config.discriminator_spec(num_classes, size);
            Some(build_discriminator(
                &spec,
                &mut Prng::derived(config.seed, 2),
            )?)
        };
        Ok(Self {
            labels: Labels {
                classes: num_classes,
                two_class: config.mode == TrainMode::Baseline2,
            },
            shuffle_rng: Prng::derived(config.seed, 3),
            config,
            g,
            d,
            log: TrainLog::default(),
            d_epoch: 0,
            g_epoch: 0,
            started: Instant::now(),
        })
    }

    /// Shuffled sample order cut into batches of `size`; a trailing batch of
    /// one is dropped because batch statistics need two items.
    fn batches(&mut self, n: usize, size: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        self.shuffle_rng.shuffle(&mut order);
        order
            .chunks(size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn pairs(&self) -> usize {
        self.config.batch / 2
    }

    fn check_samples(&self, samples: &[SaliencySample]) -> Result<()> {
        if samples.len() < 2 {
            return Err(Error::Dataset("training needs at least two samples".into()));
        }
        for s in samples {
            s.validate(self.labels.classes)?;
        }
        Ok(())
    }

    fn record(&mut self, record: EpochRecord, observer: &mut dyn TrainObserver) {
        observer.on_epoch(&record);
        self.log.epochs.push(record);
    }

    fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Maps for every sample from the current generator, batch statistics.
    fn generate_all(&mut self, samples: &[SaliencySample]) -> Result<Vec<Tensor<f32>>> {
        let p = self.pairs().max(2);
        let mut maps = Vec::with_capacity(samples.len());
        self.g.set_mode(Mode::BatchStats);
        let idx: Vec<usize> = (0..samples.len()).collect();
        for chunk in idx.chunks(p) {
            let mode = if chunk.len() < 2 {
                Mode::Eval
            } else {
                Mode::BatchStats
            };
            self.g.set_mode(mode);
            let out = generate_saliency_batch(&mut self.g, &stack_images(samples, chunk)?)?;
            for i in 0..chunk.len() {
                maps.push(out.select(&[i])?);
            }
        }
        Ok(maps)
    }

    pub fn d_epoch(
        &mut self,
        samples: &[SaliencySample],
        iteration: usize,
        cached: Option<&[Tensor<f32>]>,
        observer: &mut dyn TrainObserver,
    ) -> Result<EpochRecord> {
        let lr = TrainConfig::lr_at(self.config.d_lr0, self.config.lr_decay, self.d_epoch);
        let comparison = self.config.comparison_phase.in_d();
        let (mut loss, mut acc, mut count) = (0.0, 0.0, 0usize);
        let p = self.pairs();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(p) {
            let batch = Batch::gather(samples, chunk, self.config.map_dims)?;
            let synthetic = match cached {
                Some(maps) => {
                    let parts: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &maps[i]).collect();
                    Tensor::concat(&parts)?
                }
                None => {
                    self.g.set_mode(if chunk.len() < 2 {
                        Mode::Eval
                    } else {
                        Mode::BatchStats
                    });
                    generate_saliency_batch(&mut self.g, &batch.images)?
                }
            };
            let labels = d_batch_labels(&batch.classes, self.labels);
            let d = self
                .d
                .as_mut()
                .ok_or_else(|| Error::invalid("no discriminator"))?;
            let stats = train_d_step(d, &batch.ground_truth, &synthetic, &labels, lr, comparison)?;
            let flags: Vec<bool> = (0..labels.len()).map(|i| i >= chunk.len()).collect();
            observer.on_d_batch(&labels, &flags, &stats);
            loss += stats.loss * chunk.len() as f64;
            acc += stats.accuracy * chunk.len() as f64;
            count += chunk.len();
        }
        let record = EpochRecord {
            iteration,
            phase: Phase::D,
            epoch: self.d_epoch,
            loss: loss / count as f64,
            accuracy: acc / count as f64,
            lr,
            elapsed_s: self.elapsed(),
        };
        self.d_epoch += 1;
        self.record(record.clone(), observer);
        Ok(record)
    }

    pub fn g_epoch(
        &mut self,
        samples: &[SaliencySample],
        iteration: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<EpochRecord> {
        let lr = TrainConfig::lr_at(self.config.g_lr0, self.config.lr_decay, self.g_epoch);
        let comparison = self.config.comparison_phase.in_g();
        let (mut loss, mut acc, mut count) = (0.0, 0.0, 0usize);
        for chunk in self.batches(samples.len(), self.pairs()) {
            let batch = Batch::gather(samples, &chunk, self.config.map_dims)?;
            let targets: Vec<usize> = batch.classes.iter().map(|&c| self.labels.real(c)).collect();
            let d = self
                .d
                .as_mut()
                .ok_or_else(|| Error::invalid("no discriminator"))?;
            let before = observer.watch_discriminator().then(|| d.clone());
            let stats = train_g_step(&mut self.g, d, &batch, &targets, lr, comparison)?;
            if let Some(before) = before {
                observer.on_g_update(&before, d);
            }
            observer.on_g_batch(&targets, &stats);
            loss += stats.loss * chunk.len() as f64;
            acc += stats.accuracy * chunk.len() as f64;
            count += chunk.len();
        }
        let record = EpochRecord {
            iteration,
            phase: Phase::G,
            epoch: self.g_epoch,
            loss: loss / count as f64,
            accuracy: acc / count as f64,
            lr,
            elapsed_s: self.elapsed(),
        };
        self.g_epoch += 1;
        self.record(record.clone(), observer);
        Ok(record)
    }

    /// One baseline-1 epoch: generator alone against the expanded ground truth.
    /// The record's `accuracy` column carries the mean per-pixel squared error.
    pub fn mse_epoch(
        &mut self,
        samples: &[SaliencySample],
        iteration: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<EpochRecord> {
        let lr = TrainConfig::lr_at(self.config.g_lr0, self.config.lr_decay, self.g_epoch);
        let (mut loss, mut mse, mut count) = (0.0, 0.0, 0usize);
        for chunk in self.batches(samples.len(), self.pairs()) {
            let batch = Batch::gather(samples, &chunk, self.config.map_dims)?;
            let (l, m) = mse_step_backward(&mut self.g, &batch)?;
            self.g.sgd_step(lr)?;
            loss += l * chunk.len() as f64;
            mse += m * chunk.len() as f64;
            count += chunk.len();
        }
        let record = EpochRecord {
            iteration,
            phase: Phase::Mse,
            epoch: self.g_epoch,
            loss: loss / count as f64,
            accuracy: mse / count as f64,
            lr,
            elapsed_s: self.elapsed(),
        };
        self.g_epoch += 1;
        self.record(record.clone(), observer);
        Ok(record)
    }

    /// One full iteration of the configured mode.
    pub fn iteration(
        &mut self,
        samples: &[SaliencySample],
        iteration: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<()> {
        self.check_samples(samples)?;
        if self.config.mode == TrainMode::Baseline1 {
            for _ in 0..self.config.g_epochs {
                self.mse_epoch(samples, iteration, observer)?;
            }
            return Ok(());
        }
        let cached = match self.config.regeneration {
            Regeneration::PerIteration => Some(self.generate_all(samples)?),
            Regeneration::PerBatch => None,
        };
        for _ in 0..self.config.d_epochs {
            self.d_epoch(samples, iteration, cached.as_deref(), observer)?;
        }
        for _ in 0..self.config.g_epochs {
            self.g_epoch(samples, iteration, observer)?;
        }
        Ok(())
    }

    pub fn snapshot(&mut self, samples: &[SaliencySample], iteration: usize) -> Result<Snapshot> {
        let report = evaluate_dataset(&mut self.g, samples, None, &EvalSettings::default())?;
        let snap = Snapshot {
            iteration,
            train_f_beta: report.mean_f_beta,
            elapsed_s: self.elapsed(),
        };
        self.log.snapshots.push(snap.clone());
        Ok(snap)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub g: Network<f32>,
    pub d: Option<Network<f32>>,
    pub log: TrainLog,
}

/// Run every iteration of `config` over `samples`. With `out_dir`, the log
/// is written as CSV and JSON lines and both networks are checkpointed after
/// each iteration.
pub fn run_training(
    config: &TrainConfig,
    samples: &[SaliencySample],
    num_classes: usize,
    out_dir: Option<&Path>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset("empty dataset".into()))?;
    let mut trainer = Trainer::new(config.clone(), num_classes, first.size())?;
    let mut files = out_dir.map(RunFiles::create).transpose()?;
    for it in 1..=config.iterations {
        let seen = trainer.log.epochs.len();
        trainer.iteration(samples, it, observer)?;
        let snap = trainer.snapshot(samples, it)?;
        observer.on_snapshot(&snap);
        if let Some(f) = files.as_mut() {
            for r in &trainer.log.epochs[seen..] {
                f.line(r)?;
            }
            f.line(&snap)?;
            let ck = f.dir.join("checkpoints");
            save_checkpoint(&trainer.g, ck.join(format!("g_iter{it:02}.ckpt")))?;
            if let Some(d) = &trainer.d {
                save_checkpoint(d, ck.join(format!("d_iter{it:02}.ckpt")))?;
            }
            let csv = f.dir.join("train_log.csv");
            fs::write(&csv, trainer.log.to_csv()).map_err(|e| Error::io(&csv, e))?;
        }
    }
    if let Some(f) = &files {
        save_checkpoint(&trainer.g, f.dir.join("g.ckpt"))?;
        if let Some(d) = &trainer.d {
            save_checkpoint(d, f.dir.join("d.ckpt"))?;
        }
    }
    Ok(TrainOutcome {
        g: trainer.g,
        d: trainer.d,
        log: trainer.log,
    })
}
