use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use san_core::checkpoint::load_generator;
use san_core::config::Settings;
use san_core::dataset::{
    gen_synthetic_dataset, load_voc_style, read_pgm, read_ppm, write_pgm, write_voc_style,
};
use san_core::eval::{append_summary, evaluate_dataset, evaluate_maps, predict_maps};
use san_core::gradcheck::run_suite;
use san_core::postproc::postprocess_pipeline;
use san_core::training::{run_training, EpochRecord, Phase, Snapshot, TrainMode, TrainObserver};
use san_core::{Prng, Tensor};

#[derive(Parser)]
#[command(
    name = "san",
    version,
    about = "Adversarial saliency detection: data, training, inference, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset in the VOC-style layout.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a generator (and discriminator) on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Resize every sample to SIZE×SIZE on load.
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Saliency map of one image as a P5 file.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        postproc: bool,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Post-process an existing map against its image.
    Postproc {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Score a generator checkpoint or a directory of predicted maps.
    Eval {
        #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
        ckpt: Option<PathBuf>,
        /// Directory of `<id>.pgm` maps.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        no_postproc: bool,
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Finite-difference check of every layer kind.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct SettingsArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SettingsArgs {
    fn resolve(&self, mode: Option<TrainMode>) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            s.set(k.trim(), v.trim())
                .with_context(|| format!("--set {o}"))?;
        }
        if let Some(m) = mode {
            s.train.mode = m;
        }
        if let Some(seed) = self.seed {
            s.train.seed = seed;
        }
        s.validate()?;
        Ok(s)
    }
}

struct Progress;

impl TrainObserver for Progress {
    fn on_epoch(&mut self, r: &EpochRecord) {
        eprintln!(
            "iteration {} {} epoch {}: loss {:.5} {} {:.4} lr {:.3e} ({:.0}s)",
            r.iteration,
            r.phase,
            r.epoch,
            r.loss,
            if r.phase == Phase::Mse { "mse" } else { "acc" },
            r.accuracy,
            r.lr,
            r.elapsed_s
        );
    }

    fn on_snapshot(&mut self, s: &Snapshot) {
        eprintln!(
            "iteration {}: train F_beta {:.4}",
            s.iteration, s.train_f_beta
        );
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SAN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("SAN_THREADS must be a non-negative integer, got {v:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn resize(size: Option<usize>) -> Option<(usize, usize)> {
    size.map(|s| (s, s))
}

fn gen_data(out: &Path, n: usize, classes: usize, size: usize, seed: u64) -> Result<()> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let samples = gen_synthetic_dataset(n, classes, size, &mut Prng::new(seed))?;
    write_voc_style(out, &samples, classes)?;
    eprintln!("wrote {n} samples to {}", out.display());
    Ok(())
}

fn train(data: &Path, out: &Path, size: Option<usize>, settings: &Settings) -> Result<()> {
    let (samples, meta) = load_voc_style(data, resize(size))?;
    settings.echo_into(out)?;
    eprintln!(
        "training {} on {} samples, {} classes",
        settings.train.mode, meta.len, meta.num_classes
    );
    let outcome = run_training(
        &settings.train,
        &samples,
        meta.num_classes,
        Some(out),
        &mut Progress,
    )?;
    if let Some(last) = outcome.log.snapshots.last() {
        eprintln!("final train F_beta {:.4}", last.train_f_beta);
    }
    Ok(())
}

fn infer(ckpt: &Path, image: &Path, out: &Path, postproc: bool, settings: &Settings) -> Result<()> {
    let mut g = load_generator(ckpt)?;
    let img = read_ppm(image)?;
    let sample = san_core::dataset::SaliencySample {
        id: "input".into(),
        mask: Tensor::zeros((1, 1, img.shape().h, img.shape().w)),
        image: img,
        label: 1,
    };
    let mut map = predict_maps(&mut g, std::slice::from_ref(&sample))?
        .pop()
        .context("generator produced no map")?;
    if postproc {
        map = postprocess_pipeline(&sample.image, &map, &settings.postproc)?;
    }
    write_pgm(&map, out)?;
    Ok(())
}

fn postproc(image: &Path, map: &Path, out: &Path, settings: &Settings) -> Result<()> {
    let image = read_ppm(image)?;
    let map = read_pgm(map)?;
    write_pgm(
        &postprocess_pipeline(&image, &map, &settings.postproc)?,
        out,
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    ckpt: Option<&Path>,
    pred: Option<&Path>,
    data: &Path,
    report: &Path,
    no_postproc: bool,
    size: Option<usize>,
    settings: &Settings,
) -> Result<()> {
    let (samples, _) = load_voc_style(data, resize(size))?;
    let pp = (!no_postproc).then_some(&settings.postproc);
    let result = match (ckpt, pred) {
        (Some(ckpt), _) => {
            let mut g = load_generator(ckpt)?;
            evaluate_dataset(&mut g, &samples, pp, &settings.eval)?
        }
        (None, Some(dir)) => {
            let maps = samples
                .iter()
                .map(|s| {
                    let path = dir.join(format!("{}.pgm", s.id));
                    read_pgm(&path).with_context(|| format!("prediction for {}", s.id))
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_maps(&samples, &maps, pp, &settings.eval)?
        }
        (None, None) => bail!("one of --ckpt or --pred is required"),
    };
    settings.echo_into(report)?;
    result.write(report)?;
    let variant = if no_postproc { "raw" } else { "postproc" };
    append_summary(report, variant, &result)?;
    eprintln!(
        "{variant}: mean F_beta {:.4} (P {:.4}, R {:.4}) over {} images",
        result.mean_f_beta,
        result.mean_precision,
        result.mean_recall,
        result.images.len()
    );
    Ok(())
}

fn gradcheck(seed: u64) -> Result<bool> {
    let checks = run_suite(seed)?;
    let mut ok = true;
    for c in &checks {
        eprintln!(
            "{:<32} {:.3e} {}",
            c.name,
            c.max_rel_error,
            if c.passed { "ok" } else { "FAILED" }
        );
        ok &= c.passed;
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::GenData {
            out,
            n,
            classes,
            size,
            seed,
        } => gen_data(&out, n, classes, size, seed)?,
        Command::Train {
            data,
            out,
            mode,
            size,
            settings,
        } => train(&data, &out, size, &settings.resolve(mode)?)?,
        Command::Infer {
            ckpt,
            image,
            out,
            postproc,
            settings,
        } => infer(&ckpt, &image, &out, postproc, &settings.resolve(None)?)?,
        Command::Postproc {
            image,
            map,
            out,
            settings,
        } => postproc(&image, &map, &out, &settings.resolve(None)?)?,
        Command::Eval {
            ckpt,
            pred,
            data,
            report,
            no_postproc,
            size,
            settings,
        } => eval(
            ckpt.as_deref(),
            pred.as_deref(),
            &data,
            &report,
            no_postproc,
            size,
            &settings.resolve(None)?,
        )?,
        Command::Gradcheck { seed } => return gradcheck(seed),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
