use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use san_core::checkpoint::read_checkpoint;
use san_core::dataset::{load_voc_style, read_pgm};

const TINY: &str = "\
# small enough for a test run
preset = desk
iterations = 1
d_epochs = 1
g_epochs = 1
batch = 4
map_dims = 3
g_widths = 4,4
d_widths = 4,4,4,4
d_stride2 = 1,3
d_comparison = 2,4
slic_k = 16
";

fn san(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_san"))
        .args(args)
        .output()
        .expect("failed to launch san")
}

fn ok(args: &[&str]) -> Output {
    let out = san(args);
    assert!(
        out.status.success(),
        "san {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, n: usize, size: usize, seed: u64) -> PathBuf {
    let data = dir.join(format!("data{n}_{size}_{seed}"));
    ok(&[
        "gen-data",
        "--out",
        p(&data),
        "--n",
        &n.to_string(),
        "--classes",
        "3",
        "--size",
        &size.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    data
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.txt");
    fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn gen_data_is_byte_identical_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "gen-data",
            "--out",
            p(out),
            "--n",
            "48",
            "--seed",
            "7",
            "--size",
            "32",
        ]);
    }
    assert_eq!(tree(&a), tree(&b));
    let (samples, meta) = load_voc_style(&a, None).unwrap();
    assert_eq!(samples.len(), 48);
    assert_eq!(meta.num_classes, 3);
}

#[test]
fn gen_data_rejects_six_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = san(&[
        "gen-data",
        "--out",
        p(&dir.path().join("x")),
        "--classes",
        "6",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = san(&["train", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = san(&["eval", "--data", "d", "--report", "r"]);
    assert_eq!(out.status.code(), Some(2));
    let out = san(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_key_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 4, 16, 1);
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let run = dir.path().join("run");
    let out = san(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    assert!(!run.exists());
}

#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 8, 16, 3);
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
        "--mode",
        "san",
    ]);
    for f in [
        "config.txt",
        "train_log.csv",
        "train_log.jsonl",
        "g.ckpt",
        "d.ckpt",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(run.join("checkpoints").read_dir().unwrap().count() >= 2);
    let echoed = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echoed.contains("mode = san"));
    assert!(echoed.contains("g_widths = 4,4"));

    // infer writes a P5 map of the image size that eval accepts as a prediction.
    let pred = dir.path().join("pred");
    fs::create_dir(&pred).unwrap();
    let (samples, _) = load_voc_style(&data, None).unwrap();
    for s in &samples {
        let image = data.join("images").join(format!("{}.ppm", s.id));
        let out = pred.join(format!("{}.pgm", s.id));
        ok(&[
            "infer",
            "--ckpt",
            p(&run.join("g.ckpt")),
            "--image",
            p(&image),
            "--out",
            p(&out),
        ]);
        let map = read_pgm(&out).unwrap();
        assert_eq!((map.shape().h, map.shape().w), (16, 16));
    }
    let report = dir.path().join("report");
    ok(&[
        "eval",
        "--pred",
        p(&pred),
        "--data",
        p(&data),
        "--report",
        p(&report),
        "--no-postproc",
    ]);
    ok(&[
        "eval",
        "--ckpt",
        p(&run.join("g.ckpt")),
        "--data",
        p(&data),
        "--report",
        p(&report),
        "--config",
        p(&cfg),
    ]);
    let summary = fs::read_to_string(report.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("raw,"));
    assert!(rows[2].starts_with("postproc,"));
    for f in ["report.csv", "report.json", "config.txt"] {
        assert!(report.join(f).is_file(), "missing {f}");
    }

    // postproc subcommand on a stored map.
    let id = &samples[0].id;
    let pp = dir.path().join("pp.pgm");
    ok(&[
        "postproc",
        "--image",
        p(&data.join("images").join(format!("{id}.ppm"))),
        "--map",
        p(&pred.join(format!("{id}.pgm"))),
        "--out",
        p(&pp),
        "--config",
        p(&cfg),
    ]);
    assert!(read_pgm(&pp)
        .unwrap()
        .data()
        .iter()
        .all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn baseline2_discriminator_has_two_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 8, 16, 4);
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("b2");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
        "--mode",
        "baseline2",
    ]);
    let d = read_checkpoint(run.join("d.ckpt")).unwrap();
    assert_eq!(d.tensors.last().unwrap().dims, vec![2]);

    let run = dir.path().join("full");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
    ]);
    let d = read_checkpoint(run.join("d.ckpt")).unwrap();
    assert_eq!(d.tensors.last().unwrap().dims, vec![4]);
}

#[test]
fn baseline3_and_baseline1_runs_complete() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 8, 16, 5);
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("b3");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
        "--mode",
        "baseline3",
    ]);
    assert!(fs::read_to_string(run.join("config.txt"))
        .unwrap()
        .contains("mode = baseline3"));

    let run = dir.path().join("b1");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
        "--mode",
        "baseline1",
    ]);
    assert!(!run.join("d.ckpt").exists());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.contains(",mse,")));
}

#[test]
fn training_is_reproducible_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 8, 16, 6);
    let cfg = tiny_config(dir.path());
    let mut reports = Vec::new();
    for name in ["r1", "r2"] {
        let run = dir.path().join(name);
        ok(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&run),
            "--config",
            p(&cfg),
        ]);
        let report = dir.path().join(format!("{name}_eval"));
        ok(&[
            "eval",
            "--ckpt",
            p(&run.join("g.ckpt")),
            "--data",
            p(&data),
            "--report",
            p(&report),
            "--config",
            p(&cfg),
        ]);
        reports.push((
            fs::read(run.join("g.ckpt")).unwrap(),
            fs::read(report.join("report.json")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--seed", "11"]);
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("comparison"));
    assert!(!text.contains("FAILED"));
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_san"))
        .args(["gradcheck"])
        .env("SAN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
