use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcfae::datasets::{write_idx_images, write_idx_labels, ImageSet};
use ndarray::Array4;
use serde_json::Value;
use tempfile::TempDir;

/// Two-class blob images on an 8x8 canvas plus a small config.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let n = 16;
        let imgs = Array4::from_shape_fn((n, 8, 8, 1), |(i, y, x, _)| {
            let (cy, cx) = if i % 2 == 0 { (2.0, 2.0) } else { (5.0, 5.0) };
            let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
            (-d2 / 2.0).exp()
        });
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        write_idx_images(dir.path().join("img.idx"), &ImageSet::new(imgs).unwrap()).unwrap();
        write_idx_labels(dir.path().join("lab.idx"), &labels).unwrap();
        fs::write(
            dir.path().join("blobs.json"),
            r#"{"name": "blobs", "format": "idx", "images": "img.idx", "labels": "lab.idx",
                "num_classes": 2, "canvas_side": 8}"#,
        )
        .unwrap();
        fs::write(
            dir.path().join("run.json"),
            r#"{"dataset": "blobs.json", "latent_dim": 3, "batch_size": 4, "pretrain_epochs": 2,
                "finetune_epochs": 2, "clusters": 2, "seed": 3, "filters": [2, 2],
                "discriminator_filters": [2, 2], "head_hidden": [6, 6, 8], "learning_rate": 0.001,
                "lambda": 1.0, "rho": 5.0, "checkpoint_every": 1}"#,
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_dcfae"))
            .current_dir(self.dir.path())
            .env_remove("DCFAE_DATA_DIR")
            .env("RUST_LOG", "warn")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn train(&self, out: &str) -> PathBuf {
        self.ok(&["--config", "run.json", "--out", out, "train"]);
        self.path(out)
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn train_writes_every_artifact_and_is_reproducible() {
    let f = Fixture::new();
    let a = f.train("a");
    for name in [
        "resolved_config.json",
        "train_log.csv",
        "checkpoint.safetensors",
        "checkpoint_pretrain.safetensors",
        "checkpoint_finetune.safetensors",
        "checkpoint_last.safetensors",
        "assignments.csv",
        "metrics.json",
        "table_row.csv",
    ] {
        assert!(a.join(name).is_file(), "missing {name}");
    }
    let m = json(&a.join("metrics.json"));
    for key in ["acc", "nmi", "ari"] {
        assert!(m[key].is_f64(), "{key}");
    }
    assert_eq!(json(&a.join("resolved_config.json"))["seed"], 3);
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(fs::read_to_string(a.join("table_row.csv")).unwrap().starts_with("dataset,acc,nmi\nblobs,"));

    let b = f.train("b");
    for name in ["assignments.csv", "metrics.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn occupied_output_directories_get_a_suffix() {
    let f = Fixture::new();
    f.train("run");
    let second = f.ok(&["--config", "run.json", "--out", "run", "--json", "train"]);
    assert!(f.path("run-1/metrics.json").is_file());
    assert!(stdout_json(&second)["out"].as_str().unwrap().ends_with("run-1"));
}

#[test]
fn seed_flag_and_overrides_reach_the_config() {
    let f = Fixture::new();
    f.ok(&[
        "--config", "run.json", "--seed", "9", "--set", "rho=2.5", "--set", "kmeans.restarts=3", "--out", "o", "train",
    ]);
    let c = json(&f.path("o/resolved_config.json"));
    assert_eq!(c["seed"], 9);
    assert_eq!(c["rho"], 2.5);
    assert_eq!(c["kmeans"]["restarts"], 3);
}

#[test]
fn eval_reproduces_training_metrics_and_averages_repeats() {
    let f = Fixture::new();
    let run = f.train("t");
    let ckpt = run.join("checkpoint.safetensors");
    let ckpt = ckpt.to_str().unwrap();
    f.ok(&["--config", "run.json", "--out", "e1", "eval", "--checkpoint", ckpt]);
    let trained = json(&run.join("metrics.json"));
    let evaluated = json(&f.path("e1/metrics.json"));
    assert_eq!(evaluated["runs"][0], trained);

    let out = f.ok(&["--config", "run.json", "--out", "e3", "--json", "eval", "--checkpoint", ckpt, "--repeats", "3"]);
    let csv = fs::read_to_string(f.path("e3/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("mean,"));
    assert_eq!(stdout_json(&out)["repeats"], 3);
}

#[test]
fn embed_sample_and_reconstruct() {
    let f = Fixture::new();
    let run = f.train("t");
    let ckpt = run.join("checkpoint.safetensors");
    let ckpt = ckpt.to_str().unwrap();

    f.ok(&["--config", "run.json", "--out", "emb", "embed", "--checkpoint", ckpt]);
    let rows: Vec<String> = fs::read_to_string(f.path("emb/embeddings.csv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[0].split(',').count(), 2);
    f.ok(&["--config", "run.json", "--out", "lat", "embed", "--latent", "--checkpoint", ckpt]);
    let first = fs::read_to_string(f.path("lat/embeddings.csv")).unwrap();
    assert_eq!(first.lines().next().unwrap().split(',').count(), 3);

    f.ok(&["--out", "s1", "sample", "--checkpoint", ckpt, "--grid", "3"]);
    f.ok(&["--out", "s2", "sample", "--checkpoint", ckpt, "--grid", "3"]);
    let a = fs::read(f.path("s1/samples.png")).unwrap();
    assert_eq!(a, fs::read(f.path("s2/samples.png")).unwrap());
    f.ok(&["--out", "s3", "--seed", "1", "sample", "--checkpoint", ckpt, "--grid", "3"]);
    assert_ne!(a, fs::read(f.path("s3/samples.png")).unwrap());

    let out = f.ok(&["--config", "run.json", "--out", "r", "reconstruct", "--checkpoint", ckpt, "--grid", "2"]);
    let v = stdout_json(&out);
    let mae = v["mean_absolute_error"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mae));
    assert!(f.path("r/reconstructions.png").is_file());
}

#[test]
fn monitor_summarises_the_log() {
    let f = Fixture::new();
    let run = f.train("t");
    let log = run.join("train_log.csv");
    let out = f.ok(&["--out", "m", "--json", "monitor", "--log", log.to_str().unwrap(), "--window", "2"]);
    let v = stdout_json(&out);
    for key in [
        "last_2_epoch_mean_disc",
        "last_2_epoch_mean_gen",
        "max_abs_deviation_from_0.5",
        "converged",
    ] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert_eq!(json(&f.path("m/monitor_summary.json")), v);
    assert!(f.path("m/scores.png").is_file());
}

#[test]
fn resume_from_the_pretraining_checkpoint() {
    let f = Fixture::new();
    let run = f.train("t");
    let ckpt = run.join("checkpoint_pretrain.safetensors");
    f.ok(&["--config", "run.json", "--out", "r", "train", "--resume", ckpt.to_str().unwrap()]);
    assert_eq!(
        fs::read(run.join("assignments.csv")).unwrap(),
        fs::read(f.path("r/assignments.csv")).unwrap()
    );
}

#[test]
fn failures_map_to_exit_codes() {
    let f = Fixture::new();
    let code = |args: &[&str]| f.run(args).status.code().unwrap();
    assert_eq!(code(&["--config", "absent.json", "train"]), 2);
    assert_eq!(code(&["train"]), 2);
    assert_eq!(code(&["--config", "run.json", "--set", "lamda=3", "train"]), 2);
    assert_eq!(code(&["--config", "run.json", "bogus"]), 2);
    assert_eq!(code(&["--config", "run.json", "--set", "dataset=nowhere.json", "train"]), 3);
    assert_eq!(code(&["monitor", "--log", "nowhere.csv"]), 3);
    assert_eq!(
        code(&["--config", "run.json", "--set", "learning_rate=1e30", "--out", "nan", "train"]),
        4
    );

    let run = f.train("t");
    let ckpt = run.join("checkpoint.safetensors");
    let out = f.run(&[
        "--config", "run.json", "--set", "latent_dim=4", "eval", "--checkpoint", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"latent_dim\":3") && err.contains("\"latent_dim\":4"), "{err}");
}
