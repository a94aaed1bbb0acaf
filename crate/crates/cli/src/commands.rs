use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use dcfae::checkpoint::TensorFile;
use dcfae::datasets::ImageDataset;
use dcfae::fae::Architecture;
use dcfae::head::kmeans;
use dcfae::metrics::{LabelPair, MetricReport};
use dcfae::real::sigmoid;
use dcfae::rng;
use dcfae::trainer::{
    finish, read_log, standard_noise, write_log, CheckpointWriter, DcfaeModel, EquilibriumSummary, Observer,
    Observers, TrainConfig, TrainEvent, TrainLogRecord, Trainer,
};
use ndarray::{concatenate, s, Array4, Axis};
use serde_json::json;

use crate::config::RunConfig;
use crate::exit::{CliError, Code, WithCode};
use crate::png;

pub struct Ctx {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub json: bool,
}

type Outcome = Result<(), CliError>;

impl Ctx {
    /// The resolved config; a missing file is a usage error.
    fn run_config(&self, required: bool) -> Result<Option<RunConfig>, CliError> {
        match &self.config {
            Some(p) if !p.is_file() => Err(CliError::new(
                Code::Usage,
                anyhow!("config file {} not found", p.display()),
            )),
            None if required => Err(CliError::new(Code::Usage, anyhow!("--config is required"))),
            None if self.overrides.is_empty() => Ok(None),
            p => RunConfig::resolve(p.as_deref(), &self.overrides).code(Code::Usage).map(Some),
        }
    }

    fn report(&self, value: serde_json::Value, human: String) {
        if self.json {
            println!("{value}");
        } else {
            eprintln!("{human}");
        }
    }
}

/// `out` itself when absent or empty, else the first free `out-N`.
pub fn fresh_dir(out: &Path) -> anyhow::Result<PathBuf> {
    let free = |p: &Path| !p.exists() || fs::read_dir(p).map(|mut d| d.next().is_none()).unwrap_or(false);
    let mut candidate = out.to_path_buf();
    let mut n = 0;
    while !free(&candidate) {
        n += 1;
        candidate = PathBuf::from(format!("{}-{n}", out.display()));
    }
    fs::create_dir_all(&candidate).with_context(|| format!("creating {}", candidate.display()))?;
    Ok(candidate)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .code(Code::Failure)
}

fn load_data(rc: &RunConfig) -> Result<ImageDataset, CliError> {
    rc.load_dataset().code(Code::Data)
}

fn write_assignments(path: &Path, assignments: &[usize], labels: Option<&[usize]>) -> Result<(), CliError> {
    let mut s = String::from(if labels.is_some() { "index,cluster,label\n" } else { "index,cluster\n" });
    for (i, a) in assignments.iter().enumerate() {
        match labels {
            Some(l) => s.push_str(&format!("{i},{a},{}\n", l[i])),
            None => s.push_str(&format!("{i},{a}\n")),
        }
    }
    write(path, &s)
}

/// Rewrites the training log after every epoch so partial runs leave one.
struct LogWriter {
    path: PathBuf,
    records: Vec<TrainLogRecord>,
}

impl Observer<f32> for LogWriter {
    fn observe(&mut self, event: &TrainEvent, _: &Trainer<f32>) -> dcfae::Result<()> {
        if let TrainEvent::EpochEnd(r) = event {
            self.records.push(r.clone());
            write_log(&self.path, &self.records)?;
        }
        Ok(())
    }
}

pub fn train(ctx: &Ctx, resume: Option<&Path>) -> Outcome {
    let rc = ctx.run_config(true)?.expect("required");
    let data = load_data(&rc)?;
    let out = fresh_dir(&ctx.out).code(Code::Failure)?;
    write(&out.join("resolved_config.json"), &rc.to_json())?;
    let mut trainer = match resume {
        Some(p) => {
            let f = TensorFile::read(p).code(Code::Checkpoint)?;
            let t = Trainer::<f32>::from_tensor_file(&f).code(Code::Checkpoint)?;
            check_arch(t.model.arch(), &rc.train.architecture(data.images.height(), data.images.channels()))?;
            t
        }
        None => Trainer::<f32>::new(rc.train.clone(), data.images.height(), data.images.channels())?,
    };
    log::info!(
        "training on {} images ({}x{}x{}) into {}",
        data.len(),
        data.images.height(),
        data.images.width(),
        data.images.channels(),
        out.display()
    );
    let mut ckpt = CheckpointWriter { dir: out.clone() };
    let mut logw = LogWriter {
        path: out.join("train_log.csv"),
        records: Vec::new(),
    };
    let result = {
        let mut obs = Observers(vec![&mut ckpt, &mut logw]);
        trainer
            .pretrain(&data.images, &mut obs)
            .and_then(|_| trainer.finetune(&data.images, &mut obs))
    };
    if let Err(e) = result {
        let last = ckpt.latest();
        let note = if last.exists() {
            format!("; last good checkpoint kept at {}", last.display())
        } else {
            String::new()
        };
        let code = crate::exit::classify(&e);
        return Err(CliError::new(code, anyhow!("{e}{note}")));
    }
    trainer.to_tensor_file().write(&out.join("checkpoint.safetensors"))?;
    let outcome = finish(trainer, &data, logw.records)?;
    let labels = data.labels.as_ref().map(|l| l.values());
    write_assignments(&out.join("assignments.csv"), &outcome.clusters.assignments, labels)?;
    let summary = match &outcome.metrics {
        Some(m) => {
            write(&out.join("metrics.json"), &m.to_json())?;
            write(
                &out.join("table_row.csv"),
                &format!("dataset,acc,nmi\n{},{:.2},{:.2}\n", data.name, 100.0 * m.acc, 100.0 * m.nmi),
            )?;
            serde_json::from_str(&m.to_json()).expect("valid json")
        }
        None => json!({"n": data.len()}),
    };
    ctx.report(
        json!({"out": out, "metrics": summary}),
        format!("wrote {}; metrics {summary}", out.display()),
    );
    Ok(())
}

fn check_arch(found: &Architecture, expected: &Architecture) -> Outcome {
    if found != expected {
        return Err(CliError::new(
            Code::Checkpoint,
            anyhow!(
                "checkpoint architecture {} does not match the requested {}",
                serde_json::to_string(found).expect("json"),
                serde_json::to_string(expected).expect("json")
            ),
        ));
    }
    Ok(())
}

/// Model plus the training config stored with it (or the explicit one).
fn load_model(ctx: &Ctx, path: &Path, rc: Option<&RunConfig>) -> Result<(DcfaeModel<f32>, TrainConfig), CliError> {
    let f = TensorFile::read(path).map_err(|e| match e {
        dcfae::Error::Io { .. } => CliError::new(Code::Data, e),
        e => CliError::new(Code::Checkpoint, e),
    })?;
    let model = DcfaeModel::<f32>::from_tensor_file(&f).code(Code::Checkpoint)?;
    let stored: TrainConfig = serde_json::from_str(f.meta("config").code(Code::Checkpoint)?).code(Code::Checkpoint)?;
    let _ = ctx;
    let cfg = match rc {
        Some(rc) => {
            let a = model.arch();
            check_arch(a, &rc.train.architecture(a.canvas, a.channels))?;
            rc.train.clone()
        }
        None => stored,
    };
    Ok((model, cfg))
}

fn check_data(model: &DcfaeModel<f32>, data: &ImageDataset) -> Outcome {
    let a = model.arch();
    let i = &data.images;
    if (a.canvas, a.canvas, a.channels) != (i.height(), i.width(), i.channels()) {
        return Err(CliError::new(
            Code::Checkpoint,
            anyhow!(
                "checkpoint expects {}x{}x{} images, dataset has {}x{}x{}",
                a.canvas,
                a.canvas,
                a.channels,
                i.height(),
                i.width(),
                i.channels()
            ),
        ));
    }
    Ok(())
}

pub fn eval(ctx: &Ctx, checkpoint: &Path, repeats: usize) -> Outcome {
    let rc = ctx.run_config(true)?.expect("required");
    let (model, cfg) = load_model(ctx, checkpoint, Some(&rc))?;
    let data = load_data(&rc)?;
    check_data(&model, &data)?;
    let out = fresh_dir(&ctx.out).code(Code::Failure)?;
    write(&out.join("resolved_config.json"), &rc.to_json())?;
    let feats = model.features(&data.images, cfg.uses_head(), cfg.batch_size)?;
    let labels = data.labels.as_ref().map(|l| l.values().to_vec());
    let mut reports = Vec::new();
    for r in 0..repeats.max(1) {
        let key: Vec<u64> = if r == 0 { vec![rng::KMEANS] } else { vec![rng::KMEANS, r as u64] };
        let res = kmeans(feats.view(), cfg.clusters, &cfg.kmeans, &mut rng::stream(cfg.seed, &key))?;
        if r == 0 {
            write_assignments(&out.join("assignments.csv"), &res.assignments, labels.as_deref())?;
        }
        if let Some(l) = &labels {
            reports.push(MetricReport::compute(&LabelPair::new(l.clone(), res.assignments)?)?);
        }
    }
    if reports.is_empty() {
        ctx.report(json!({"out": out, "n": data.len()}), format!("no labels; wrote assignments to {}", out.display()));
        return Ok(());
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let (acc, nmi, ari) = (mean(|r| r.acc), mean(|r| r.nmi), mean(|r| r.ari));
    let mut csv = String::from("run,acc,nmi,ari\n");
    for (i, r) in reports.iter().enumerate() {
        csv.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", r.acc, r.nmi, r.ari));
    }
    csv.push_str(&format!("mean,{acc:.6},{nmi:.6},{ari:.6}\n"));
    write(&out.join("metrics.csv"), &csv)?;
    let runs: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::from_str(&r.to_json()).expect("json"))
        .collect();
    let mean_json = json!({"acc": round6(acc), "nmi": round6(nmi), "ari": round6(ari)});
    write(
        &out.join("metrics.json"),
        &serde_json::to_string_pretty(&json!({"runs": runs, "mean": mean_json})).expect("json"),
    )?;
    ctx.report(
        json!({"out": out, "mean": mean_json, "repeats": reports.len()}),
        format!("mean over {} runs: acc {acc:.4} nmi {nmi:.4} ari {ari:.4}", reports.len()),
    );
    Ok(())
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub fn embed(ctx: &Ctx, checkpoint: &Path, latent: bool) -> Outcome {
    let rc = ctx.run_config(true)?.expect("required");
    let (model, cfg) = load_model(ctx, checkpoint, Some(&rc))?;
    let data = load_data(&rc)?;
    check_data(&model, &data)?;
    let out = fresh_dir(&ctx.out).code(Code::Failure)?;
    let feats = model.features(&data.images, !latent && cfg.uses_head(), cfg.batch_size)?;
    let mut s = String::new();
    for row in feats.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write(&out.join("embeddings.csv"), &s)?;
    ctx.report(
        json!({"out": out, "rows": feats.nrows(), "cols": feats.ncols()}),
        format!("wrote {}x{} embeddings to {}", feats.nrows(), feats.ncols(), out.display()),
    );
    Ok(())
}

fn decode_images(model: &DcfaeModel<f32>, z: ndarray::ArrayView2<'_, f32>) -> Array4<f32> {
    model.fae.decoder.forward(z).0.mapv(sigmoid)
}

pub fn sample(ctx: &Ctx, checkpoint: &Path, grid: usize, seed: Option<u64>) -> Outcome {
    let rc = ctx.run_config(false)?;
    let (model, cfg) = load_model(ctx, checkpoint, rc.as_ref())?;
    let out = fresh_dir(&ctx.out).code(Code::Failure)?;
    let n = grid * grid;
    let seed = seed.unwrap_or(cfg.seed);
    let z = standard_noise::<f32, _>(n, model.arch().latent_dim, &mut rng::stream(seed, &[rng::SAMPLE]));
    let imgs = decode_images(&model, z.view());
    let path = out.join("samples.png");
    png::save(&png::grid(imgs.view(), grid), &path)?;
    ctx.report(json!({"out": out, "png": path, "images": n}), format!("wrote {}", path.display()));
    Ok(())
}

pub fn reconstruct(ctx: &Ctx, checkpoint: &Path, grid: usize) -> Outcome {
    let rc = ctx.run_config(true)?.expect("required");
    let (model, _) = load_model(ctx, checkpoint, Some(&rc))?;
    let data = load_data(&rc)?;
    check_data(&model, &data)?;
    let out = fresh_dir(&ctx.out).code(Code::Failure)?;
    let n = (grid * grid).min(data.len());
    let idx: Vec<usize> = (0..n).collect();
    let x = data.images.gather(&idx);
    let post = model.fae.encode(x.view())?;
    let recon = decode_images(&model, post.mu.view());
    let mae = (&x - &recon).mapv(f32::abs).mean().unwrap_or(0.0) as f64;
    // originals on the left, reconstructions on the right, row by row
    let mut rows = Vec::new();
    for r in 0..n.div_ceil(grid) {
        let lo = r * grid;
        let hi = (lo + grid).min(n);
        rows.push(x.slice(s![lo..hi, .., .., ..]).to_owned());
        rows.push(recon.slice(s![lo..hi, .., .., ..]).to_owned());
    }
    let views: Vec<_> = rows.iter().map(|a| a.view()).collect();
    let both = concatenate(Axis(0), &views).map_err(|e| CliError::new(Code::Failure, e))?;
    let path = out.join("reconstructions.png");
    png::save(&png::grid(both.view(), grid), &path)?;
    println!("{}", json!({"mean_absolute_error": mae, "images": n, "png": path}));
    Ok(())
}

pub fn monitor(ctx: &Ctx, log_path: &Path, window: usize, tolerance: f64) -> Outcome {
    let records = read_log(log_path).code(Code::Data)?;
    let summary = EquilibriumSummary::from_records(&records, window, tolerance).code(Code::Data)?;
    let out = fresh_dir(&ctx.out).code(Code::Failure)?;
    let disc: Vec<f64> = records.iter().filter_map(|r| r.discriminator_score).collect();
    let gen: Vec<f64> = records.iter().filter_map(|r| r.generator_score).collect();
    png::score_plot(&disc, &gen, &out.join("scores.png"))?;
    let w = summary.window;
    let body = json!({
        format!("last_{w}_epoch_mean_disc"): summary.mean_disc,
        format!("last_{w}_epoch_mean_gen"): summary.mean_gen,
        "max_abs_deviation_from_0.5": summary.max_abs_deviation,
        "epochs_in_window": summary.epochs,
        "tolerance": summary.tolerance,
        "converged": summary.converged,
    });
    write(
        &out.join("monitor_summary.json"),
        &serde_json::to_string_pretty(&body).expect("json"),
    )?;
    ctx.report(
        body.clone(),
        format!(
            "disc {:.4} gen {:.4} deviation {:.4} converged {}",
            summary.mean_disc, summary.mean_gen, summary.max_abs_deviation, summary.converged
        ),
    );
    Ok(())
}
