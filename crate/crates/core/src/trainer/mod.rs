//! Two-phase optimization: pre-train the autoencoder and discriminator with
//! the head frozen, then fine-tune everything with the clustering loss, and
//! finish with k-means on the embeddings.

mod adam;
mod config;
mod records;
mod model;
mod objective;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array4, ArrayD};
use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorFile;
use crate::datasets::{augment, batches, BatchPlan, ImageDataset, ImageSet};
use crate::head::{kmeans, ClusterResult};
use crate::metrics::{discriminator_score, generator_score, LabelPair, MetricReport};
use crate::nn::Module;
use crate::real::Real;
use crate::{rng, Error, Result};

pub use adam::{Adam, AdamState, BETA1, BETA2, EPSILON};
pub use config::TrainConfig;
pub use records::{read_log, write_log, EquilibriumSummary, Phase, TrainLogRecord};
pub use model::{hash_params, DcfaeModel, ParamGroup};
pub use objective::{
    discriminator_objective, joint_objective, standard_noise, DiscriminatorStep, JointStep, StepLosses,
};

/// Which optimizer step is about to run or has just run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Update {
    /// Encoder and decoder, plus the head during fine-tuning.
    Joint,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    PhaseStart(Phase),
    BeforeUpdate {
        phase: Phase,
        epoch: usize,
        batch: usize,
        update: Update,
    },
    AfterUpdate {
        phase: Phase,
        epoch: usize,
        batch: usize,
        update: Update,
    },
    EpochEnd(TrainLogRecord),
    PhaseEnd(Phase),
}

/// Receives training events with read access to the trainer.
pub trait Observer<F: Real> {
    fn observe(&mut self, event: &TrainEvent, trainer: &Trainer<F>) -> Result<()>;
}

impl<F: Real> Observer<F> for () {
    fn observe(&mut self, _: &TrainEvent, _: &Trainer<F>) -> Result<()> {
        Ok(())
    }
}

/// Records every event; handy for ordering checks.
#[derive(Default)]
pub struct EventLog(pub Vec<TrainEvent>);

impl<F: Real> Observer<F> for EventLog {
    fn observe(&mut self, event: &TrainEvent, _: &Trainer<F>) -> Result<()> {
        self.0.push(event.clone());
        Ok(())
    }
}

/// Saves `checkpoint_last.safetensors` every `checkpoint_every` epochs and
/// `checkpoint_<phase>.safetensors` at each phase boundary.
pub struct CheckpointWriter {
    pub dir: PathBuf,
}

impl CheckpointWriter {
    pub fn latest(&self) -> PathBuf {
        self.dir.join("checkpoint_last.safetensors")
    }
}

impl<F: Real> Observer<F> for CheckpointWriter {
    fn observe(&mut self, event: &TrainEvent, trainer: &Trainer<F>) -> Result<()> {
        match event {
            TrainEvent::EpochEnd(r) if r.epoch % trainer.cfg.checkpoint_every == 0 => {
                trainer.to_tensor_file().write(&self.latest())
            }
            TrainEvent::PhaseEnd(p) => {
                let f = trainer.to_tensor_file();
                f.write(&self.dir.join(format!("checkpoint_{}.safetensors", p.as_str())))?;
                f.write(&self.latest())
            }
            _ => Ok(()),
        }
    }
}

/// Fans one event out to several observers.
pub struct Observers<'a, F>(pub Vec<&'a mut dyn Observer<F>>);

impl<F: Real> Observer<F> for Observers<'_, F> {
    fn observe(&mut self, event: &TrainEvent, trainer: &Trainer<F>) -> Result<()> {
        for o in self.0.iter_mut() {
            o.observe(event, trainer)?;
        }
        Ok(())
    }
}

/// Completed epochs per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub pretrain: usize,
    pub finetune: usize,
}

pub struct Trainer<F> {
    pub cfg: TrainConfig,
    pub model: DcfaeModel<F>,
    joint_opt: Adam<F>,
    disc_opt: Adam<F>,
    pub progress: Progress,
}

impl<F: Real> Trainer<F> {
    pub fn new(cfg: TrainConfig, canvas: usize, channels: usize) -> Result<Self> {
        cfg.validate()?;
        let model = DcfaeModel::new(cfg.architecture(canvas, channels), cfg.head(cfg.latent_dim), cfg.seed)?;
        Ok(Self {
            joint_opt: Adam::new(cfg.learning_rate),
            disc_opt: Adam::new(cfg.learning_rate),
            cfg,
            model,
            progress: Progress::default(),
        })
    }

    pub fn joint_optimizer(&self) -> &Adam<F> {
        &self.joint_opt
    }

    pub fn discriminator_optimizer(&self) -> &Adam<F> {
        &self.disc_opt
    }

    fn plan(&self) -> Result<BatchPlan> {
        BatchPlan::new(self.cfg.batch_size, true, self.cfg.seed, false)
    }

    fn global_epoch(&self, phase: Phase, epoch_in_phase: usize) -> usize {
        match phase {
            Phase::Pretrain => epoch_in_phase,
            Phase::Finetune => self.cfg.pretrain_epochs + epoch_in_phase,
        }
    }

    /// One batch: the joint update, then the discriminator update.
    /// `epoch` is the 0-based epoch counted across phases.
    pub fn train_step(
        &mut self,
        phase: Phase,
        epoch: usize,
        batch: usize,
        x: &Array4<F>,
        obs: &mut dyn Observer<F>,
    ) -> Result<StepLosses> {
        let (e, b) = (epoch as u64, batch as u64);
        let seed = self.cfg.seed;
        let m = x.dim().0;
        let eps = standard_noise::<F, _>(m, self.cfg.latent_dim, &mut rng::stream(seed, &[rng::NOISE, e, b]));
        let dropout_seed = rng::stream_seed(seed, &[rng::DROPOUT, e, b]);
        let step = joint_objective(&self.model, &self.cfg, phase, x.view(), eps.view(), dropout_seed)
            .map_err(|err| annotate(err, phase, epoch, batch))?;
        let mut losses = step.losses;

        let ev = |update| TrainEvent::BeforeUpdate {
            phase,
            epoch: epoch + 1,
            batch,
            update,
        };
        obs.observe(&ev(Update::Joint), self)?;
        let with_head = phase == Phase::Finetune && self.cfg.uses_head();
        let grads = step.grads.params();
        let params: Vec<_> = self
            .model
            .params_mut()
            .into_iter()
            .filter(|(n, _)| {
                n.starts_with(ParamGroup::Encoder.prefix())
                    || n.starts_with(ParamGroup::Decoder.prefix())
                    || (with_head && n.starts_with(ParamGroup::Head.prefix()))
            })
            .collect();
        self.joint_opt.step(params, &grads)?;
        obs.observe(
            &TrainEvent::AfterUpdate {
                phase,
                epoch: epoch + 1,
                batch,
                update: Update::Joint,
            },
            self,
        )?;

        if !self.cfg.no_discriminator {
            let d = discriminator_objective(&self.model.fae.discriminator, step.fake.view(), x.view())
                .map_err(|err| annotate(err, phase, epoch, batch))?;
            losses.disc_loss = Some(d.loss.as_f64());
            obs.observe(&ev(Update::Discriminator), self)?;
            let g: Vec<_> = d
                .grads
                .params()
                .into_iter()
                .map(|(n, t)| (format!("{}{n}", ParamGroup::Discriminator.prefix()), t))
                .collect();
            let params: Vec<_> = self
                .model
                .params_mut()
                .into_iter()
                .filter(|(n, _)| n.starts_with(ParamGroup::Discriminator.prefix()))
                .collect();
            self.disc_opt.step(params, &g)?;
            obs.observe(
                &TrainEvent::AfterUpdate {
                    phase,
                    epoch: epoch + 1,
                    batch,
                    update: Update::Discriminator,
                },
                self,
            )?;
        }
        Ok(losses)
    }

    fn batch_images(&self, images: &ImageSet, idx: &[usize], epoch: usize, batch: usize, aug: bool) -> Array4<F> {
        let raw = images.gather(idx);
        let raw = if aug && self.cfg.augment.enabled {
            let mut r = rng::stream(self.cfg.seed, &[rng::AUGMENT, epoch as u64, batch as u64]);
            augment(&raw, &self.cfg.augment, &mut r)
        } else {
            raw
        };
        raw.mapv(|v| F::of(v as f64))
    }

    /// Equilibrium scores on one unaugmented batch with the current weights.
    pub fn scores(&self, images: &ImageSet, idx: &[usize], epoch: usize) -> Result<(f64, f64)> {
        let x = self.batch_images(images, idx, epoch, 0, false);
        let post = self.model.fae.encode(x.view())?;
        let mut r = rng::stream(self.cfg.seed, &[rng::SCORE, epoch as u64]);
        let eps = standard_noise::<F, _>(idx.len(), self.cfg.latent_dim, &mut r);
        let z = crate::fae::reparameterize(&post, eps.view())?;
        let (logits, _) = self.model.fae.decoder.forward(z.z.view());
        let fake = logits.mapv(crate::real::sigmoid);
        let d = discriminator_objective(&self.model.fae.discriminator, fake.view(), x.view())?;
        let real: Vec<f64> = d.real_logits.iter().map(|v| v.as_f64()).collect();
        let fake: Vec<f64> = d.fake_logits.iter().map(|v| v.as_f64()).collect();
        Ok((discriminator_score(&real, &fake)?, generator_score(&fake)?))
    }

    /// One epoch of `phase`; `epoch_in_phase` is 0-based.
    pub fn run_epoch(
        &mut self,
        phase: Phase,
        epoch_in_phase: usize,
        images: &ImageSet,
        obs: &mut dyn Observer<F>,
    ) -> Result<TrainLogRecord> {
        let start = Instant::now();
        let epoch = self.global_epoch(phase, epoch_in_phase);
        let plan = self.plan()?;
        let mut list = batches(images.len(), &plan, epoch as u64)?;
        // a single leftover image cannot form pairwise similarities
        list.retain(|b| b.len() >= 2);
        let mut sums = StepLosses::default();
        let (mut gen, mut disc, mut clus, mut joint) = (0.0, 0.0, 0.0, 0.0);
        for (b, idx) in list.iter().enumerate() {
            let x = self.batch_images(images, idx, epoch, b, true);
            let l = self.train_step(phase, epoch, b, &x, obs)?;
            sums.neg_elbo += l.neg_elbo;
            sums.alpha_loss += l.alpha_loss;
            gen += l.gen_loss.unwrap_or(0.0);
            disc += l.disc_loss.unwrap_or(0.0);
            clus += l.cluster_loss.unwrap_or(0.0);
            joint += l.joint_loss.unwrap_or(0.0);
        }
        let n = list.len() as f64;
        let adversarial = !self.cfg.no_discriminator;
        let clustered = phase == Phase::Finetune && self.cfg.uses_head();
        let scores = if adversarial {
            Some(self.scores(images, list.last().expect("at least one batch"), epoch)?)
        } else {
            None
        };
        let record = TrainLogRecord {
            epoch: epoch + 1,
            phase,
            neg_elbo: sums.neg_elbo / n,
            gen_loss: adversarial.then_some(gen / n),
            disc_loss: adversarial.then_some(disc / n),
            cluster_loss: clustered.then_some(clus / n),
            alpha_loss: sums.alpha_loss / n,
            joint_loss: clustered.then_some(joint / n),
            discriminator_score: scores.map(|s| s.0),
            generator_score: scores.map(|s| s.1),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        match phase {
            Phase::Pretrain => self.progress.pretrain += 1,
            Phase::Finetune => self.progress.finetune += 1,
        }
        log::info!(
            "epoch {} ({}) -elbo {:.3} alpha {:.3} scores {:?} in {:.1}s",
            record.epoch,
            phase.as_str(),
            record.neg_elbo,
            record.alpha_loss,
            scores,
            record.wall_time_s
        );
        obs.observe(&TrainEvent::EpochEnd(record.clone()), self)?;
        Ok(record)
    }

    /// Runs the remaining epochs of one phase.
    pub fn run_phase(&mut self, phase: Phase, images: &ImageSet, obs: &mut dyn Observer<F>) -> Result<Vec<TrainLogRecord>> {
        let (done, total) = match phase {
            Phase::Pretrain => (self.progress.pretrain, self.cfg.pretrain_epochs),
            Phase::Finetune => (self.progress.finetune, self.cfg.finetune_epochs),
        };
        if phase == Phase::Finetune && self.progress.pretrain < self.cfg.pretrain_epochs {
            return Err(Error::Consistency("fine-tuning requested before pre-training finished".into()));
        }
        if done >= total {
            return Ok(Vec::new());
        }
        obs.observe(&TrainEvent::PhaseStart(phase), self)?;
        let mut out = Vec::new();
        for e in done..total {
            out.push(self.run_epoch(phase, e, images, obs)?);
        }
        obs.observe(&TrainEvent::PhaseEnd(phase), self)?;
        Ok(out)
    }

    pub fn pretrain(&mut self, images: &ImageSet, obs: &mut dyn Observer<F>) -> Result<Vec<TrainLogRecord>> {
        self.run_phase(Phase::Pretrain, images, obs)
    }

    pub fn finetune(&mut self, images: &ImageSet, obs: &mut dyn Observer<F>) -> Result<Vec<TrainLogRecord>> {
        self.run_phase(Phase::Finetune, images, obs)
    }

    /// k-means on the clustering features of `images`.
    pub fn cluster(&self, images: &ImageSet, use_head: bool) -> Result<(ndarray::Array2<f64>, ClusterResult)> {
        let feats = self.model.features(images, use_head, self.cfg.batch_size)?;
        let mut r = rng::stream(self.cfg.seed, &[rng::KMEANS]);
        let res = kmeans(feats.view(), self.cfg.clusters, &self.cfg.kmeans, &mut r)?;
        Ok((feats, res))
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = self.model.to_tensor_file();
        f.metadata
            .insert("config".into(), serde_json::to_string(&self.cfg).expect("serializable"));
        f.metadata
            .insert("progress".into(), serde_json::to_string(&self.progress).expect("serializable"));
        let mut steps: BTreeMap<String, u64> = BTreeMap::new();
        for (group, opt) in [("joint", &self.joint_opt), ("disc", &self.disc_opt)] {
            for (name, st) in opt.states() {
                f.insert(format!("optim.{group}.m.{name}"), st.m.mapv(|v| v.as_f64() as f32));
                f.insert(format!("optim.{group}.v.{name}"), st.v.mapv(|v| v.as_f64() as f32));
                steps.insert(format!("{group}.{name}"), st.t);
            }
        }
        f.metadata
            .insert("optim_steps".into(), serde_json::to_string(&steps).expect("serializable"));
        f
    }

    /// Restores model, optimizer state, progress and config for resuming.
    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(file.meta("config")?)?;
        let progress: Progress = serde_json::from_str(file.meta("progress")?)?;
        let steps: BTreeMap<String, u64> = serde_json::from_str(file.meta("optim_steps")?)?;
        let model = DcfaeModel::from_tensor_file(file)?;
        let mut joint_opt = Adam::new(cfg.learning_rate);
        let mut disc_opt = Adam::new(cfg.learning_rate);
        let conv = |t: &ArrayD<f32>| t.mapv(|v| F::of(v as f64));
        for (key, &t) in &steps {
            let (group, name) = key
                .split_once('.')
                .ok_or_else(|| Error::CheckpointMismatch(format!("bad optimizer key {key}")))?;
            let st = AdamState {
                m: conv(file.get(&format!("optim.{group}.m.{name}"))?),
                v: conv(file.get(&format!("optim.{group}.v.{name}"))?),
                t,
            };
            match group {
                "joint" => joint_opt.insert_state(name.to_string(), st),
                "disc" => disc_opt.insert_state(name.to_string(), st),
                _ => return Err(Error::CheckpointMismatch(format!("unknown optimizer group {group}"))),
            }
        }
        Ok(Self {
            cfg,
            model,
            joint_opt,
            disc_opt,
            progress,
        })
    }
}

fn annotate(err: Error, phase: Phase, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric { term, detail } => Error::Numeric {
            term,
            detail: format!("{detail} ({} epoch {}, batch {batch})", phase.as_str(), epoch + 1),
        },
        e => e,
    }
}

pub struct TrainOutcome<F> {
    pub trainer: Trainer<F>,
    pub log: Vec<TrainLogRecord>,
    pub features: ndarray::Array2<f64>,
    pub clusters: ClusterResult,
    pub metrics: Option<MetricReport>,
}

/// Pre-train, fine-tune, then cluster the whole dataset.
pub fn train<F: Real>(data: &ImageDataset, cfg: TrainConfig, obs: &mut dyn Observer<F>) -> Result<TrainOutcome<F>> {
    let imgs = &data.images;
    let mut trainer = Trainer::new(cfg, imgs.height(), imgs.channels())?;
    let mut log = trainer.pretrain(imgs, obs)?;
    log.extend(trainer.finetune(imgs, obs)?);
    finish(trainer, data, log)
}

/// Clusters with a trained (or resumed) trainer and scores against labels.
pub fn finish<F: Real>(trainer: Trainer<F>, data: &ImageDataset, log: Vec<TrainLogRecord>) -> Result<TrainOutcome<F>> {
    let use_head = trainer.cfg.uses_head();
    let (features, clusters) = trainer.cluster(&data.images, use_head)?;
    let metrics = match &data.labels {
        Some(l) => Some(MetricReport::compute(&LabelPair::new(
            l.values().to_vec(),
            clusters.assignments.clone(),
        )?)?),
        None => None,
    };
    Ok(TrainOutcome {
        trainer,
        log,
        features,
        clusters,
        metrics,
    })
}
