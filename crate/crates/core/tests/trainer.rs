mod common;

use common::{blobs, tiny_config};
use dcfae::checkpoint::TensorFile;
use dcfae::trainer::{
    train, EventLog, Observer, ParamGroup, Phase, TrainConfig, TrainEvent, Trainer, Update,
};
use dcfae::Result;

/// Hashes every parameter group around each optimizer step.
#[derive(Default)]
struct Snapshots {
    before: Vec<String>,
    changes: Vec<(Phase, Update, Vec<ParamGroup>)>,
}

impl Observer<f32> for Snapshots {
    fn observe(&mut self, event: &TrainEvent, t: &Trainer<f32>) -> Result<()> {
        let hashes = || ParamGroup::ALL.iter().map(|&g| t.model.group_hash(g)).collect::<Vec<_>>();
        match event {
            TrainEvent::BeforeUpdate { .. } => self.before = hashes(),
            TrainEvent::AfterUpdate { phase, update, .. } => {
                let now = hashes();
                let changed = ParamGroup::ALL
                    .iter()
                    .zip(self.before.iter().zip(&now))
                    .filter(|(_, (a, b))| a != b)
                    .map(|(g, _)| *g)
                    .collect();
                self.changes.push((*phase, *update, changed));
            }
            _ => {}
        }
        Ok(())
    }
}

#[test]
fn zero_pretrain_epochs_change_nothing() {
    let data = blobs(8, 8);
    let cfg = TrainConfig {
        pretrain_epochs: 0,
        ..tiny_config()
    };
    let mut t = Trainer::<f32>::new(cfg, 8, 1).unwrap();
    let before: Vec<_> = ParamGroup::ALL.iter().map(|&g| t.model.group_hash(g)).collect();
    let log = t.pretrain(&data.images, &mut ()).unwrap();
    assert!(log.is_empty());
    let after: Vec<_> = ParamGroup::ALL.iter().map(|&g| t.model.group_hash(g)).collect();
    assert_eq!(before, after);
}

#[test]
fn updates_touch_only_their_groups() {
    let data = blobs(8, 8);
    let mut t = Trainer::<f32>::new(tiny_config(), 8, 1).unwrap();
    let head = t.model.group_hash(ParamGroup::Head);
    let mut snaps = Snapshots::default();
    t.pretrain(&data.images, &mut snaps).unwrap();
    assert_eq!(t.model.group_hash(ParamGroup::Head), head, "head moved during pre-training");
    t.finetune(&data.images, &mut snaps).unwrap();
    use ParamGroup::*;
    for (phase, update, changed) in &snaps.changes {
        let want = match (phase, update) {
            (Phase::Pretrain, Update::Joint) => vec![Encoder, Decoder],
            (Phase::Finetune, Update::Joint) => vec![Encoder, Decoder, Head],
            (_, Update::Discriminator) => vec![Discriminator],
        };
        assert_eq!(changed, &want, "{phase:?} {update:?}");
    }
    // 2 batches x 2 updates x 4 epochs
    assert_eq!(snaps.changes.len(), 16);
}

#[test]
fn joint_update_precedes_discriminator_update_in_every_batch() {
    let data = blobs(8, 8);
    let mut t = Trainer::<f32>::new(tiny_config(), 8, 1).unwrap();
    let mut ev = EventLog::default();
    t.pretrain(&data.images, &mut ev).unwrap();
    t.finetune(&data.images, &mut ev).unwrap();
    let updates: Vec<_> = ev
        .0
        .iter()
        .filter_map(|e| match e {
            TrainEvent::BeforeUpdate { epoch, batch, update, .. } => Some((*epoch, *batch, *update)),
            _ => None,
        })
        .collect();
    assert_eq!(updates.len(), 16);
    for pair in updates.chunks(2) {
        assert_eq!(pair[0].2, Update::Joint);
        assert_eq!(pair[1].2, Update::Discriminator);
        assert_eq!((pair[0].0, pair[0].1), (pair[1].0, pair[1].1));
    }
    assert_eq!(ev.0.first(), Some(&TrainEvent::PhaseStart(Phase::Pretrain)));
    assert_eq!(ev.0.last(), Some(&TrainEvent::PhaseEnd(Phase::Finetune)));
}

#[test]
fn without_discriminator_only_the_autoencoder_learns() {
    let data = blobs(8, 8);
    let cfg = TrainConfig {
        no_discriminator: true,
        ..tiny_config()
    };
    let mut t = Trainer::<f32>::new(cfg, 8, 1).unwrap();
    let disc = t.model.group_hash(ParamGroup::Discriminator);
    let mut ev = EventLog::default();
    let log = t.pretrain(&data.images, &mut ev).unwrap();
    assert_eq!(t.model.group_hash(ParamGroup::Discriminator), disc);
    assert!(ev.0.iter().all(|e| !matches!(
        e,
        TrainEvent::BeforeUpdate {
            update: Update::Discriminator,
            ..
        }
    )));
    for r in &log {
        assert_eq!(r.gen_loss, None);
        assert_eq!(r.disc_loss, None);
        assert_eq!(r.discriminator_score, None);
        assert_eq!(r.alpha_loss, r.neg_elbo);
    }
}

#[test]
fn log_records_carry_the_right_terms() {
    let data = blobs(8, 8);
    let out = train::<f32>(&data, tiny_config(), &mut ()).unwrap();
    assert_eq!(out.log.len(), 4);
    for (i, r) in out.log.iter().enumerate() {
        assert_eq!(r.epoch, i + 1);
        let s = r.discriminator_score.unwrap();
        let g = r.generator_score.unwrap();
        assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&g));
        match r.phase {
            Phase::Pretrain => assert!(r.cluster_loss.is_none() && r.joint_loss.is_none()),
            Phase::Finetune => {
                let want = r.alpha_loss + 10.0 * r.cluster_loss.unwrap();
                assert!((r.joint_loss.unwrap() - want).abs() < 1e-3 * want.abs().max(1.0));
            }
        }
    }
    assert_eq!(out.clusters.assignments.len(), 8);
    assert!(out.metrics.is_some());
}

#[test]
fn same_seed_reproduces_logs_and_assignments() {
    let data = blobs(12, 8);
    let a = train::<f32>(&data, tiny_config(), &mut ()).unwrap();
    let b = train::<f32>(&data, tiny_config(), &mut ()).unwrap();
    assert!(a.log.iter().zip(&b.log).all(|(x, y)| x.same_values(y)));
    assert_eq!(a.clusters.assignments, b.clusters.assignments);
    let c = train::<f32>(
        &data,
        TrainConfig {
            seed: 8,
            ..tiny_config()
        },
        &mut (),
    )
    .unwrap();
    assert!(!a.log[0].same_values(&c.log[0]));
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let data = blobs(8, 8);
    let full = train::<f32>(&data, tiny_config(), &mut ()).unwrap();

    let mut t = Trainer::<f32>::new(tiny_config(), 8, 1).unwrap();
    t.run_epoch(Phase::Pretrain, 0, &data.images, &mut ()).unwrap();
    let bytes = t.to_tensor_file().to_bytes();
    drop(t);
    let mut t = Trainer::<f32>::from_tensor_file(&TensorFile::from_bytes(&bytes, "mem").unwrap()).unwrap();
    assert_eq!(t.progress.pretrain, 1);
    let mut log = t.pretrain(&data.images, &mut ()).unwrap();
    log.extend(t.finetune(&data.images, &mut ()).unwrap());
    assert_eq!(log.len(), 3);
    for (a, b) in full.log[1..].iter().zip(&log) {
        assert!(a.same_values(b), "{a:?} vs {b:?}");
    }
    for g in ParamGroup::ALL {
        assert_eq!(full.trainer.model.group_hash(g), t.model.group_hash(g));
    }
}

#[test]
fn dense_head_ablation_clusters_the_latent_means() {
    let data = blobs(8, 8);
    let cfg = TrainConfig {
        finetune_epochs: 0,
        no_dense_head: true,
        ..tiny_config()
    };
    let out = train::<f32>(&data, cfg.clone(), &mut ()).unwrap();
    assert_eq!(out.features.ncols(), cfg.latent_dim);
    let mu = out.trainer.model.encode_means(&data.images, 4).unwrap();
    assert!(mu.iter().zip(out.features.iter()).all(|(a, b)| (*a as f64 - b).abs() < 1e-12));
}

#[test]
fn residual_ablation_drops_the_blocks() {
    let full = Trainer::<f32>::new(tiny_config(), 8, 1).unwrap();
    let plain = Trainer::<f32>::new(
        TrainConfig {
            no_residual: true,
            ..tiny_config()
        },
        8,
        1,
    )
    .unwrap();
    use dcfae::nn::Module;
    let has_res = |t: &Trainer<f32>| t.model.params().iter().any(|(n, _)| n.contains(".res"));
    assert!(has_res(&full));
    assert!(!has_res(&plain));
    assert!(plain.model.num_params() < full.model.num_params());
}

#[test]
fn joint_loss_decreases_on_two_blob_toy_data() {
    let data = blobs(200, 8);
    let cfg = TrainConfig {
        batch_size: 20,
        pretrain_epochs: 0,
        finetune_epochs: 20,
        lambda: 0.1,
        lambda_prime: 1.0,
        learning_rate: 3e-3,
        augment: dcfae::datasets::AugmentConfig::disabled(),
        ..tiny_config()
    };
    let out = train::<f32>(&data, cfg, &mut ()).unwrap();
    let j: Vec<f64> = out.log.iter().map(|r| r.joint_loss.unwrap()).collect();
    let first: f64 = j[..5].iter().sum::<f64>() / 5.0;
    let last: f64 = j[j.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(last < first, "first {first}, last {last}");
}
