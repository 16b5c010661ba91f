use refgame::agents::AgentDims;
use refgame::engine::{
    acquire_extractor, run_experiment, train_epoch, ExperimentConfig, Models, RunOptions, TrainState, Variant, LOG_FILE,
    MODEL_FILE, PRETRAINED_FILE, SUMMARY_FILE,
};
use refgame::harness::{read_metrics_log, synthetic_dataset, DatasetSplit, SyntheticSpec};
use refgame::nn::param_hash;
use refgame::vision::{ExtractorConfig, Regime};

fn small(variant: Variant, regime: Regime) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.variant = variant;
    c.extractor = ExtractorConfig::with_channels(regime, &[8, 16]);
    c.agents = AgentDims {
        embed_dim: 16,
        hidden_dim: 32,
        feature_dim: 16,
    };
    c.channel.vocab_size = 10;
    c.batch_size = 8;
    c.eval_runs = 1;
    c.train_size = 0;
    c.val_size = 0;
    c.rotation_hidden = 16;
    c.contrastive.epochs = 1;
    c.contrastive.batch_size = 16;
    c.contrastive.projection_hidden = 16;
    c.contrastive.projection_dim = 8;
    c.sync_variant_flags();
    c
}

fn fixture() -> (DatasetSplit, DatasetSplit) {
    synthetic_dataset(&SyntheticSpec {
        classes: 8,
        size: 16,
        train_per_class: 8,
        val_per_class: 2,
        seed: 11,
    })
    .unwrap()
}

#[test]
fn tiny_fixture_loss_halves_within_fifty_epochs() {
    let (train, _) = fixture();
    assert_eq!(train.len(), 64);
    let c = small(Variant::Baseline, Regime::Learned);
    let (e, _, _) = acquire_extractor(&c, &train, &train, None).unwrap();
    let mut st = TrainState::new(&c, Models::new(&c, e));
    let first = train_epoch(&mut st, &train, &c).unwrap().mean_loss;
    let mut last = first;
    for _ in 1..50 {
        last = train_epoch(&mut st, &train, &c).unwrap().mean_loss;
    }
    assert!(last < 0.5 * first, "epoch 1 {first}, epoch 50 {last}");
}

#[test]
fn finetuned_extractor_frozen_through_epoch_five() {
    let (train, val) = fixture();
    let c = small(Variant::SenderPredictsRotation, Regime::SsPretrainedFinetuned);
    let (e, summary, ck) = acquire_extractor(&c, &train, &val, None).unwrap();
    assert!(summary.contrastive.is_some() && ck.is_some());
    let mut st = TrainState::new(&c, Models::new(&c, e));
    let h0 = param_hash(&mut st.models.extractor);
    for epoch in 1..=6 {
        let s = train_epoch(&mut st, &train, &c).unwrap();
        let h = param_hash(&mut st.models.extractor);
        if epoch <= 5 {
            assert!(s.extractor_frozen);
            assert_eq!(h, h0, "epoch {epoch}");
        } else {
            assert!(!s.extractor_frozen);
            assert_ne!(h, h0, "epoch {epoch}");
        }
    }
}

#[test]
fn same_seed_same_bytes_and_artifacts() {
    let (train, val) = fixture();
    let mut c = small(Variant::SenderNoiseRotation, Regime::Learned);
    c.epochs = 2;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_experiment(
            &c,
            &train,
            &val,
            RunOptions {
                out_dir: Some(d.path().to_path_buf()),
                ..RunOptions::default()
            },
        )
        .unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(LOG_FILE)).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    let text = String::from_utf8(read(&dirs[0])).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(dirs[0].path().join(SUMMARY_FILE).exists());
    assert!(dirs[0].path().join(MODEL_FILE).exists());
    assert!(!dirs[0].path().join(PRETRAINED_FILE).exists());
    let log = read_metrics_log(&dirs[0].path().join(LOG_FILE)).unwrap();
    assert_eq!(log.config.as_ref(), Some(&c));

    c.seed = 1;
    let other = run_experiment(&c, &train, &val, RunOptions::default()).unwrap();
    assert_ne!(other.log.rows, log.rows);
}

#[test]
fn frozen_regimes_keep_the_pretrained_weights() {
    let (train, val) = fixture();
    let mut c = small(Variant::Baseline, Regime::PretrainedFrozen);
    c.epochs = 2;
    c.supervised.epochs = 1;
    c.supervised.batch_size = 16;
    let d = tempfile::tempdir().unwrap();
    let out = run_experiment(
        &c,
        &train,
        &val,
        RunOptions {
            out_dir: Some(d.path().to_path_buf()),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert!(out.pretrain.supervised.is_some());
    let ck = refgame::nn::Checkpoint::load(&d.path().join(PRETRAINED_FILE)).unwrap();
    let mut reference = refgame::vision::build_extractor(&c.extractor, &mut refgame::rng::seeded(0), Some(&ck)).unwrap();
    let mut trained = out.models.extractor;
    assert_eq!(param_hash(&mut trained), param_hash(&mut reference));
}

#[test]
fn untrained_models_play_at_chance() {
    let (_, val) = synthetic_dataset(&SyntheticSpec {
        classes: 10,
        size: 16,
        train_per_class: 1,
        val_per_class: 40,
        seed: 4,
    })
    .unwrap();
    let mut c = small(Variant::Baseline, Regime::RandomFrozen);
    c.eval_runs = 3;
    let (e, _, _) = acquire_extractor(&c, &val, &val, None).unwrap();
    let mut m = Models::new(&c, e);
    let r = refgame::engine::evaluate(&mut m, &val, &c, c.eval_runs).unwrap();
    let n = (r.games_per_run * c.eval_runs) as f64;
    let p = 1.0 / c.batch_size as f64;
    let bound = 3.0 * (p * (1.0 - p) / n).sqrt();
    let rate = r.mean.comm_rate_top1;
    assert!((rate - p).abs() <= bound, "rate {rate}, chance {p} +- {bound}");
}
