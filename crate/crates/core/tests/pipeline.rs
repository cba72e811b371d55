use effifusion::dsp::{read_wav, write_wav, AudioClip};
use effifusion::exec::Execution;
use effifusion::pipeline::checkpoint::{decode, encode, VERSION};
use effifusion::pipeline::run::datasets;
use effifusion::pipeline::{
    enhance_file, global_snr_db, load_checkpoint, param_table, run_ablations, save_checkpoint, synth_dataset, Ablation, DatasetSource,
    PruneMode, SynthDatasetSpec, TrainConfig, Trainer,
};
use effifusion::Error;

fn tiny_trainer(cfg: TrainConfig) -> (Trainer, Vec<effifusion::pipeline::NoisyPair>, Vec<effifusion::pipeline::NoisyPair>) {
    let (train, heldout) = datasets(&cfg, Execution::available()).unwrap();
    (Trainer::new(cfg).unwrap(), train, heldout)
}

#[test]
fn synthetic_mixtures_hit_nominal_snr() {
    let spec = SynthDatasetSpec { num_clips: 24, ..SynthDatasetSpec::default() };
    let pairs = synth_dataset(&spec, Execution::available()).unwrap();
    assert_eq!(pairs.len(), 24);
    for p in &pairs {
        assert!(spec.snr_levels.contains(&p.snr_db));
        let measured = global_snr_db(p.clean.samples(), &p.noise());
        assert!((measured - p.snr_db).abs() < 0.1, "{}: {measured} vs {}", p.id, p.snr_db);
        assert_eq!(p.clean.len(), spec.samples_per_clip());
        assert!(p.noisy.peak() <= 1.0);
    }
    // each level shows up
    for level in &spec.snr_levels {
        assert!(pairs.iter().any(|p| p.snr_db == *level));
    }
}

#[test]
fn synthetic_data_is_deterministic() {
    let spec = SynthDatasetSpec { num_clips: 8, ..SynthDatasetSpec::default() };
    let a = synth_dataset(&spec, Execution::Parallel).unwrap();
    let b = synth_dataset(&spec, Execution::Sequential).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.clean.samples(), y.clean.samples());
        assert_eq!(x.noisy.samples(), y.noisy.samples());
    }
    let other = synth_dataset(&SynthDatasetSpec { seed: 1, ..spec }, Execution::Sequential).unwrap();
    assert_ne!(a[0].noisy.samples(), other[0].noisy.samples());
}

#[test]
fn zero_learning_rates_leave_parameters_bitwise() {
    let cfg = TrainConfig { lr_generator: 0.0, lr_discriminator: 0.0, weight_decay: 0.0, ..TrainConfig::tiny() };
    let (mut t, train, _) = tiny_trainer(cfg);
    let (g, d) = (t.model.gen_params.clone(), t.model.disc_params.clone());
    let prepared = t.prepare(&train[..2]).unwrap();
    let record = t.train_step(&prepared.iter().collect::<Vec<_>>()).unwrap();
    assert!(record.losses.is_finite());
    assert!(record.d_loss.is_finite());
    assert_eq!(t.model.gen_params, g);
    assert_eq!(t.model.disc_params, d);
}

#[test]
fn one_default_step_on_two_clips_is_finite() {
    let cfg = TrainConfig::default();
    let spec = SynthDatasetSpec { num_clips: 2, ..cfg.dataset.clone() };
    let pairs = synth_dataset(&spec, Execution::available()).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    let prepared = t.prepare(&pairs).unwrap();
    let r = t.train_step(&prepared.iter().collect::<Vec<_>>()).unwrap();
    for (name, v) in r.losses.fields() {
        assert!(v.is_finite(), "{name}");
    }
    assert!(r.scores.within_unit(), "{:?}", r.scores);
    assert!(r.sigmas.iter().all(|s| s.is_finite()));
}

#[test]
fn tiny_overfit_halves_generator_loss() {
    let (mut t, train, _) = tiny_trainer(TrainConfig { lr_generator: 1e-2, ..TrainConfig::tiny() });
    let prepared = t.prepare(&train[..1]).unwrap();
    let batch: Vec<_> = prepared.iter().collect();
    let first = t.train_step(&batch).unwrap().losses.l_generator;
    let mut last = first;
    for _ in 0..200 {
        last = t.train_step(&batch).unwrap().losses.l_generator;
        if last < 0.5 * first {
            break;
        }
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn full_run_is_deterministic_across_execution_modes() {
    let run = |parallel| {
        let (mut t, train, heldout) = tiny_trainer(TrainConfig { parallel, ..TrainConfig::tiny() });
        t.fit(&train, &heldout, |_| {}).unwrap();
        t
    };
    let a = run(true);
    let b = run(true);
    let c = run(false);
    assert_eq!(a.history, b.history);
    assert_eq!(a.history, c.history);
    assert_eq!(encode(&a).unwrap(), encode(&b).unwrap());
    assert!(a.history.scores_within_unit());
}

#[test]
fn prune_schedule_is_honored() {
    let cfg = TrainConfig { epochs: 4, ..TrainConfig::tiny() };
    assert_eq!(cfg.prune.start_epoch(4), 2);
    let (mut t, train, heldout) = tiny_trainer(cfg);
    t.fit(&train, &heldout, |_| {}).unwrap();
    let sparsity: Vec<f64> = t.history.epochs.iter().map(|e| e.sparsity).collect();
    assert_eq!(&sparsity[..2], &[0.0, 0.0]);
    for s in &sparsity[2..] {
        assert!((s - 0.30).abs() <= 0.005, "{sparsity:?}");
    }
    assert_eq!(t.history.prunes.len(), 1);
    assert!(t.history.prunes[0].finite_after);

    let (mut t, train, heldout) = tiny_trainer(Ablation::NoPrune.apply(&TrainConfig { epochs: 4, ..TrainConfig::tiny() }));
    t.fit(&train, &heldout, |_| {}).unwrap();
    assert!(t.history.epochs.iter().all(|e| e.sparsity == 0.0));
    assert!(t.history.prunes.is_empty());
}

#[test]
fn iterative_schedule_ramps_to_target() {
    let mut cfg = TrainConfig::tiny();
    cfg.epochs = 4;
    cfg.prune.mode = PruneMode::Iterative { steps: 2 };
    let amounts: Vec<Option<f64>> = (0..4).map(|e| cfg.prune.amount_at(e, 4)).collect();
    assert_eq!(amounts, vec![None, None, Some(0.15), Some(0.3)]);
    let (mut t, train, heldout) = tiny_trainer(cfg);
    t.fit(&train, &heldout, |_| {}).unwrap();
    let last = t.history.epochs.last().unwrap().sparsity;
    assert!((last - 0.30).abs() <= 0.005, "{last}");
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.efgn");
    let (mut straight, train, heldout) = tiny_trainer(TrainConfig::tiny());
    straight.fit(&train, &heldout, |_| {}).unwrap();

    let (mut first, ..) = tiny_trainer(TrainConfig { epochs: 1, ..TrainConfig::tiny() });
    first.fit(&train, &heldout, |_| {}).unwrap();
    save_checkpoint(&path, &first).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    resumed.config.epochs = 2;
    resumed.fit(&train, &heldout, |_| {}).unwrap();
    assert_eq!(resumed.history.steps, straight.history.steps);
    assert_eq!(resumed.model.gen_params, straight.model.gen_params);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (mut t, train, heldout) = tiny_trainer(TrainConfig {
        epochs: 2,
        prune: effifusion::pipeline::PruneSchedule { epoch: Some(1), ..Default::default() },
        ..TrainConfig::tiny()
    });
    t.fit(&train, &heldout, |_| {}).unwrap();
    let bytes = encode(&t).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(encode(&back).unwrap(), bytes);
    for (a, b) in [(&t.model.gen_params, &back.model.gen_params), (&t.model.disc_params, &back.model.disc_params)] {
        for ((_, p), (_, q)) in a.iter().zip(b.iter()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(p.name, q.name);
            assert_eq!(bits(p.tensor.data()), bits(q.tensor.data()));
            assert_eq!(p.mask, q.mask);
        }
    }
    assert!(back.model.gen_params.iter().any(|(_, p)| p.mask.is_some()));
    assert_eq!(back.rng, t.rng);
    assert_eq!(back.history, t.history);
    assert_eq!(back.mask, t.mask);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (t, ..) = tiny_trainer(TrainConfig::tiny());
    let good = encode(&t).unwrap();

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert!(matches!(decode(&bad), Err(Error::MagicMismatch(m)) if &m == b"NOPE"));

    let mut newer = good.clone();
    newer[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(decode(&newer), Err(Error::VersionMismatch { found, supported }) if found == VERSION + 1 && supported == VERSION));

    for cut in [3, 10, good.len() / 2, good.len() - 1] {
        let r = decode(&good[..cut]);
        assert!(matches!(r, Err(Error::Truncated(_)) | Err(Error::Checksum { .. })), "cut {cut}: {r:?}");
    }
    assert!(matches!(decode(&good[..good.len() / 2]), Err(Error::Truncated(_))));

    let mut flipped = good.clone();
    let i = good.len() - 20;
    flipped[i] ^= 0x40;
    assert!(matches!(decode(&flipped), Err(Error::Checksum { .. })));

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn enhancing_a_file_keeps_length_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (t, train, _) = tiny_trainer(TrainConfig::tiny());
    let (noisy, clean) = (dir.path().join("noisy.wav"), dir.path().join("clean.wav"));
    write_wav(&noisy, &train[0].noisy).unwrap();
    write_wav(&clean, &train[0].clean).unwrap();
    let (a, b) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    let scores = enhance_file(&t.model, &noisy, &a, Some(&clean)).unwrap().unwrap();
    assert!(scores.ssnr_enh.is_finite() && scores.sisnr_enh.is_finite());
    assert!(enhance_file(&t.model, &noisy, &b, None).unwrap().is_none());
    let (ya, yb) = (read_wav(&a).unwrap(), read_wav(&b).unwrap());
    assert_eq!(ya.len(), train[0].noisy.len());
    assert_eq!(ya.samples(), yb.samples());
    assert!(ya.samples().iter().all(|v| v.is_finite()));
}

#[test]
fn untrained_default_model_enhances_finite_audio() {
    let t = Trainer::new(TrainConfig::default()).unwrap();
    let clip = AudioClip::new((0..4000).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect(), 16_000).unwrap();
    let out = t.model.enhance(&clip).unwrap();
    assert_eq!(out.clip.len(), clip.len());
    assert!(out.clip.samples().iter().all(|v| v.is_finite()));
}

#[test]
fn dataset_sources() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig::tiny();
    let (train, _) = datasets(&cfg, Execution::available()).unwrap();
    for sub in ["clean", "noisy"] {
        std::fs::create_dir(dir.path().join(sub)).unwrap();
    }
    for p in &train[..3] {
        write_wav(dir.path().join("clean").join(format!("{}.wav", p.id)), &p.clean).unwrap();
        write_wav(dir.path().join("noisy").join(format!("{}.wav", p.id)), &p.noisy).unwrap();
    }
    let source = DatasetSource::parse(dir.path().to_str().unwrap(), &cfg).unwrap();
    assert_eq!(source.load(Execution::available()).unwrap().len(), 3);

    let inline = DatasetSource::parse(r#"{"num_clips": 2, "clip_seconds": 0.05}"#, &cfg).unwrap();
    assert_eq!(inline.load(Execution::available()).unwrap().len(), 2);
    assert_eq!(DatasetSource::parse("heldout", &cfg).unwrap(), DatasetSource::Synth(cfg.heldout_spec()));
    assert!(DatasetSource::parse("/no/such/thing", &cfg).is_err());
}

#[test]
fn config_parsing_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"epochs": 3, "seed": 5, "generator": {"base_channels": 8, "heads": 2}}"#).unwrap();
    let cfg = TrainConfig::load(&path).unwrap();
    assert_eq!((cfg.epochs, cfg.generator.base_channels, cfg.batch_size), (3, 8, 4));
    // the only test touching the variable
    std::env::set_var("EFGN_SEED", "42");
    let seeded = TrainConfig::load(&path);
    std::env::set_var("EFGN_SEED", "nope");
    let broken = TrainConfig::load(&path);
    std::env::remove_var("EFGN_SEED");
    assert_eq!(seeded.unwrap().seed, 42);
    assert!(matches!(broken, Err(Error::Config(_))));
    assert_eq!(TrainConfig::load(&path).unwrap().seed, 5);

    assert!(TrainConfig::from_json(r#"{"epochs": 0}"#).is_err());
    assert!(TrainConfig::from_json(r#"{"lr_generator": -1.0}"#).is_err());
    assert!(TrainConfig::from_json(r#"{"prune": {"amount": 1.5}}"#).is_err());
    assert!(TrainConfig::from_json(r#"{"no_such_field": 1}"#).is_ok());
    assert_eq!("no-res".parse::<Ablation>().unwrap(), Ablation::NoRes);
    assert!("none".parse::<Ablation>().is_err());
}

#[test]
fn ablation_presets() {
    let rows = param_table(&TrainConfig::default()).unwrap();
    let get = |a| rows.iter().find(|r| r.ablation == a).unwrap().generator;
    assert!(get(Ablation::NoDepthwise) > get(Ablation::Baseline));
    assert_eq!(get(Ablation::NoPrune), get(Ablation::Baseline));
    assert_eq!(get(Ablation::NoRes), get(Ablation::Baseline));

    let table = run_ablations(&TrainConfig::tiny(), &Ablation::ALL, |_| {}).unwrap();
    assert_eq!(table.len(), 4);
    let text = effifusion::pipeline::ablation_table_text(&table);
    assert_eq!(text.lines().count(), 5);
    let no_prune = table.iter().find(|r| r.ablation == Ablation::NoPrune).unwrap();
    assert_eq!(no_prune.sparsity, 0.0);
    let base = table.iter().find(|r| r.ablation == Ablation::Baseline).unwrap();
    assert!((base.sparsity - 0.3).abs() <= 0.005);
    assert!(table.iter().all(|r| r.ssnr.is_finite() && r.si_snr.is_finite()));
}
