use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weaksep::autodiff::Array;
use weaksep::nn::{Model, ModelKind, TcnConfig};
use weaksep::synth::{CorpusConfig, Dataset, GeneratorConfig, Split};
use weaksep::train::*;

fn tiny_tcn() -> TcnConfig {
    TcnConfig { repeats: 1, blocks_per_repeat: 2, channels: 8, ..TcnConfig::default() }
}

fn tiny_data(train: usize) -> TrainData {
    let cc = CorpusConfig {
        seed: 3,
        train,
        validation: 2,
        test: 0,
        generator: GeneratorConfig { clip_seconds: 1.0, ..GeneratorConfig::default() },
    };
    TrainData {
        instruments: cc.generator.instrument_names(),
        train: Dataset::generate(&cc, Split::Train, false).unwrap(),
        validation: Dataset::generate(&cc, Split::Validation, true).unwrap(),
    }
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        batch_size: 2,
        tcn: tiny_tcn(),
        separator_tcn: tiny_tcn(),
        ..TrainConfig::default()
    }
}

fn quiet() -> TrainLog {
    TrainLog::new(None, false)
}

#[test]
fn remix_picks_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (draws, batch) = (10_000, 4);
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[remix_picks(&mut rng, batch, 1, None)[0]] += 1;
    }
    let p = 1.0 / batch as f64;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn remix_sums_picked_sources() {
    let sources: Vec<Array> = (0..3).map(|b| Array::from_fn(&[2, 3, 4], |k| (b * 100 + k) as f64)).collect();
    let labels: Vec<Array> = (0..3).map(|b| Array::from_fn(&[2, 5], |k| (b * 10 + k) as f64)).collect();
    let r = remix_sample(&sources, &labels, &mut ChaCha8Rng::seed_from_u64(2), None);
    for k in 0..12 {
        let want = sources[r.picks[0]].data()[k] + sources[r.picks[1]].data()[12 + k];
        assert_eq!(r.mixture.data()[k], want);
    }
    for i in 0..2 {
        assert_eq!(&r.labels.data()[i * 5..(i + 1) * 5], &labels[r.picks[i]].data()[i * 5..(i + 1) * 5]);
    }
    let again = remix_sample(&sources, &labels, &mut ChaCha8Rng::seed_from_u64(2), None);
    assert_eq!(again, r);
}

#[test]
fn step1_loss_decreases_and_is_reproducible() {
    let data = tiny_data(6);
    let cfg = tiny_cfg(3);
    let mut log = quiet();
    let a = run_step1(&data, &cfg, &mut log).unwrap();
    let train: Vec<f64> = log.records.iter().map(|r| r.train_loss).collect();
    assert_eq!(train.len(), 3);
    assert!(train[2] < train[0], "{train:?}");
    assert!(log.records.iter().all(|r| r.val_f1.is_some()));
    let b = run_step1(&data, &cfg, &mut quiet()).unwrap();
    assert_eq!(a.best_val_loss.to_bits(), b.best_val_loss.to_bits());
    assert_eq!(a.model.params.fingerprint(), b.model.params.fingerprint());
}

#[test]
fn step2_leaves_the_critic_untouched() {
    let data = tiny_data(4);
    let cfg = tiny_cfg(2);
    let critic = Model::new(ModelKind::Transcriptor, data.instruments.clone(), tiny_tcn(), 5).unwrap();
    let before = critic.params.fingerprint();
    let mut log = quiet();
    let out = run_step2(&data, &cfg, &critic, &mut log).unwrap();
    assert_eq!(critic.params.fingerprint(), before);
    assert_eq!(out.model.kind(), ModelKind::Separator);
    assert!(log.records.iter().all(|r| r.val_si_sdr.is_some() && r.train_loss.is_finite()));
}

#[test]
fn step2_rejects_wrong_critic() {
    let data = tiny_data(2);
    let sep = Model::new(ModelKind::Separator, data.instruments.clone(), tiny_tcn(), 5).unwrap();
    assert!(run_step2(&data, &tiny_cfg(1), &sep, &mut quiet()).is_err());
    assert!(run_baseline(&data, &tiny_cfg(1), &sep, &mut quiet()).is_err());
}

#[test]
fn harmonic_mixture_only_runs() {
    let data = tiny_data(4);
    let cfg = TrainConfig { use_c_mix: false, ..tiny_cfg(2) };
    let critic = Model::new(ModelKind::Transcriptor, data.instruments.clone(), tiny_tcn(), 5).unwrap();
    let out = run_step2(&data, &cfg, &critic, &mut quiet()).unwrap();
    assert!(out.best_val_loss.is_finite());
}

#[test]
fn joint_step_runs_on_a_two_clip_batch() {
    let data = tiny_data(2);
    let cfg = TrainConfig { exclude_self: true, ..tiny_cfg(2) };
    let t = Model::new(ModelKind::Transcriptor, data.instruments.clone(), tiny_tcn(), 1).unwrap();
    let s = Model::new(ModelKind::Separator, data.instruments.clone(), tiny_tcn(), 2).unwrap();
    let mut log = quiet();
    let out = run_step3(&data, &cfg, &t, &s, &mut log).unwrap();
    assert!(out.transcriptor_best.is_finite() && out.separator_best.is_finite());
    assert!(log.records.iter().any(|r| r.role == ModelKind::Transcriptor));
    assert!(log.records.iter().any(|r| r.role == ModelKind::Separator));
    assert_ne!(out.transcriptor.params.fingerprint(), t.params.fingerprint());
    assert!(run_step3(&data, &cfg, &s, &t, &mut quiet()).is_err());
}

#[test]
fn invalid_configs_rejected() {
    let data = tiny_data(2);
    for cfg in [
        TrainConfig { batch_size: 0, ..tiny_cfg(1) },
        TrainConfig { lr: 0.0, ..tiny_cfg(1) },
        TrainConfig { threshold: 1.0, ..tiny_cfg(1) },
        TrainConfig { weight_decay: -1.0, ..tiny_cfg(1) },
    ] {
        assert!(matches!(run_step1(&data, &cfg, &mut quiet()), Err(TrainError::Config(_))));
    }
}

#[test]
fn log_writes_json_lines() {
    let data = tiny_data(2);
    let file = tempfile::NamedTempFile::new().unwrap();
    let writer = Box::new(file.reopen().unwrap());
    run_classifier(&data, &tiny_cfg(2), &mut TrainLog::new(Some(writer), false)).unwrap();
    let text = std::fs::read_to_string(file.path()).unwrap();
    let lines: Vec<EpochRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|r| r.role == ModelKind::Classifier));
}
