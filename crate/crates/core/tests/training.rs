mod common;

use std::path::Path;

use stateact::evaluator::{self, write_report};
use stateact::net::Model;
use stateact::synthgen::Split;
use stateact::trainer::{train, Checkpoint, TrainMeta, Vocabulary, CHECKPOINT_VERSION};
use stateact::Error;

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

#[test]
fn steps_per_epoch_and_zero_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::small_run();
    cfg.train_count = 10;
    cfg.batch_size = 4;
    let ds = common::small_dataset(dir.path(), &cfg);
    let segs = ds.load_split(Split::Train).unwrap();
    let mut model: Model<f32> = Model::new(cfg.model_config(&ds.ledger)).unwrap();
    let mut tc = cfg.train_config();
    tc.epochs = 1;
    let log = train(&mut model, &ds.ledger, &segs, &tc, |_| {}).unwrap();
    assert_eq!(log[0].steps, 3);
    tc.epochs = 0;
    assert!(matches!(
        train(&mut model, &ds.ledger, &segs, &tc, |_| {}),
        Err(Error::InvalidValue { .. })
    ));
}

#[test]
fn zero_rate_and_frozen_backbone_leave_weights_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_run();
    let ds = common::small_dataset(dir.path(), &cfg);
    let segs = ds.load_split(Split::Train).unwrap();
    let initial: Model<f32> = Model::new(cfg.model_config(&ds.ledger)).unwrap();

    let mut model = initial.clone();
    let mut tc = cfg.train_config();
    tc.learning_rate = 0.0;
    train(&mut model, &ds.ledger, &segs, &tc, |_| {}).unwrap();
    for (a, b) in model.params.iter().zip(initial.params.iter()) {
        assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
    }

    let mut model = initial.clone();
    train(&mut model, &ds.ledger, &segs, &cfg.train_config(), |_| {}).unwrap();
    let mut moved = false;
    for (a, b) in model.params.iter().zip(initial.params.iter()) {
        if a.name.starts_with("backbone.") {
            assert!(a.frozen);
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        } else {
            moved |= a.value.data() != b.value.data();
        }
    }
    assert!(moved);
}

fn train_once(dir: &Path) -> (String, Vec<u8>) {
    let cfg = common::small_run();
    let ds = common::small_dataset(dir, &cfg);
    let segs = ds.load_split(Split::Train).unwrap();
    let mut model: Model<f32> = Model::new(cfg.model_config(&ds.ledger)).unwrap();
    let log = train(&mut model, &ds.ledger, &segs, &cfg.train_config(), |_| {}).unwrap();
    let ckpt = Checkpoint {
        run: cfg.clone(),
        model,
        vocab: Vocabulary::from_ledger(&ds.ledger),
        meta: TrainMeta {
            epochs: log.len(),
            seed: cfg.seed,
            final_loss: log.last().unwrap().loss.total,
        },
    };
    (stateact::trainer::format_epoch_log(&log), ckpt.to_bytes())
}

#[test]
fn training_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = single_threaded(|| train_once(a.path()));
    let second = single_threaded(|| train_once(b.path()));
    assert_eq!(first, second);
    // Thread count does not change the ordered reduction.
    let c = tempfile::tempdir().unwrap();
    assert_eq!(train_once(c.path()), first);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_run();
    let ds = common::small_dataset(dir.path(), &cfg);
    let segs = ds.load_split(Split::Test).unwrap();
    let model: Model<f32> = Model::new(cfg.model_config(&ds.ledger)).unwrap();
    let ckpt = Checkpoint {
        run: cfg.clone(),
        model,
        vocab: Vocabulary::from_ledger(&ds.ledger),
        meta: TrainMeta {
            epochs: 3,
            seed: 4,
            final_loss: 0.125,
        },
    };
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.run, ckpt.run);
    assert_eq!(back.vocab, ckpt.vocab);
    assert_eq!(back.meta, ckpt.meta);
    assert_eq!(back.model.config, ckpt.model.config);
    for (a, b) in back.model.params.iter().zip(ckpt.model.params.iter()) {
        assert_eq!((a.name.as_str(), a.frozen), (b.name.as_str(), b.frozen));
        let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.value.data()), bits(b.value.data()));
    }
    let clip = segs[0].clip(&[0, 5, 10]).unwrap();
    assert_eq!(back.model.forward(&clip).unwrap(), ckpt.model.forward(&clip).unwrap());

    let bytes = ckpt.to_bytes();
    for cut in [0, 3, 7, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    let mut v2 = bytes.clone();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    let err = Checkpoint::from_bytes(&v2).unwrap_err();
    assert!(matches!(err, Error::Version { found: 2, expected: CHECKPOINT_VERSION }));
    let msg = err.to_string();
    assert!(msg.contains('2') && msg.contains('1'), "{msg}");
}

#[test]
fn evaluation_is_seeded_and_single_clip_is_plain_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_run();
    let ds = common::small_dataset(dir.path(), &cfg);
    let model: Model<f32> = Model::new(cfg.model_config(&ds.ledger)).unwrap();
    let a = evaluator::evaluate(&model, &ds, Split::Test, 3, 9).unwrap();
    let b = single_threaded(|| evaluator::evaluate(&model, &ds, Split::Test, 3, 9).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.segments, cfg.test_count);
    let (pa, pb) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"));
    write_report(&a, &pa).unwrap();
    write_report(&b, &pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

    let segs = ds.load_split(Split::Test).unwrap();
    let one = evaluator::predict_all(&model, &segs, 1, 9).unwrap();
    for (i, seg) in segs.iter().enumerate() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(evaluator::eval_clip_seed(9, i, 0));
        let frames = stateact::trainer::sample_keyframes(seg.frames, model.config.k, &mut rng);
        let out = model.forward(&seg.clip(&frames).unwrap()).unwrap();
        let widened: Vec<f64> = out.verb_logits.data().iter().map(|&v| v as f64).collect();
        assert_eq!(one.verb.scores[i], widened);
    }
    for task in evaluator::Task::ALL {
        let m = a.task(task);
        assert!(m.top1 <= m.top5);
    }
}
