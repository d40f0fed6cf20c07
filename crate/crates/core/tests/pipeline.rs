//! End-to-end use of the public API: generate, persist, split, train, evaluate.

use std::collections::BTreeSet;

use hypermml::data::{load_manifest, make_synthetic_dataset, save_manifest, Dataset, SynthConfig};
use hypermml::trainer::{evaluate, resolve_split, train, Checkpoint, EvalTarget, SplitSpec, TrainConfig};

fn small() -> Dataset {
    make_synthetic_dataset(&SynthConfig {
        num_subjects: 2,
        dialogues_per_subject: 6,
        segments_per_dialogue: 3,
        channels: 3,
        window_len: 32,
        audio_dim: 5,
        video_dim: 4,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 2, d: 12, d_k: 8, transformer_dim: 16, ..TrainConfig::default() }
}

#[test]
fn dataset_survives_a_disk_round_trip() {
    let ds = small();
    let dir = tempfile::tempdir().unwrap();
    save_manifest(&ds, dir.path()).unwrap();
    let back = load_manifest(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.segments.iter().zip(&back.segments) {
        assert_eq!(a.key(), b.key());
        assert_eq!(a.label, b.label);
        // payloads are stored as f32
        for (x, y) in a.eeg.data().iter().zip(b.eeg.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }

    let again = tempfile::tempdir().unwrap();
    save_manifest(&back, again.path()).unwrap();
    assert_eq!(load_manifest(again.path()).unwrap(), back);
}

#[test]
fn split_partitions_every_subject() {
    let ds = small();
    let split = resolve_split(&TrainConfig::default(), &ds).unwrap();
    let train: BTreeSet<_> = split.train.iter().cloned().collect();
    let test: BTreeSet<_> = split.test.iter().cloned().collect();
    assert!(train.is_disjoint(&test));
    assert_eq!(train.len() + test.len(), ds.len());
    for subject in &ds.manifest.subjects {
        assert!(split.test.iter().any(|r| &r.subject_id == subject), "{subject} has no held-out segment");
        assert!(split.train.iter().any(|r| &r.subject_id == subject), "{subject} has no training segment");
    }
}

#[test]
fn one_subject_split_holds_out_only_that_subject() {
    let ds = small();
    let cfg = TrainConfig {
        split: SplitSpec::Subject { subject: "s01".into(), test_fraction: 0.5 },
        ..TrainConfig::default()
    };
    let split = resolve_split(&cfg, &ds).unwrap();
    assert!(split.test.iter().all(|r| r.subject_id == "s01"));

    let missing = TrainConfig {
        split: SplitSpec::Subject { subject: "nobody".into(), test_fraction: 0.5 },
        ..TrainConfig::default()
    };
    assert!(resolve_split(&missing, &ds).is_err());
}

#[test]
fn reloaded_checkpoint_reproduces_its_report() {
    let ds = small();
    let ckpt = train(&quick(), &ds).unwrap();
    assert_eq!(ckpt.epoch, 2);
    assert_eq!(ckpt.history.len(), 2);

    let report = evaluate(&ckpt, &ds, &EvalTarget::Test).unwrap();
    assert_eq!(report.overall.count, ckpt.split.test.len());
    let total: usize = report.overall.confusion.iter().flatten().sum();
    assert_eq!(total, report.overall.count);

    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.history, ckpt.history);
    assert_eq!(evaluate(&back, &ds, &EvalTarget::Test).unwrap(), report);
}

#[test]
fn training_twice_with_one_seed_is_identical() {
    let ds = small();
    let a = train(&quick(), &ds).unwrap();
    let b = train(&quick(), &ds).unwrap();
    assert_eq!(a.history, b.history);
    let other = train(&TrainConfig { seed: 7, ..quick() }, &ds).unwrap();
    assert_ne!(a.history, other.history);
}
