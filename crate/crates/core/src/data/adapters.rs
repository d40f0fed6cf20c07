//! Converters from per-trial exports into the segment layout.
//!
//! EAV: each 20 s speaking trial is one dialogue, cut into consecutive
//! `delta_t_s` windows. AFFEC: each trial is one dialogue expanded into
//! `num_windows` overlapping windows. Audio/video (or GSR/eye) features are
//! precomputed; a trial carries either one vector per window or a single
//! vector shared by every window.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{read_f32, write_f32};
use super::segment::{segment_utterance, window_trial_overlapping};
use super::synth::{balanced_labels, subject_mixing, ClassModel};
use super::{ConversationSegment, Dataset, DatasetManifest, EmotionLabel, ModalityNames};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EAV_CLASS_NAMES: [&str; 5] = ["Neutral", "Anger", "Happy", "Sad", "Calm"];

/// One labelled recording before segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrial {
    pub subject_id: String,
    pub dialogue_id: String,
    pub label: usize,
    /// `C×T` samples.
    pub eeg: Tensor,
    pub audio: Vec<Vec<f64>>,
    pub video: Vec<Vec<f64>>,
}

fn per_window<'a>(trial: &'a RawTrial, vectors: &'a [Vec<f64>], what: &str, k: usize, n: usize) -> Result<&'a [f64]> {
    match vectors.len() {
        1 => Ok(&vectors[0]),
        m if m >= n => Ok(&vectors[k]),
        m => {
            Err(Error::Shape(format!("{}/{}: {m} {what} vectors for {n} windows", trial.subject_id, trial.dialogue_id)))
        }
    }
}

fn build(
    name: &str,
    rate_hz: f64,
    class_names: &[String],
    modalities: ModalityNames,
    trials: &[RawTrial],
    mut windows: impl FnMut(&RawTrial) -> Result<Vec<Tensor>>,
) -> Result<Dataset> {
    let first = trials.first().ok_or_else(|| Error::Argument("no trials".into()))?;
    let mut segments = Vec::new();
    for trial in trials {
        if trial.label >= class_names.len() {
            return Err(Error::Argument(format!(
                "{}/{}: label {} out of {} classes",
                trial.subject_id,
                trial.dialogue_id,
                trial.label,
                class_names.len()
            )));
        }
        let w = windows(trial)?;
        let n = w.len();
        for (k, eeg) in w.into_iter().enumerate() {
            segments.push(ConversationSegment {
                subject_id: trial.subject_id.clone(),
                dialogue_id: trial.dialogue_id.clone(),
                position: k,
                eeg,
                audio: per_window(trial, &trial.audio, "audio", k, n)?.to_vec(),
                video: per_window(trial, &trial.video, "video", k, n)?.to_vec(),
                label: EmotionLabel { class_index: trial.label, class_name: class_names[trial.label].clone() },
            });
        }
    }
    let head = segments.first().ok_or_else(|| Error::Argument("every trial is shorter than one window".into()))?;
    let manifest = DatasetManifest {
        name: name.to_string(),
        sampling_rate_hz: rate_hz,
        channels: first.eeg.shape()[0],
        window_len: head.eeg.shape()[1],
        audio_dim: head.audio.len(),
        video_dim: head.video.len(),
        num_classes: class_names.len(),
        class_names: class_names.to_vec(),
        modalities,
        subjects: vec![],
        segments: vec![],
    };
    Dataset::from_segments(manifest, segments)
}

/// Speaking-stream trials cut into consecutive `delta_t_s` windows.
pub fn eav_from_trials(trials: &[RawTrial], rate_hz: f64, delta_t_s: f64, class_names: &[String]) -> Result<Dataset> {
    build("eav", rate_hz, class_names, ModalityNames::default(), trials, |t| {
        segment_utterance(&t.eeg, delta_t_s, rate_hz)
    })
}

/// Trials expanded into `num_windows` overlapping windows of `window_len` samples.
pub fn affec_from_trials(
    trials: &[RawTrial],
    rate_hz: f64,
    window_len: usize,
    num_windows: usize,
    class_names: &[String],
) -> Result<Dataset> {
    let modalities = ModalityNames { eeg: "eeg".into(), audio: "gsr".into(), video: "eye".into() };
    build("affec", rate_hz, class_names, modalities, trials, |t| {
        window_trial_overlapping(&t.eeg, window_len, num_windows)
    })
}

/// Shape of a generated stand-in for an EAV export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EavStubConfig {
    pub num_subjects: usize,
    pub channels: usize,
    pub trials_per_subject: usize,
    pub trial_seconds: f64,
    pub window_seconds: f64,
    pub sampling_rate_hz: f64,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for EavStubConfig {
    fn default() -> Self {
        Self {
            num_subjects: 42,
            channels: 30,
            trials_per_subject: 10,
            trial_seconds: 20.0,
            window_seconds: 5.0,
            sampling_rate_hz: 100.0,
            audio_dim: 8,
            video_dim: 8,
            class_separation: 3.0,
            seed: 42,
        }
    }
}

/// Synthetic trials in the EAV layout: one trial per dialogue, per-window
/// audio/video vectors, subject ids `sub01`, `sub02`, ….
pub fn eav_stub_trials(cfg: &EavStubConfig) -> Result<TrialExport> {
    if cfg.num_subjects == 0 || cfg.channels == 0 || cfg.trials_per_subject == 0 {
        return Err(Error::Argument("stub needs at least one subject, channel and trial".into()));
    }
    let total = (cfg.trial_seconds * cfg.sampling_rate_hz).round() as usize;
    let windows = (cfg.trial_seconds / cfg.window_seconds).floor() as usize;
    if total == 0 || windows == 0 {
        return Err(Error::Argument("trial shorter than one window".into()));
    }
    let k = EAV_CLASS_NAMES.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ClassModel::new(k, cfg.audio_dim, cfg.video_dim, cfg.class_separation, &mut rng);
    let mut trials = Vec::new();
    for s in 0..cfg.num_subjects {
        let mixing = subject_mixing(cfg.channels, &mut rng);
        for (t, label) in balanced_labels(cfg.trials_per_subject, k, &mut rng).into_iter().enumerate() {
            trials.push(RawTrial {
                subject_id: format!("sub{:02}", s + 1),
                dialogue_id: format!("t{t:03}"),
                label,
                eeg: model.eeg(label, total, cfg.sampling_rate_hz, &mixing, cfg.channels, &mut rng),
                audio: (0..windows).map(|_| model.audio(label, &mut rng)).collect(),
                video: (0..windows).map(|_| model.video(label, &mut rng)).collect(),
            });
        }
    }
    Ok(TrialExport {
        sampling_rate_hz: cfg.sampling_rate_hz,
        class_names: EAV_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        trials,
    })
}

/// [`eav_stub_trials`] segmented with the configured window length.
pub fn eav_stub(cfg: &EavStubConfig) -> Result<Dataset> {
    let export = eav_stub_trials(cfg)?;
    eav_from_trials(&export.trials, export.sampling_rate_hz, cfg.window_seconds, &export.class_names)
}

pub const TRIALS_FILE: &str = "trials.json";

/// Unsegmented trials with their sampling rate and class names.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialExport {
    pub sampling_rate_hz: f64,
    pub class_names: Vec<String>,
    pub trials: Vec<RawTrial>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialEntry {
    subject_id: String,
    dialogue_id: String,
    label: usize,
    channels: usize,
    samples: usize,
    audio_vectors: usize,
    audio_dim: usize,
    video_vectors: usize,
    video_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialIndex {
    sampling_rate_hz: f64,
    class_names: Vec<String>,
    trials: Vec<TrialEntry>,
}

fn trial_stem(dir: &Path, subject: &str, dialogue: &str) -> std::path::PathBuf {
    dir.join("trials").join(subject).join(dialogue)
}

fn uniform_dim(vectors: &[Vec<f64>], what: &str, trial: &RawTrial) -> Result<usize> {
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.is_empty() || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape(format!(
            "{}/{}: ragged or missing {what} vectors",
            trial.subject_id, trial.dialogue_id
        )));
    }
    Ok(dim)
}

/// Writes `trials.json` plus `trials/<subject>/<dialogue>.{eeg,aud,vid}.f32`.
pub fn save_trials(export: &TrialExport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(export.trials.len());
    for t in &export.trials {
        if t.eeg.ndim() != 2 {
            return Err(Error::Shape(format!("{}/{}: EEG must be C×T", t.subject_id, t.dialogue_id)));
        }
        let stem = trial_stem(dir, &t.subject_id, &t.dialogue_id);
        write_f32(&stem.with_extension("eeg.f32"), t.eeg.data())?;
        write_f32(&stem.with_extension("aud.f32"), &t.audio.concat())?;
        write_f32(&stem.with_extension("vid.f32"), &t.video.concat())?;
        entries.push(TrialEntry {
            subject_id: t.subject_id.clone(),
            dialogue_id: t.dialogue_id.clone(),
            label: t.label,
            channels: t.eeg.shape()[0],
            samples: t.eeg.shape()[1],
            audio_vectors: t.audio.len(),
            audio_dim: uniform_dim(&t.audio, "audio", t)?,
            video_vectors: t.video.len(),
            video_dim: uniform_dim(&t.video, "video", t)?,
        });
    }
    let index = TrialIndex {
        sampling_rate_hz: export.sampling_rate_hz,
        class_names: export.class_names.clone(),
        trials: entries,
    };
    let path = dir.join(TRIALS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))
}

pub fn load_trials(dir: impl AsRef<Path>) -> Result<TrialExport> {
    let dir = dir.as_ref();
    let path = dir.join(TRIALS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: TrialIndex = serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
    let mut trials = Vec::with_capacity(index.trials.len());
    for e in index.trials {
        let stem = trial_stem(dir, &e.subject_id, &e.dialogue_id);
        let read = |ext: &str, n: usize| -> Result<Vec<f64>> {
            let p = stem.with_extension(ext);
            let v = read_f32(&p)?;
            if v.len() != n {
                return Err(Error::schema(&p, format!("{} values, index declares {n}", v.len())));
            }
            Ok(v)
        };
        let eeg = Tensor::new(vec![e.channels, e.samples], read("eeg.f32", e.channels * e.samples)?)?;
        let split = |flat: Vec<f64>, dim: usize| flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        let audio = split(read("aud.f32", e.audio_vectors * e.audio_dim)?, e.audio_dim);
        let video = split(read("vid.f32", e.video_vectors * e.video_dim)?, e.video_dim);
        trials.push(RawTrial {
            subject_id: e.subject_id,
            dialogue_id: e.dialogue_id,
            label: e.label,
            eeg,
            audio,
            video,
        });
    }
    Ok(TrialExport { sampling_rate_hz: index.sampling_rate_hz, class_names: index.class_names, trials })
}
