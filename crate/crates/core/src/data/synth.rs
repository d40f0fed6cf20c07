//! Class-conditioned synthetic conversations for exercising the whole pipeline.
//!
//! EEG is band-limited Gaussian noise whose per-band power follows a
//! class-specific profile, mixed across channels by a per-subject matrix.
//! Audio and video are isotropic Gaussian clusters around class means whose
//! norm equals `class_separation`. At separation 0 every class has the same
//! distribution.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{round_f32, ConversationSegment, Dataset, DatasetManifest, EmotionLabel, ModalityNames};
use crate::error::{Error, Result};
use crate::spectral::{freq_axis, Band, BandEdges};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub num_subjects: usize,
    pub dialogues_per_subject: usize,
    pub segments_per_dialogue: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub window_len: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub sampling_rate_hz: f64,
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            num_subjects: 3,
            dialogues_per_subject: 20,
            segments_per_dialogue: 4,
            num_classes: 3,
            channels: 4,
            window_len: 64,
            audio_dim: 16,
            video_dim: 16,
            sampling_rate_hz: 128.0,
            class_separation: 5.0,
            seed: 42,
        }
    }
}

/// Per-class generative parameters shared by every subject.
pub(crate) struct ClassModel {
    /// `[class][band]` relative band power.
    band_power: Vec<[f64; 5]>,
    audio_means: Vec<Vec<f64>>,
    video_means: Vec<Vec<f64>>,
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

impl ClassModel {
    pub(crate) fn new(num_classes: usize, audio_dim: usize, video_dim: usize, sep: f64, rng: &mut ChaCha8Rng) -> Self {
        let band_power = (0..num_classes)
            .map(|k| {
                let mut p = [1.0; 5];
                // one dominant band per class plus a random tilt on the others
                for (b, v) in p.iter_mut().enumerate() {
                    let tilt: f64 = rng.random();
                    let bump = if b == k % 5 { 1.0 } else { 0.25 * tilt };
                    *v = 1.0 + sep * bump;
                }
                p
            })
            .collect();
        let audio_means =
            (0..num_classes).map(|_| unit_vector(audio_dim, rng).into_iter().map(|x| x * sep).collect()).collect();
        let video_means =
            (0..num_classes).map(|_| unit_vector(video_dim, rng).into_iter().map(|x| x * sep).collect()).collect();
        Self { band_power, audio_means, video_means }
    }

    /// `C×len` band-limited noise for class `k`, mixed by `mixing` (`C×C`).
    pub(crate) fn eeg(
        &self,
        k: usize,
        len: usize,
        rate: f64,
        mixing: &[f64],
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Tensor {
        let axis = freq_axis(len, rate);
        let edges = BandEdges::default();
        let bins = axis.len();
        let mut counts = [0usize; 5];
        for &f in &axis {
            for b in Band::ALL {
                if edges.contains(b, f) {
                    counts[b.index()] += 1;
                }
            }
        }
        let mut re = vec![0.0; channels * bins];
        let mut im = vec![0.0; channels * bins];
        for c in 0..channels {
            for (f, &freq) in axis.iter().enumerate() {
                let Some(b) = Band::ALL.into_iter().find(|b| edges.contains(*b, freq)) else { continue };
                // per-band time-domain variance ≈ band_power / 5
                let var = self.band_power[k][b.index()] / 5.0;
                let amp = (var * (len * len) as f64 / (2.0 * counts[b.index()] as f64)).sqrt();
                let s = amp * std::f64::consts::FRAC_1_SQRT_2;
                re[c * bins + f] = s * rng.sample::<f64, _>(StandardNormal);
                im[c * bins + f] = s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let raw = crate::spectral::fft::irfft_rows(&re, &im, len);
        let mut out = vec![0.0; channels * len];
        crate::tensor::gemm(channels, channels, len, mixing, false, &raw, false, &mut out, false);
        for v in &mut out {
            *v = round_f32(*v + 0.05 * rng.sample::<f64, _>(StandardNormal));
        }
        Tensor::from_parts(vec![channels, len], out)
    }

    pub(crate) fn vector(mean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        mean.iter().map(|m| round_f32(m + rng.sample::<f64, _>(StandardNormal))).collect()
    }

    pub(crate) fn audio(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        Self::vector(&self.audio_means[k], rng)
    }

    pub(crate) fn video(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        Self::vector(&self.video_means[k], rng)
    }
}

/// Near-identity channel mixing for one subject.
pub(crate) fn subject_mixing(channels: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..channels * channels)
        .map(|i| {
            let eye = if i / channels == i % channels { 1.0 } else { 0.0 };
            eye + 0.2 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Balanced labels for `n` segments, shuffled.
pub(crate) fn balanced_labels(n: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(rng);
    labels
}

pub fn make_synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    for (name, v) in [
        ("num_subjects", cfg.num_subjects),
        ("dialogues_per_subject", cfg.dialogues_per_subject),
        ("segments_per_dialogue", cfg.segments_per_dialogue),
        ("num_classes", cfg.num_classes),
        ("channels", cfg.channels),
        ("audio_dim", cfg.audio_dim),
        ("video_dim", cfg.video_dim),
    ] {
        if v == 0 {
            return Err(Error::Argument(format!("{name} must be at least 1")));
        }
    }
    if cfg.window_len < 2 {
        return Err(Error::Argument("window_len must be at least 2".into()));
    }
    if !(cfg.class_separation >= 0.0 && cfg.class_separation.is_finite()) {
        return Err(Error::Argument(format!("class_separation {}", cfg.class_separation)));
    }
    if !(cfg.sampling_rate_hz > 0.0) {
        return Err(Error::Argument(format!("sampling rate {}", cfg.sampling_rate_hz)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ClassModel::new(cfg.num_classes, cfg.audio_dim, cfg.video_dim, cfg.class_separation, &mut rng);
    let class_names: Vec<String> = (0..cfg.num_classes).map(|k| format!("class{k}")).collect();

    let mut segments = Vec::new();
    for s in 0..cfg.num_subjects {
        let subject_id = format!("s{s:02}");
        let mixing = subject_mixing(cfg.channels, &mut rng);
        let labels = balanced_labels(cfg.dialogues_per_subject * cfg.segments_per_dialogue, cfg.num_classes, &mut rng);
        for d in 0..cfg.dialogues_per_subject {
            for p in 0..cfg.segments_per_dialogue {
                let k = labels[d * cfg.segments_per_dialogue + p];
                segments.push(ConversationSegment {
                    subject_id: subject_id.clone(),
                    dialogue_id: format!("d{d:03}"),
                    position: p,
                    eeg: model.eeg(k, cfg.window_len, cfg.sampling_rate_hz, &mixing, cfg.channels, &mut rng),
                    audio: model.audio(k, &mut rng),
                    video: model.video(k, &mut rng),
                    label: EmotionLabel { class_index: k, class_name: class_names[k].clone() },
                });
            }
        }
    }
    let manifest = DatasetManifest {
        name: cfg.name.clone(),
        sampling_rate_hz: cfg.sampling_rate_hz,
        channels: cfg.channels,
        window_len: cfg.window_len,
        audio_dim: cfg.audio_dim,
        video_dim: cfg.video_dim,
        num_classes: cfg.num_classes,
        class_names,
        modalities: ModalityNames::default(),
        subjects: vec![],
        segments: vec![],
    };
    Dataset::from_segments(manifest, segments)
}
