//! Segments, dataset manifests and splits.

mod adapters;
pub(crate) mod io;
mod segment;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use adapters::{
    affec_from_trials, eav_from_trials, eav_stub, eav_stub_trials, load_trials, save_trials, EavStubConfig, RawTrial,
    TrialExport, EAV_CLASS_NAMES, TRIALS_FILE,
};
pub use io::{load_manifest, save_manifest, MANIFEST_FILE};
pub use segment::{segment_utterance, window_starts, window_trial_overlapping};
pub use split::{split_all_subjects, split_subject_wise, Split};
pub use synth::{make_synthetic_dataset, SynthConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionLabel {
    pub class_index: usize,
    pub class_name: String,
}

/// One fixed-length fragment of an utterance with all three modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversationSegment {
    pub subject_id: String,
    pub dialogue_id: String,
    pub position: usize,
    /// `C×L` samples.
    pub eeg: Tensor,
    pub audio: Vec<f64>,
    pub video: Vec<f64>,
    pub label: EmotionLabel,
}

impl ConversationSegment {
    pub fn key(&self) -> SegmentRef {
        SegmentRef {
            subject_id: self.subject_id.clone(),
            dialogue_id: self.dialogue_id.clone(),
            position: self.position,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub subject_id: String,
    pub dialogue_id: String,
    pub position: usize,
}

impl SegmentRef {
    /// Path of the segment's blobs relative to the dataset root, without extension.
    pub fn file_stem(&self) -> String {
        format!("segments/{}/{}/{}", self.subject_id, self.dialogue_id, self.position)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub file: String,
    pub subject_id: String,
    pub dialogue_id: String,
    pub position: usize,
    pub label: usize,
}

/// Names of the three modality slots. EAV-style data uses eeg/audio/video,
/// AFFEC-style data stores GSR and eye-tracking features in the vector slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityNames {
    pub eeg: String,
    pub audio: String,
    pub video: String,
}

impl Default for ModalityNames {
    fn default() -> Self {
        Self { eeg: "eeg".into(), audio: "audio".into(), video: "video".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub sampling_rate_hz: f64,
    pub channels: usize,
    pub window_len: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub modalities: ModalityNames,
    pub subjects: Vec<String>,
    pub segments: Vec<SegmentMeta>,
}

impl DatasetManifest {
    pub fn validate_header(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(Error::Argument(format!("sampling rate {}", self.sampling_rate_hz)));
        }
        for (name, v) in [
            ("channels", self.channels),
            ("window_len", self.window_len),
            ("audio_dim", self.audio_dim),
            ("video_dim", self.video_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Argument(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// A manifest together with every segment payload it references.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub segments: Vec<ConversationSegment>,
}

/// Segments of one dialogue, ordered by position.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueRef {
    pub subject_id: String,
    pub dialogue_id: String,
    /// Indices into [`Dataset::segments`].
    pub segments: Vec<usize>,
}

impl Dataset {
    /// Builds the manifest index from `segments` and checks every invariant.
    pub fn from_segments(mut manifest: DatasetManifest, segments: Vec<ConversationSegment>) -> Result<Self> {
        let mut subjects: Vec<String> = Vec::new();
        for s in &segments {
            if !subjects.contains(&s.subject_id) {
                subjects.push(s.subject_id.clone());
            }
        }
        manifest.subjects = subjects;
        manifest.segments = segments
            .iter()
            .map(|s| SegmentMeta {
                file: s.key().file_stem(),
                subject_id: s.subject_id.clone(),
                dialogue_id: s.dialogue_id.clone(),
                position: s.position,
                label: s.label.class_index,
            })
            .collect();
        let ds = Self { manifest, segments };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.validate_header()?;
        if m.segments.len() != self.segments.len() {
            return Err(Error::Shape(format!(
                "manifest lists {} segments, {} loaded",
                m.segments.len(),
                self.segments.len()
            )));
        }
        let mut positions: BTreeMap<(&str, &str), BTreeSet<usize>> = BTreeMap::new();
        for s in &self.segments {
            let what = s.key().file_stem();
            if s.eeg.shape() != [m.channels, m.window_len] {
                return Err(Error::Shape(format!(
                    "{what}: eeg is {:?}, manifest declares [{}, {}]",
                    s.eeg.shape(),
                    m.channels,
                    m.window_len
                )));
            }
            if !s.eeg.is_finite() || !s.audio.iter().chain(&s.video).all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("{what} contains NaN or Inf")));
            }
            if s.audio.len() != m.audio_dim || s.video.len() != m.video_dim {
                return Err(Error::Shape(format!(
                    "{what}: audio/video lengths {}/{} vs declared {}/{}",
                    s.audio.len(),
                    s.video.len(),
                    m.audio_dim,
                    m.video_dim
                )));
            }
            if s.label.class_index >= m.num_classes {
                return Err(Error::Argument(format!(
                    "{what}: label {} out of {} classes",
                    s.label.class_index, m.num_classes
                )));
            }
            if !m.subjects.contains(&s.subject_id) {
                return Err(Error::Lookup { kind: "subject", name: s.subject_id.clone() });
            }
            if !positions.entry((&s.subject_id, &s.dialogue_id)).or_default().insert(s.position) {
                return Err(Error::Argument(format!("{what}: duplicate position")));
            }
        }
        for ((subj, dlg), pos) in positions {
            if pos.iter().enumerate().any(|(i, &p)| i != p) {
                return Err(Error::Argument(format!(
                    "dialogue {subj}/{dlg}: positions {pos:?} are not contiguous from 0"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Dialogues in first-appearance order.
    pub fn dialogues(&self) -> Vec<DialogueRef> {
        self.group_dialogues((0..self.segments.len()).collect::<Vec<_>>())
    }

    /// Groups a subset of segment indices into dialogues, each sorted by position.
    pub fn group_dialogues(&self, indices: impl IntoIterator<Item = usize>) -> Vec<DialogueRef> {
        let mut order: Vec<(String, String)> = Vec::new();
        let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for i in indices {
            let s = &self.segments[i];
            let key = (s.subject_id.clone(), s.dialogue_id.clone());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(i);
        }
        order
            .into_iter()
            .map(|key| {
                let mut segs = groups.remove(&key).unwrap_or_default();
                segs.sort_by_key(|&i| self.segments[i].position);
                DialogueRef { subject_id: key.0, dialogue_id: key.1, segments: segs }
            })
            .collect()
    }

    /// Index of every segment by key.
    pub fn index(&self) -> BTreeMap<SegmentRef, usize> {
        self.segments.iter().enumerate().map(|(i, s)| (s.key(), i)).collect()
    }

    /// Resolves references to segment indices.
    pub fn resolve(&self, refs: &[SegmentRef]) -> Result<Vec<usize>> {
        let index = self.index();
        refs.iter()
            .map(|r| index.get(r).copied().ok_or_else(|| Error::Lookup { kind: "segment", name: r.file_stem() }))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.manifest.num_classes];
        for s in &self.segments {
            counts[s.label.class_index] += 1;
        }
        counts
    }
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        make_synthetic_dataset(&SynthConfig {
            num_subjects: 2,
            dialogues_per_subject: 2,
            segments_per_dialogue: 3,
            num_classes: 3,
            channels: 2,
            window_len: 16,
            audio_dim: 3,
            video_dim: 2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn gap_in_positions_is_rejected() {
        let mut ds = tiny();
        ds.segments[1].position = 7;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut ds = tiny();
        ds.segments[0].label.class_index = 3;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn dialogues_are_grouped_and_ordered() {
        let ds = tiny();
        let d = ds.dialogues();
        assert_eq!(d.len(), 4);
        for dl in &d {
            let pos: Vec<usize> = dl.segments.iter().map(|&i| ds.segments[i].position).collect();
            assert_eq!(pos, vec![0, 1, 2]);
        }
    }
}
