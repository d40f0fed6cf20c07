//! On-disk layout: `manifest.json` plus little-endian `f32` blobs at
//! `segments/<subject>/<dialogue>/<position>.{eeg,aud,vid}.f32`.

use std::fs;
use std::path::Path;

use super::{ConversationSegment, Dataset, DatasetManifest, EmotionLabel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

pub(crate) fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::schema(path, format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect())
}

fn read_expect(path: &Path, expected: usize, what: &str) -> Result<Vec<f64>> {
    let v = read_f32(path)?;
    if v.len() != expected {
        return Err(Error::Shape(format!(
            "{}: {what} payload has {} values, header declares {expected}",
            path.display(),
            v.len()
        )));
    }
    Ok(v)
}

/// Writes the manifest and every payload under `dir`.
pub fn save_manifest(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (seg, meta) in dataset.segments.iter().zip(&dataset.manifest.segments) {
        let stem = dir.join(&meta.file);
        write_f32(&stem.with_extension("eeg.f32"), seg.eeg.data())?;
        write_f32(&stem.with_extension("aud.f32"), &seg.audio)?;
        write_f32(&stem.with_extension("vid.f32"), &seg.video)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&dataset.manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads and validates a dataset directory.
pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
    manifest.validate_header()?;
    let mut segments = Vec::with_capacity(manifest.segments.len());
    for meta in &manifest.segments {
        let stem = dir.join(&meta.file);
        let eeg = read_expect(&stem.with_extension("eeg.f32"), manifest.channels * manifest.window_len, "eeg")?;
        let audio = read_expect(&stem.with_extension("aud.f32"), manifest.audio_dim, "audio")?;
        let video = read_expect(&stem.with_extension("vid.f32"), manifest.video_dim, "video")?;
        let class_name = manifest
            .class_names
            .get(meta.label)
            .cloned()
            .ok_or_else(|| Error::schema(&path, format!("{}: label {} out of range", meta.file, meta.label)))?;
        segments.push(ConversationSegment {
            subject_id: meta.subject_id.clone(),
            dialogue_id: meta.dialogue_id.clone(),
            position: meta.position,
            eeg: Tensor::new(vec![manifest.channels, manifest.window_len], eeg)?,
            audio,
            video,
            label: EmotionLabel { class_index: meta.label, class_name },
        });
    }
    let ds = Dataset { manifest, segments };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_dataset, SynthConfig};

    fn small() -> Dataset {
        make_synthetic_dataset(&SynthConfig {
            num_subjects: 2,
            dialogues_per_subject: 2,
            segments_per_dialogue: 2,
            channels: 3,
            window_len: 32,
            audio_dim: 4,
            video_dim: 5,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        save_manifest(&ds, dir.path()).unwrap();
        assert_eq!(load_manifest(dir.path()).unwrap(), ds);
    }

    #[test]
    fn extra_channel_in_payload_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        save_manifest(&ds, dir.path()).unwrap();
        let stem = dir.path().join(&ds.manifest.segments[0].file);
        write_f32(&stem.with_extension("eeg.f32"), &vec![0.0; 4 * 32]).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_payload_and_bad_schema() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        save_manifest(&ds, dir.path()).unwrap();
        let stem = dir.path().join(&ds.manifest.segments[1].file);
        fs::remove_file(stem.with_extension("vid.f32")).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Io { .. })));

        fs::write(dir.path().join(MANIFEST_FILE), "{\"name\": 3}").unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Schema { .. })));
        assert!(matches!(load_manifest(dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
