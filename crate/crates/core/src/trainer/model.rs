use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::config::{Modality, TrainConfig};
use crate::abema::{Abema, NormalizeProject, SignalShape};
use crate::autograd::{Graph, ParamStore, Var};
use crate::classifier::{Classifier, ClassifierOutput};
use crate::data::{Dataset, DialogueRef};
use crate::encoders::{BiGru, EegEncoderKind, VectorEncoder};
use crate::error::{Error, Result};
use crate::hypergraph::{build_hypergraph, fuse_concat, Hypergraph};
use crate::nn::{dropout, ModelRng};
use crate::tensor::Tensor;

/// Data dimensions a model is built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub channels: usize,
    pub window_len: usize,
    pub sampling_rate_hz: f64,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub subjects: Vec<String>,
}

impl ModelShape {
    pub fn of(ds: &Dataset) -> Self {
        let m = &ds.manifest;
        Self {
            channels: m.channels,
            window_len: m.window_len,
            sampling_rate_hz: m.sampling_rate_hz,
            audio_dim: m.audio_dim,
            video_dim: m.video_dim,
            num_classes: m.num_classes,
            class_names: m.class_names.clone(),
            subjects: m.subjects.clone(),
        }
    }

    /// Fails when `ds` cannot be fed to a model of this shape.
    pub fn check(&self, ds: &Dataset) -> Result<()> {
        let m = &ds.manifest;
        let ours = (self.channels, self.window_len, self.audio_dim, self.video_dim, self.num_classes);
        let theirs = (m.channels, m.window_len, m.audio_dim, m.video_dim, m.num_classes);
        if ours != theirs {
            return Err(Error::Config(format!(
                "model expects (C, L, d_a, d_v, classes) = {ours:?}, dataset `{}` has {theirs:?}",
                m.name
            )));
        }
        if (self.sampling_rate_hz - m.sampling_rate_hz).abs() > 1e-9 * self.sampling_rate_hz {
            return Err(Error::Config(format!(
                "model built for {} Hz, dataset sampled at {} Hz",
                self.sampling_rate_hz, m.sampling_rate_hz
            )));
        }
        Ok(())
    }
}

pub enum Mode<'a> {
    Train(&'a mut ModelRng),
    Eval,
}

/// Tape handles for one batch of dialogues.
pub struct BatchOutput {
    /// Dataset indices in row order.
    pub segments: Vec<usize>,
    pub labels: Vec<usize>,
    /// Per-modality `[B, d]` node inputs, in canonical modality order.
    pub embeddings: Vec<(Modality, Var)>,
    /// `[B, m·d]` after hypergraph fusion.
    pub fused: Var,
    pub head: ClassifierOutput,
}

#[derive(Clone, Debug)]
pub struct HyperMml {
    pub config: TrainConfig,
    pub shape: ModelShape,
    modalities: Vec<Modality>,
    abema: Option<Abema>,
    norm: Option<NormalizeProject>,
    gru: Option<BiGru>,
    audio: Option<VectorEncoder>,
    video: Option<VectorEncoder>,
    hypergraph: Hypergraph,
    classifier: Classifier,
}

impl HyperMml {
    /// Builds the model and registers freshly initialized parameters in `store`.
    pub fn new(config: &TrainConfig, shape: ModelShape, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ModelRng::seed_from_u64(config.seed);
        let modalities = config.active_modalities();
        let d = config.d;
        let has = |m: Modality| modalities.contains(&m);

        let (mut abema, mut norm, mut gru) = (None, None, None);
        if has(Modality::Eeg) {
            let signal = SignalShape {
                channels: shape.channels,
                window_len: shape.window_len,
                sampling_rate_hz: shape.sampling_rate_hz,
            };
            abema = Some(Abema::new(store, config.abema(), signal, &shape.subjects, &mut rng)?);
            let project = (config.eeg_encoder == EegEncoderKind::Projection).then_some(d);
            norm = Some(NormalizeProject::new(store, signal, project, &mut rng));
            if config.eeg_encoder == EegEncoderKind::Bigru {
                gru = Some(BiGru::new(store, "encoders/eeg", shape.channels, d, &mut rng));
            }
        }
        let audio = has(Modality::Audio).then(|| VectorEncoder::new(store, "audio", shape.audio_dim, d, &mut rng));
        let video = has(Modality::Video).then(|| VectorEncoder::new(store, "video", shape.video_dim, d, &mut rng));
        let hypergraph = Hypergraph::new(store, config.hypergraph(), modalities.len(), d, &mut rng)?;
        let classifier =
            Classifier::new(store, modalities.len() * d, config.hidden_width(), shape.num_classes, &mut rng);
        Ok(Self { config: config.clone(), shape, modalities, abema, norm, gru, audio, video, hypergraph, classifier })
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn hypergraph(&self) -> &Hypergraph {
        &self.hypergraph
    }

    pub fn abema(&self) -> Option<&Abema> {
        self.abema.as_ref()
    }

    fn eeg_embedding(&self, g: &mut Graph, store: &ParamStore, ds: &Dataset, rows: &[usize]) -> Result<Var> {
        let (abema, norm) = (self.abema.as_ref().unwrap(), self.norm.as_ref().unwrap());
        let (c, l) = (self.shape.channels, self.shape.window_len);
        let mut data = Vec::with_capacity(rows.len() * c * l);
        for &i in rows {
            data.extend_from_slice(ds.segments[i].eeg.data());
        }
        let eeg = g.constant(Tensor::new(vec![rows.len(), c, l], data)?);
        let subjects: Vec<&str> = rows.iter().map(|&i| ds.segments[i].subject_id.as_str()).collect();
        let out = abema.forward(g, store, eeg, &subjects, self.config.unseen_subject_identity)?;
        let (normed, projected) = norm.forward(g, store, out.embedding)?;
        match (&self.gru, projected) {
            (Some(gru), _) => gru.forward(g, store, normed),
            (None, Some(p)) => Ok(p),
            (None, None) => Err(Error::Config("no EEG encoder configured".into())),
        }
    }

    fn vector_input(&self, g: &mut Graph, ds: &Dataset, rows: &[usize], audio: bool) -> Result<Var> {
        let dim = if audio { self.shape.audio_dim } else { self.shape.video_dim };
        let mut data = Vec::with_capacity(rows.len() * dim);
        for &i in rows {
            let s = &ds.segments[i];
            data.extend_from_slice(if audio { &s.audio } else { &s.video });
        }
        Ok(g.constant(Tensor::new(vec![rows.len(), dim], data)?))
    }

    /// Encodes every segment of `dialogues`, fuses each dialogue on its
    /// hypergraph and classifies every segment.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ds: &Dataset,
        dialogues: &[DialogueRef],
        mode: Mode<'_>,
    ) -> Result<BatchOutput> {
        let rows: Vec<usize> = dialogues.iter().flat_map(|d| d.segments.iter().copied()).collect();
        if rows.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let labels = rows.iter().map(|&i| ds.segments[i].label.class_index).collect();
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let p = self.config.dropout;

        let mut embeddings = Vec::with_capacity(self.modalities.len());
        for &m in &self.modalities {
            let v = match m {
                Modality::Eeg => self.eeg_embedding(g, store, ds, &rows)?,
                Modality::Audio => {
                    let x = self.vector_input(g, ds, &rows, true)?;
                    self.audio.as_ref().unwrap().forward(g, store, x)?
                }
                Modality::Video => {
                    let x = self.vector_input(g, ds, &rows, false)?;
                    self.video.as_ref().unwrap().forward(g, store, x)?
                }
            };
            let v = dropout(g, v, p, rng.as_deref_mut())?;
            embeddings.push((m, v));
        }

        let (m, d) = (self.modalities.len(), self.config.d);
        let mut fused_parts = Vec::with_capacity(dialogues.len());
        let mut start = 0;
        for dl in dialogues {
            let n = dl.segments.len();
            let parts: Vec<Var> =
                embeddings.iter().map(|(_, v)| g.slice(*v, 0, start, start + n)).collect::<Result<_>>()?;
            let joined = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
            let nodes = g.reshape(joined, &[n * m, d])?;
            let structure = build_hypergraph(n, m)?;
            let out = self.hypergraph.forward(g, store, &structure, nodes)?;
            fused_parts.push(fuse_concat(g, out, m)?);
            start += n;
        }
        let fused = if fused_parts.len() == 1 { fused_parts[0] } else { g.concat(&fused_parts, 0)? };
        let head = self.classifier.forward(g, store, fused, p, rng)?;
        Ok(BatchOutput { segments: rows, labels, embeddings, fused, head })
    }
}
