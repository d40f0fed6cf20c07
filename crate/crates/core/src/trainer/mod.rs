//! Training, evaluation, checkpoints and verification harnesses.

mod ablation;
mod adam;
mod checkpoint;
mod config;
mod gradcheck;
mod model;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var};
use crate::classifier::{argmax_rows, loss, metrics, Metrics};
use crate::data::{split_all_subjects, split_subject_wise, Dataset, DialogueRef, SegmentRef, Split};
use crate::error::{Error, Result};
use crate::nn::ModelRng;
use crate::report::{EvalReport, SubjectRow};
use crate::tensor::Tensor;

pub use ablation::{apply_variant, run_ablation, DEFAULT_VARIANTS};
pub use adam::{Adam, AdamState};
pub use checkpoint::{Checkpoint, META_FILE, OPTIMIZER_FILE, PARAMS_FILE};
pub use config::{AblationFlags, Modality, SplitSpec, TrainConfig};
pub use gradcheck::{
    gradient_check, GradCheckReport, GroupError, AFFINE_TOLERANCE, FD_STEP, GRADCHECK_MODULES, GRADIENT_TOLERANCE,
    VANISHING_NORM,
};
pub use model::{BatchOutput, HyperMml, Mode, ModelShape};

/// Dialogues per forward pass when no gradient is needed.
const EVAL_CHUNK: usize = 16;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective over the epoch's optimizer steps, weighted by segments.
    pub train_loss: f64,
    /// Eval-mode accuracy on the training side when `eval_train` is set,
    /// otherwise the running accuracy under dropout.
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
    pub eval_f1: Option<f64>,
}

/// Seeds the held-out split from the configuration.
pub fn resolve_split(config: &TrainConfig, ds: &Dataset) -> Result<Split> {
    let seed = config.effective_split_seed();
    match &config.split {
        SplitSpec::All { test_fraction } => split_all_subjects(ds, *test_fraction, seed),
        SplitSpec::Subject { subject, test_fraction } => split_subject_wise(ds, subject, *test_fraction, seed),
    }
}

/// Resolves `config.split` and trains on its training side.
pub fn train(config: &TrainConfig, ds: &Dataset) -> Result<Checkpoint> {
    let split = resolve_split(config, ds)?;
    train_with(config, ds, &split, |_| {})
}

/// Trains from fresh parameters, calling `on_epoch` after every epoch.
/// Parameters are rounded to f32 at the end so a saved checkpoint reloads
/// bit-for-bit.
pub fn train_with(
    config: &TrainConfig,
    ds: &Dataset,
    split: &Split,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    ds.validate()?;
    split.validate()?;
    let shape = ModelShape::of(ds);
    let mut store = ParamStore::new();
    let model = HyperMml::new(config, shape.clone(), &mut store)?;
    let train_dl = ds.group_dialogues(ds.resolve(&split.train)?);
    let test_dl = ds.group_dialogues(ds.resolve(&split.test)?);
    let mut opt = Adam::new(&store, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut shuffle = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut drop_rng = stream_rng(config.seed, DROPOUT_STREAM);

    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_dl.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut seen, mut correct) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<DialogueRef> = chunk.iter().map(|&i| train_dl[i].clone()).collect();
            let step = train_step(&model, &mut store, &mut opt, ds, &batch, &mut drop_rng, epoch)?;
            loss_sum += step.loss * step.count as f64;
            seen += step.count;
            correct += step.correct;
        }
        let train_accuracy = if config.eval_train {
            predict(&model, &store, ds, &train_dl)?.accuracy()
        } else {
            correct as f64 / seen.max(1) as f64
        };
        let due = config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let (eval_accuracy, eval_f1) = if due && !test_dl.is_empty() {
            let p = predict(&model, &store, ds, &test_dl)?;
            let m = p.metrics(shape.num_classes)?;
            (Some(m.accuracy), Some(m.weighted_f1))
        } else {
            (None, None)
        };
        let record =
            EpochRecord { epoch, train_loss: loss_sum / seen.max(1) as f64, train_accuracy, eval_accuracy, eval_f1 };
        on_epoch(&record);
        history.push(record);
    }
    store.round_to_f32();
    opt.state.round_to_f32();
    Ok(Checkpoint {
        config: config.clone(),
        shape,
        store,
        optimizer: opt.state,
        epoch: config.epochs,
        history,
        split: split.clone(),
    })
}

fn stream_rng(seed: u64, stream: u64) -> ModelRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

struct StepOutcome {
    loss: f64,
    count: usize,
    correct: usize,
}

fn train_step(
    model: &HyperMml,
    store: &mut ParamStore,
    opt: &mut Adam,
    ds: &Dataset,
    batch: &[DialogueRef],
    drop_rng: &mut ModelRng,
    epoch: usize,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, store, ds, batch, Mode::Train(drop_rng))?;
    let params: Vec<Var> = store.ids().map(|id| g.param(store, id)).collect();
    let objective = loss(&mut g, out.head.probabilities, &out.labels, &params, model.config.l2_lambda)?;
    let value = g.value(objective).item();
    if !value.is_finite() {
        return Err(Error::Divergence { epoch, msg: format!("loss is {value}") });
    }
    let grads = g.backward(objective)?;
    for (id, grad) in grads.params() {
        if let Some(t) = grad {
            if !t.is_finite() {
                return Err(Error::Divergence { epoch, msg: format!("non-finite gradient for `{}`", store.name(id)) });
            }
        }
    }
    opt.step(store, &grads);
    let predicted = argmax_rows(g.value(out.head.probabilities));
    let correct = predicted.iter().zip(&out.labels).filter(|(p, y)| p == y).count();
    Ok(StepOutcome { loss: value, count: out.labels.len(), correct })
}

/// Eval-mode outputs for a set of dialogues, in dialogue then position order.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub segments: Vec<usize>,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    /// `[n, classes]`.
    pub probabilities: Tensor,
}

impl Predictions {
    pub fn accuracy(&self) -> f64 {
        let correct = self.predicted.iter().zip(&self.labels).filter(|(p, y)| p == y).count();
        correct as f64 / self.labels.len().max(1) as f64
    }

    pub fn metrics(&self, num_classes: usize) -> Result<Metrics> {
        metrics(&self.predicted, &self.labels, num_classes)
    }
}

/// Dropout-free forward pass over `dialogues`.
pub fn predict(model: &HyperMml, store: &ParamStore, ds: &Dataset, dialogues: &[DialogueRef]) -> Result<Predictions> {
    let k = model.shape.num_classes;
    let (mut segments, mut labels, mut probs) = (Vec::new(), Vec::new(), Vec::new());
    for chunk in dialogues.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let out = model.forward(&mut g, store, ds, chunk, Mode::Eval)?;
        segments.extend(out.segments);
        labels.extend(out.labels);
        probs.extend_from_slice(g.value(out.head.probabilities).data());
    }
    let probabilities = Tensor::new(vec![segments.len(), k], probs)?;
    Ok(Predictions { predicted: argmax_rows(&probabilities), segments, labels, probabilities })
}

/// Which segments an evaluation covers.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalTarget {
    /// The checkpoint's own held-out side.
    Test,
    /// The checkpoint's own training side.
    Train,
    /// Every segment of the dataset.
    All,
    /// A freshly resolved split spec; its held-out side is evaluated.
    Spec(SplitSpec),
}

impl std::str::FromStr for EvalTarget {
    type Err = Error;

    /// `test`, `train`, `all` or a split spec such as `subject:s01:0.3`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "test" => EvalTarget::Test,
            "train" => EvalTarget::Train,
            "all" => EvalTarget::All,
            other => EvalTarget::Spec(other.parse()?),
        })
    }
}

impl std::fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalTarget::Test => f.write_str("test"),
            EvalTarget::Train => f.write_str("train"),
            EvalTarget::All => f.write_str("all"),
            EvalTarget::Spec(s) => write!(f, "{s}"),
        }
    }
}

fn target_indices(ckpt: &Checkpoint, ds: &Dataset, target: &EvalTarget) -> Result<Vec<usize>> {
    match target {
        EvalTarget::Test => ds.resolve(&ckpt.split.test),
        EvalTarget::Train => ds.resolve(&ckpt.split.train),
        EvalTarget::All => Ok((0..ds.len()).collect()),
        EvalTarget::Spec(spec) => {
            let cfg = TrainConfig { split: spec.clone(), ..ckpt.config.clone() };
            ds.resolve(&resolve_split(&cfg, ds)?.test)
        }
    }
}

/// Metrics overall and per subject. Parameters are only read.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset, target: &EvalTarget) -> Result<EvalReport> {
    let model = ckpt.model()?;
    ckpt.shape.check(ds)?;
    let indices = target_indices(ckpt, ds, target)?;
    if indices.is_empty() {
        return Err(Error::Argument(format!("evaluation target `{target}` selects no segments")));
    }
    let p = predict(&model, &ckpt.store, ds, &ds.group_dialogues(indices))?;
    let k = ckpt.shape.num_classes;
    let overall = p.metrics(k)?;

    let mut by_subject: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (row, &i) in p.segments.iter().enumerate() {
        let e = by_subject.entry(ds.segments[i].subject_id.as_str()).or_default();
        e.0.push(p.predicted[row]);
        e.1.push(p.labels[row]);
    }
    let mut per_subject = Vec::with_capacity(by_subject.len());
    for subject in &ds.manifest.subjects {
        if let Some((pred, truth)) = by_subject.get(subject.as_str()) {
            let m = metrics(pred, truth, k)?;
            per_subject.push(SubjectRow {
                subject: subject.clone(),
                count: m.count,
                accuracy: m.accuracy,
                f1: m.weighted_f1,
            });
        }
    }
    Ok(EvalReport {
        dataset: ds.manifest.name.clone(),
        split: target.to_string(),
        class_names: ckpt.shape.class_names.clone(),
        overall,
        per_subject,
    })
}

/// One segment's embeddings as fed to and returned by the fusion stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub segment: SegmentRef,
    pub label: usize,
    pub predicted: usize,
    /// `[v_eeg; v_audio; v_video]` after hypergraph fusion.
    pub fused: Vec<f64>,
    /// Encoder outputs keyed by modality name.
    pub modalities: BTreeMap<String, Vec<f64>>,
}

pub fn export_embeddings(ckpt: &Checkpoint, ds: &Dataset, target: &EvalTarget) -> Result<Vec<EmbeddingRow>> {
    let model = ckpt.model()?;
    ckpt.shape.check(ds)?;
    let dialogues = ds.group_dialogues(target_indices(ckpt, ds, target)?);
    let mut rows = Vec::new();
    for chunk in dialogues.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &ckpt.store, ds, chunk, Mode::Eval)?;
        let predicted = argmax_rows(g.value(out.head.probabilities));
        let fused = g.value(out.fused);
        for (r, &i) in out.segments.iter().enumerate() {
            let modalities =
                out.embeddings.iter().map(|(m, v)| (m.name().to_string(), g.value(*v).row(r).to_vec())).collect();
            rows.push(EmbeddingRow {
                segment: ds.segments[i].key(),
                label: out.labels[r],
                predicted: predicted[r],
                fused: fused.row(r).to_vec(),
                modalities,
            });
        }
    }
    Ok(rows)
}

/// One JSON object per line.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in history {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
