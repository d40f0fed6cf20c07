//! Two-layer classification head, training loss and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, Linear, ModelRng};
use crate::tensor::Tensor;

/// Smallest probability fed to the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Classifier {
    pub hidden: Linear,
    pub out: Linear,
}

/// Tape handles of one classifier pass.
pub struct ClassifierOutput {
    pub hidden: Var,
    pub logits: Var,
    pub probabilities: Var,
}

/// Plain-number predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch {
    pub probabilities: Tensor,
    pub predicted: Vec<usize>,
    pub hidden: Tensor,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, in_dim: usize, hidden: usize, classes: usize, rng: &mut ModelRng) -> Self {
        Self {
            hidden: Linear::new(store, "classifier/hidden", in_dim, hidden, true, rng),
            out: Linear::new(store, "classifier/out", hidden, classes, true, rng),
        }
    }

    /// `[N, in]` features to class probabilities; dropout on the hidden layer
    /// only when `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: Var,
        p_drop: f64,
        rng: Option<&mut ModelRng>,
    ) -> Result<ClassifierOutput> {
        let h = self.hidden.forward(g, store, f)?;
        let hidden = g.relu(h);
        let dropped = dropout(g, hidden, p_drop, rng)?;
        let logits = self.out.forward(g, store, dropped)?;
        let probabilities = g.softmax(logits);
        Ok(ClassifierOutput { hidden, logits, probabilities })
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(p: &Tensor) -> Vec<usize> {
    let k = *p.shape().last().unwrap_or(&1);
    p.data()
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn predictions(g: &Graph, out: &ClassifierOutput) -> PredictionBatch {
    let probabilities = g.value(out.probabilities).clone();
    PredictionBatch { predicted: argmax_rows(&probabilities), probabilities, hidden: g.value(out.hidden).clone() }
}

/// Mean of `−ln max(P[y], floor)` over rows.
pub fn cross_entropy(g: &mut Graph, probabilities: Var, labels: &[usize]) -> Result<Var> {
    let picked = g.pick_last(probabilities, labels)?;
    let safe = g.clamp_min(picked, PROB_FLOOR);
    let logs = g.ln(safe);
    let mean = g.mean_all(logs);
    Ok(g.scale(mean, -1.0))
}

/// Euclidean norm of every given parameter node, taken jointly.
pub fn param_norm(g: &mut Graph, params: &[Var]) -> Result<Var> {
    let mut total = g.constant(Tensor::scalar(0.0));
    for &p in params {
        let sq = g.square(p);
        let s = g.sum_all(sq);
        total = g.add(total, s)?;
    }
    Ok(g.sqrt(total))
}

/// Cross-entropy plus `lambda · ‖θ‖₂` over `params`.
pub fn loss(g: &mut Graph, probabilities: Var, labels: &[usize], params: &[Var], lambda: f64) -> Result<Var> {
    let ce = cross_entropy(g, probabilities, labels)?;
    if lambda == 0.0 || params.is_empty() {
        return Ok(ce);
    }
    let norm = param_norm(g, params)?;
    let reg = g.scale(norm, lambda);
    g.add(ce, reg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Per-class F1 averaged with support weights.
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Argument("metrics need at least one prediction".into()));
        }
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let mut per_class_f1 = Vec::with_capacity(k);
        let mut weighted = 0.0;
        for c in 0..k {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let denom = support as f64 + predicted as f64;
            let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
            per_class_f1.push(f1);
            weighted += f1 * support as f64;
        }
        Ok(Self {
            accuracy: correct as f64 / total as f64,
            weighted_f1: weighted / total as f64,
            macro_f1: per_class_f1.iter().sum::<f64>() / k.max(1) as f64,
            per_class_f1,
            confusion,
            count: total,
        })
    }
}

pub fn confusion_matrix(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Argument(format!("class index {} out of {num_classes}", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn metrics(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    if predicted.is_empty() {
        return Err(Error::Argument("metrics need at least one prediction".into()));
    }
    Metrics::from_confusion(confusion_matrix(predicted, truth, num_classes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn hand_computed_two_class_example() {
        let m = metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class_f1[1] - 0.8).abs() < 1e-12);
        assert!((m.weighted_f1 - 0.7333).abs() < 1e-4);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 2]]);
        let perfect = metrics(&[2, 0, 1], &[2, 0, 1], 3).unwrap();
        assert_eq!((perfect.accuracy, perfect.weighted_f1), (1.0, 1.0));
        assert_eq!(metrics(&[1, 0], &[0, 1], 2).unwrap().accuracy, 0.0);
        assert!(metrics(&[], &[], 2).is_err());
    }

    #[test]
    fn zero_output_layer_is_uniform_and_picks_class_zero() {
        let mut store = ParamStore::new();
        let mut rng = ModelRng::seed_from_u64(0);
        let c = Classifier::new(&mut store, 6, 4, 3, &mut rng);
        *store.get_mut(c.out.weight) = Tensor::zeros(&[4, 3]);
        *store.get_mut(c.out.bias.unwrap()) = Tensor::zeros(&[3]);
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_fn(&[2, 6], |i| i as f64));
        let out = c.forward(&mut g, &store, f, 0.5, None).unwrap();
        let p = predictions(&g, &out);
        assert!(p.probabilities.data().iter().all(|&v| v == 1.0 / 3.0));
        assert_eq!(p.predicted, vec![0, 0]);
    }

    #[test]
    fn softmax_of_two_and_zero() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap());
        let p = g.softmax(l);
        assert!((g.value(p).data()[0] - 0.8808).abs() < 1e-4);
        assert!((g.value(p).data()[1] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn loss_closed_forms() {
        let mut g = Graph::new();
        let onehot = g.constant(Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
        let l = loss(&mut g, onehot, &[1, 0], &[], 0.0).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let uniform = g.constant(Tensor::full(&[4, 5], 0.2));
        let l = loss(&mut g, uniform, &[0, 1, 2, 4], &[], 0.0).unwrap();
        assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);
        let zero = g.constant(Tensor::zeros(&[3, 3]));
        let l = loss(&mut g, uniform, &[0, 1, 2, 4], &[zero], 1e-3).unwrap();
        assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);
        // L2 norm, not its square
        let p = g.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let l = loss(&mut g, uniform, &[0, 1, 2, 4], &[p], 0.1).unwrap();
        assert!((g.value(l).item() - 5f64.ln() - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_come_from_the_confusion_matrix(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = metrics(&p, &t, 4).unwrap();
            let again = Metrics::from_confusion(m.confusion.clone()).unwrap();
            prop_assert_eq!(&m, &again);
            let correct = p.iter().zip(&t).filter(|(a, b)| a == b).count();
            prop_assert!((m.accuracy - correct as f64 / p.len() as f64).abs() < 1e-15);
        }

        #[test]
        fn argmax_ignores_row_shifts(row in proptest::collection::vec(-5.0f64..5.0, 2..7), shift in -100.0f64..100.0) {
            let k = row.len();
            let a = Tensor::new(vec![1, k], row.clone()).unwrap();
            let b = Tensor::new(vec![1, k], row.iter().map(|v| v + shift).collect()).unwrap();
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a), g.constant(b));
            let (pa, pb) = (g.softmax(va), g.softmax(vb));
            prop_assert!(g.value(pa).max_abs_diff(g.value(pb)) < 1e-12);
            prop_assert!((g.value(pa).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
