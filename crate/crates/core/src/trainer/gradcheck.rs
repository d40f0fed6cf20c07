//! Central finite differences against tape gradients on tiny shapes.
//!
//! The probed scalar is `Σ r⊙y + ½Σ y²` for a fixed random `r`, so affine
//! outputs give a quadratic whose central difference is exact up to rounding.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::abema::{Abema, AbemaConfig, NormalizeProject, SignalShape};
use crate::autograd::{Graph, ParamStore, Var};
use crate::classifier::{loss, Classifier};
use crate::encoders::{BiGru, VectorEncoder};
use crate::error::{Error, Result};
use crate::hypergraph::{build_hypergraph, Hypergraph, HypergraphConfig};
use crate::nn::ModelRng;
use crate::spectral::BandEdges;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const AFFINE_TOLERANCE: f64 = 1e-6;
/// Gradient norms below this compare absolutely. Some groups have an
/// identically zero gradient (a key bias shifts every score of a query
/// equally), where a ratio would only measure rounding noise.
pub const VANISHING_NORM: f64 = 1e-4;
pub const GRADCHECK_MODULES: [&str; 4] = ["abema", "encoders", "hypergraph", "classifier"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub scalars: usize,
    pub analytic_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, VANISHING_NORM)`.
    pub relative_error: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub module: String,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.relative_error < g.tolerance)
    }

    /// Groups at or above their tolerance.
    pub fn failures(&self) -> Vec<&GroupError> {
        self.groups.iter().filter(|g| g.relative_error >= g.tolerance).collect()
    }
}

type Forward<'a> = dyn Fn(&mut Graph, &ParamStore) -> Result<Var> + 'a;

fn probe(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let ry = g.mul(rv, y)?;
    let lin = g.sum_all(ry);
    let sq = g.square(y);
    let sq = g.sum_all(sq);
    let half = g.scale(sq, 0.5);
    g.add(lin, half)
}

/// Compares every parameter group of `store` touched by `f`.
fn check_store(
    store: &mut ParamStore,
    f: &Forward<'_>,
    affine: &[&str],
    prefix: &str,
    rng: &mut ModelRng,
) -> Result<Vec<GroupError>> {
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    let r = Tensor::from_fn(g.shape(y), |_| rng.random_range(-1.0..1.0));
    let l = probe(&mut g, y, &r)?;
    let grads = g.backward(l)?;
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let y = f(&mut g, store)?;
        let l = probe(&mut g, y, &r)?;
        Ok(g.value(l).item())
    };

    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.name(id).to_string();
        let n = store.get(id).len();
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.norm().max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt());
        let relative_error = diff / scale.max(VANISHING_NORM);
        if !relative_error.is_finite() {
            return Err(Error::Numeric(format!("gradient check of `{name}` produced {relative_error}")));
        }
        let tolerance = if affine.iter().any(|p| name.starts_with(p)) { AFFINE_TOLERANCE } else { GRADIENT_TOLERANCE };
        out.push(GroupError {
            name: format!("{prefix}{name}"),
            scalars: n,
            analytic_norm: analytic.norm(),
            relative_error,
            tolerance,
        });
    }
    Ok(out)
}

fn uniform(shape: &[usize], scale: f64, rng: &mut ModelRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Every group of the chosen module against finite differences.
pub fn gradient_check(module: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ModelRng::seed_from_u64(seed);
    let groups = match module {
        "abema" => {
            let mut groups = abema_groups(true, &mut rng, "")?;
            groups.extend(abema_groups(false, &mut rng, "ablated:")?);
            groups
        }
        "encoders" => encoder_groups(&mut rng)?,
        "hypergraph" => hypergraph_groups(&mut rng)?,
        "classifier" => classifier_groups(&mut rng)?,
        other => {
            return Err(Error::Lookup {
                kind: "module",
                name: format!("{other} (expected one of {})", GRADCHECK_MODULES.join(", ")),
            })
        }
    };
    Ok(GradCheckReport { module: module.to_string(), groups })
}

/// `B=2, C=4, L=16, d_k=8` at 128 Hz; the bins sit 8 Hz apart, so the band
/// edges are widened until every band holds at least one bin.
fn abema_groups(attention: bool, rng: &mut ModelRng, prefix: &str) -> Result<Vec<GroupError>> {
    let shape = SignalShape { channels: 4, window_len: 16, sampling_rate_hz: 128.0 };
    let config = AbemaConfig {
        d_k: 8,
        transformer_depth: 1,
        transformer_heads: 2,
        transformer_dim: 8,
        balance_alpha: 0.5,
        band_edges: BandEdges([(4.0, 12.0), (12.0, 20.0), (20.0, 28.0), (28.0, 44.0), (44.0, 64.0)]),
        intra_mca: attention,
        inter_mca: attention,
    };
    let mut store = ParamStore::new();
    let subjects = vec!["a".to_string(), "b".to_string()];
    let abema = Abema::new(&mut store, config, shape, &subjects, rng)?;
    let head = NormalizeProject::new(&mut store, shape, Some(4), rng);
    for name in subjects.iter().map(|s| format!("subject_bank/{s}")) {
        let id = store.id(&name).unwrap_or_else(|| unreachable!());
        let t = store.get_mut(id);
        for (v, p) in t.data_mut().iter_mut().zip(uniform(&[16], 0.1, rng).data()) {
            *v += p;
        }
    }
    let x = uniform(&[2, 4, 16], 1.0, rng);
    let f = |g: &mut Graph, store: &ParamStore| -> Result<Var> {
        let e = g.constant(x.clone());
        let out = abema.forward(g, store, e, &["a", "b"], false)?;
        let (normed, projected) = head.forward(g, store, out.embedding)?;
        let flat = g.reshape(normed, &[2, 64])?;
        g.concat(&[flat, projected.unwrap_or(flat)], 1)
    };
    check_store(&mut store, &f, &["fusion/project"], prefix, rng)
}

fn encoder_groups(rng: &mut ModelRng) -> Result<Vec<GroupError>> {
    let mut store = ParamStore::new();
    let audio = VectorEncoder::new(&mut store, "audio", 5, 4, rng);
    let gru = BiGru::new(&mut store, "encoders/eeg", 3, 4, rng);
    let xa = uniform(&[2, 5], 1.0, rng);
    let xe = uniform(&[2, 3, 6], 1.0, rng);
    let f = |g: &mut Graph, store: &ParamStore| -> Result<Var> {
        let a = g.constant(xa.clone());
        let a = audio.forward(g, store, a)?;
        let e = g.constant(xe.clone());
        let e = gru.forward(g, store, e)?;
        g.concat(&[a, e], 0)
    };
    check_store(&mut store, &f, &["encoders/audio", "encoders/eeg/out"], "", rng)
}

/// `N=2` segments, three modalities, `d=3`, two layers with transforms.
fn hypergraph_groups(rng: &mut ModelRng) -> Result<Vec<GroupError>> {
    let mut store = ParamStore::new();
    let config = HypergraphConfig { layers: 2, max_segments: 4, layer_transform: true, ..HypergraphConfig::default() };
    let hg = Hypergraph::new(&mut store, config, 3, 3, rng)?;
    // move the weights off their common initial value
    for id in store.ids().collect::<Vec<_>>() {
        if !store.name(id).contains("/layer") {
            let t = store.get_mut(id);
            for v in t.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    let s = build_hypergraph(2, 3)?;
    let x = uniform(&[6, 3], 1.0, rng);
    let f = |g: &mut Graph, store: &ParamStore| -> Result<Var> {
        let v = g.constant(x.clone());
        hg.forward(g, store, &s, v)
    };
    check_store(&mut store, &f, &[], "", rng)
}

/// Probabilities through the full training objective, L2 term included.
fn classifier_groups(rng: &mut ModelRng) -> Result<Vec<GroupError>> {
    let mut store = ParamStore::new();
    let clf = Classifier::new(&mut store, 6, 5, 3, rng);
    let x = uniform(&[4, 6], 1.0, rng);
    let labels = [0, 2, 1, 2];
    let f = |g: &mut Graph, store: &ParamStore| -> Result<Var> {
        let v = g.constant(x.clone());
        let out = clf.forward(g, store, v, 0.0, None)?;
        let params: Vec<Var> = store.ids().map(|id| g.param(store, id)).collect();
        let l = loss(g, out.probabilities, &labels, &params, 1e-2)?;
        let l = g.reshape(l, &[1])?;
        let p = flatten(g, out.probabilities)?;
        g.concat(&[l, p], 0)
    };
    check_store(&mut store, &f, &[], "", rng)
}

fn flatten(g: &mut Graph, v: Var) -> Result<Var> {
    let n = g.value(v).len();
    g.reshape(v, &[n])
}
