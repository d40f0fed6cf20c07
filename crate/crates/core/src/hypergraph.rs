//! Dialogue hypergraph fusion.
//!
//! A dialogue of `N` segments and `m` modalities has `m·N` nodes, numbered
//! segment-major (`i·m + x`). Intra edges join the modalities of one segment,
//! inter edges join one modality across all segments. Node and edge weights
//! are positive through a softplus with a small floor.

use serde::{Deserialize, Serialize};

use crate::autograd::{softplus, softplus_inv, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, ModelRng};
use crate::tensor::Tensor;

pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypergraphConfig {
    pub layers: usize,
    /// Intra-edge weights are indexed by segment position, capped here.
    pub max_segments: usize,
    pub node_weights: bool,
    pub hyperedge_weights: bool,
    pub layer_transform: bool,
    pub leaky_slope: f64,
}

impl Default for HypergraphConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            max_segments: 16,
            node_weights: true,
            hyperedge_weights: true,
            layer_transform: false,
            leaky_slope: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    /// Joins every modality of segment `i`.
    Intra(usize),
    /// Joins modality `x` across all segments.
    Inter(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypergraphStructure {
    pub segments: usize,
    pub modalities: usize,
    /// Edge kinds: `N` intra edges then `m` inter edges.
    pub edges: Vec<EdgeKind>,
}

impl HypergraphStructure {
    pub fn num_nodes(&self) -> usize {
        self.segments * self.modalities
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, segment: usize, modality: usize) -> usize {
        segment * self.modalities + modality
    }

    pub fn members(&self, edge: usize) -> Vec<usize> {
        match self.edges[edge] {
            EdgeKind::Intra(i) => (0..self.modalities).map(|x| self.node(i, x)).collect(),
            EdgeKind::Inter(x) => (0..self.segments).map(|i| self.node(i, x)).collect(),
        }
    }

    /// `[2m, nodes·edges]`: row `x` marks intra memberships of modality `x`,
    /// row `m + x` its inter membership. Multiplying node weights by this gives Ĥ.
    fn patterns(&self) -> Tensor {
        let (m, nv, ne) = (self.modalities, self.num_nodes(), self.num_edges());
        let mut p = Tensor::zeros(&[2 * m, nv * ne]);
        for i in 0..self.segments {
            for x in 0..m {
                let v = self.node(i, x);
                p.data_mut()[x * nv * ne + v * ne + i] = 1.0;
                p.data_mut()[(m + x) * nv * ne + v * ne + self.segments + x] = 1.0;
            }
        }
        p
    }
}

pub fn build_hypergraph(segments: usize, modalities: usize) -> Result<HypergraphStructure> {
    if segments == 0 || modalities == 0 {
        return Err(Error::Argument(format!("hypergraph needs N ≥ 1 and m ≥ 1, got N={segments}, m={modalities}")));
    }
    let edges = (0..segments).map(EdgeKind::Intra).chain((0..modalities).map(EdgeKind::Inter)).collect();
    Ok(HypergraphStructure { segments, modalities, edges })
}

/// Incidence and degrees for given positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedIncidence {
    /// `[nodes, edges]`.
    pub h: Tensor,
    pub edge_weights: Vec<f64>,
    pub node_degree: Vec<f64>,
    pub edge_degree: Vec<f64>,
}

/// `node_weights` is `[intra per modality.., inter per modality..]`;
/// `edge_weights` has one entry per edge.
pub fn weighted_incidence(
    s: &HypergraphStructure,
    node_weights: &[f64],
    edge_weights: &[f64],
) -> Result<WeightedIncidence> {
    let m = s.modalities;
    if node_weights.len() != 2 * m || edge_weights.len() != s.num_edges() {
        return Err(Error::Shape(format!(
            "{} node and {} edge weights for m={m}, {} edges",
            node_weights.len(),
            edge_weights.len(),
            s.num_edges()
        )));
    }
    let (nv, ne) = (s.num_nodes(), s.num_edges());
    let mut h = Tensor::zeros(&[nv, ne]);
    for (e, kind) in s.edges.iter().enumerate() {
        let w = match kind {
            EdgeKind::Intra(_) => 0,
            EdgeKind::Inter(_) => m,
        };
        for v in s.members(e) {
            h.data_mut()[v * ne + e] = node_weights[w + v % m];
        }
    }
    let node_degree = (0..nv).map(|v| (0..ne).map(|e| h.data()[v * ne + e] * edge_weights[e]).sum()).collect();
    let edge_degree = (0..ne).map(|e| (0..nv).map(|v| h.data()[v * ne + e]).sum()).collect();
    Ok(WeightedIncidence { h, edge_weights: edge_weights.to_vec(), node_degree, edge_degree })
}

/// Two-phase message passing without matrices: node→edge weighted mean,
/// then edge→node weighted mean. `features` is `[nodes, d]`.
pub fn propagate_reference(inc: &WeightedIncidence, features: &Tensor) -> Tensor {
    let (nv, ne) = (inc.h.shape()[0], inc.h.shape()[1]);
    let d = features.shape()[1];
    let mut edge_msg = vec![0.0; ne * d];
    for e in 0..ne {
        for v in 0..nv {
            let w = inc.h.data()[v * ne + e];
            for k in 0..d {
                edge_msg[e * d + k] += w * features.data()[v * d + k] / inc.edge_degree[e];
            }
        }
    }
    Tensor::from_fn(&[nv, d], |idx| {
        let (v, k) = (idx / d, idx % d);
        (0..ne).map(|e| inc.h.data()[v * ne + e] * inc.edge_weights[e] * edge_msg[e * d + k]).sum::<f64>()
            / inc.node_degree[v]
    })
}

/// Learnable weights and propagation for dialogues with a fixed modality count.
#[derive(Clone, Debug)]
pub struct Hypergraph {
    pub config: HypergraphConfig,
    pub modalities: usize,
    node_weights: Option<ParamId>,
    intra_weights: Option<ParamId>,
    inter_weights: Option<ParamId>,
    transforms: Vec<Linear>,
}

fn unit_raw(n: usize) -> Tensor {
    Tensor::full(&[n], softplus_inv(1.0 - WEIGHT_FLOOR))
}

impl Hypergraph {
    pub fn new(
        store: &mut ParamStore,
        config: HypergraphConfig,
        modalities: usize,
        d: usize,
        rng: &mut ModelRng,
    ) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::Config("hypergraph layers must be at least 1".into()));
        }
        if config.max_segments == 0 || modalities == 0 {
            return Err(Error::Config("max_segments and modality count must be positive".into()));
        }
        let node_weights = config.node_weights.then(|| store.add("hypergraph/node_weights", unit_raw(2 * modalities)));
        let (intra_weights, inter_weights) = if config.hyperedge_weights {
            (
                Some(store.add("hypergraph/intra_edge_weights", unit_raw(config.max_segments))),
                Some(store.add("hypergraph/inter_edge_weights", unit_raw(modalities))),
            )
        } else {
            (None, None)
        };
        let transforms = if config.layer_transform {
            (0..config.layers).map(|l| Linear::new(store, &format!("hypergraph/layer{l}"), d, d, true, rng)).collect()
        } else {
            Vec::new()
        };
        Ok(Self { config, modalities, node_weights, intra_weights, inter_weights, transforms })
    }

    fn positive(g: &mut Graph, store: &ParamStore, id: Option<ParamId>, n: usize) -> Var {
        match id {
            Some(id) => {
                let raw = g.param(store, id);
                let sp = g.softplus(raw);
                g.add_scalar(sp, WEIGHT_FLOOR)
            }
            None => g.constant(Tensor::full(&[n], 1.0)),
        }
    }

    /// Current weights as plain numbers.
    pub fn weights(&self, store: &ParamStore, segments: usize) -> (Vec<f64>, Vec<f64>) {
        let value = |id: Option<ParamId>, n: usize| match id {
            Some(id) => store.get(id).data().iter().map(|&r| softplus(r) + WEIGHT_FLOOR).collect(),
            None => vec![1.0; n],
        };
        let nodes = value(self.node_weights, 2 * self.modalities);
        let intra = value(self.intra_weights, self.config.max_segments);
        let inter = value(self.inter_weights, self.modalities);
        let cap = self.config.max_segments - 1;
        let edges = (0..segments).map(|i| intra[i.min(cap)]).chain(inter).collect();
        (nodes, edges)
    }

    /// Ĥ `[nodes, edges]` and edge weights `[edges]` on the tape.
    pub fn incidence(&self, g: &mut Graph, store: &ParamStore, s: &HypergraphStructure) -> Result<(Var, Var)> {
        let m = self.modalities;
        if s.modalities != m {
            return Err(Error::Shape(format!("structure has {} modalities, model {m}", s.modalities)));
        }
        let alpha = Self::positive(g, store, self.node_weights, 2 * m);
        let alpha = g.reshape(alpha, &[1, 2 * m])?;
        let patterns = g.constant(s.patterns());
        let h = g.matmul(alpha, patterns, false)?;
        let h = g.reshape(h, &[s.num_nodes(), s.num_edges()])?;

        let intra = Self::positive(g, store, self.intra_weights, self.config.max_segments);
        let cap = self.config.max_segments - 1;
        let positions: Vec<usize> = (0..s.segments).map(|i| i.min(cap)).collect();
        let intra = g.index_select(intra, &positions)?;
        let inter = Self::positive(g, store, self.inter_weights, m);
        let we = g.concat(&[intra, inter], 0)?;
        Ok((h, we))
    }

    /// `L` rounds of `act(D_V⁻¹ Ĥ W_e D_E⁻¹ Ĥᵀ V)` on `[nodes, d]` features.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, s: &HypergraphStructure, nodes: Var) -> Result<Var> {
        let shape = g.shape(nodes).to_vec();
        if shape.len() != 2 || shape[0] != s.num_nodes() {
            return Err(Error::Shape(format!("expected [{}, d] node features, got {shape:?}", s.num_nodes())));
        }
        let (h, we) = self.incidence(g, store, s)?;
        let ht = g.permute(h, &[1, 0])?;
        let de = g.sum_axis(h, 0)?;
        let inv_de = g.recip(de);
        let edge_scale = g.mul(we, inv_de)?;
        let we_col = g.reshape(we, &[s.num_edges(), 1])?;
        let dv = g.matmul(h, we_col, false)?;
        let dv = g.reshape(dv, &[s.num_nodes()])?;
        let inv_dv = g.recip(dv);

        let mut v = nodes;
        for l in 0..self.config.layers {
            let msg = g.matmul(ht, v, false)?;
            let msg = g.mul_prefix(msg, edge_scale)?;
            let back = g.matmul(h, msg, false)?;
            let mut next = g.mul_prefix(back, inv_dv)?;
            if let Some(lin) = self.transforms.get(l) {
                next = lin.forward(g, store, next)?;
            }
            v = g.leaky_relu(next, self.config.leaky_slope);
        }
        Ok(v)
    }
}

/// `[N·m, d]` segment-major nodes to `[N, m·d]` rows `[v_i^1; …; v_i^m]`.
pub fn fuse_concat(g: &mut Graph, nodes: Var, modalities: usize) -> Result<Var> {
    let s = g.shape(nodes).to_vec();
    if s.len() != 2 || !s[0].is_multiple_of(modalities) {
        return Err(Error::Shape(format!("cannot split {s:?} into {modalities} modalities per segment")));
    }
    g.reshape(nodes, &[s[0] / modalities, modalities * s[1]])
}
