//! Small layer helpers shared by the model components.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub type ModelRng = ChaCha8Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Uniform `±1/√fan_in` initialization.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut ModelRng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Affine map `x·W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ModelRng,
    ) -> Self {
        let weight = store.add(format!("{name}/weight"), fan_in_uniform(&[in_dim, out_dim], in_dim, rng));
        let bias = bias.then(|| store.add(format!("{name}/bias"), fan_in_uniform(&[out_dim], in_dim, rng)));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w, false)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bcast(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Normalizes over the last axis without an affine transform.
pub fn layer_norm(g: &mut Graph, x: Var) -> Result<Var> {
    let n = *g.shape(x).last().unwrap_or(&1);
    let axis = g.shape(x).len() - 1;
    let sum = g.sum_axis(x, axis)?;
    let neg_mean = g.scale(sum, -1.0 / n as f64);
    let centered = g.add_prefix(x, neg_mean)?;
    let sq = g.square(centered);
    let sq_sum = g.sum_axis(sq, axis)?;
    let var = g.scale(sq_sum, 1.0 / n as f64);
    let var = g.add_scalar(var, LAYER_NORM_EPS);
    let std = g.sqrt(var);
    let inv = g.recip(std);
    g.mul_prefix(centered, inv)
}

/// Layer norm over the last axis with learned gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}/gain"), Tensor::full(&[dim], 1.0)),
            shift: store.add(format!("{name}/shift"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = layer_norm(g, x)?;
        let gain = g.param(store, self.gain);
        let shift = g.param(store, self.shift);
        let y = g.mul_bcast(y, gain)?;
        g.add_bcast(y, shift)
    }
}

/// Scaled dot-product attention over `[g, t, k]` queries and `[g, s, k]` keys.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let dk = *g.shape(q).last().unwrap_or(&1);
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = g.softmax(scores);
    g.bmm(weights, v, false)
}

/// Training-time inverted dropout; identity when `rng` is `None` or `p == 0`.
pub fn dropout(g: &mut Graph, x: Var, p: f64, rng: Option<&mut ModelRng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let shape = g.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
    let m = g.constant(mask);
    g.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layer_norm_moments() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 40], |i| (i as f64 * 0.91).sin() * (1 + i / 40) as f64 + 2.0));
        let y = layer_norm(&mut g, x).unwrap();
        for row in g.value(y).data().chunks(40) {
            let mean = row.iter().sum::<f64>() / 40.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[4, 4], 2.0));
        assert_eq!(dropout(&mut g, x, 0.5, None).unwrap(), x);
        let mut rng = ModelRng::seed_from_u64(1);
        let y = dropout(&mut g, x, 0.5, Some(&mut rng)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0 || v == 4.0));
    }
}
