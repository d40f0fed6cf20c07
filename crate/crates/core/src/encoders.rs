//! Per-modality maps into the shared `d`-dimensional node space.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{fan_in_uniform, Linear, ModelRng};
use crate::tensor::Tensor;

/// How the normalized EEG features become a node embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EegEncoderKind {
    /// Bidirectional GRU over time, channels as step features.
    #[default]
    Bigru,
    /// Linear map of the time-averaged channels.
    Projection,
}

/// Affine map of a precomputed feature vector.
#[derive(Clone, Copy, Debug)]
pub struct VectorEncoder(pub Linear);

impl VectorEncoder {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, d: usize, rng: &mut ModelRng) -> Self {
        Self(Linear::new(store, &format!("encoders/{name}"), in_dim, d, true, rng))
    }

    /// `[B, in]` to `[B, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.0.in_dim {
            return Err(Error::Shape(format!("encoder expects [B, {}], got {s:?}", self.0.in_dim)));
        }
        self.0.forward(g, store, x)
    }
}

/// One direction of a GRU with gates ordered (reset, update, new).
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruCell {
    fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ModelRng) -> Self {
        let mut p = |n: &str, shape: &[usize]| store.add(format!("{name}/{n}"), fan_in_uniform(shape, hidden, rng));
        Self {
            w_ih: p("w_ih", &[input, 3 * hidden]),
            w_hh: p("w_hh", &[hidden, 3 * hidden]),
            b_ih: p("b_ih", &[3 * hidden]),
            b_hh: p("b_hh", &[3 * hidden]),
            hidden,
        }
    }

    /// Runs over `steps` of precomputed `[T, B, 3h]` input projections in the
    /// given order and returns the final `[B, h]` state.
    fn scan(&self, g: &mut Graph, store: &ParamStore, xi: Var, order: impl Iterator<Item = usize>) -> Result<Var> {
        let (b, h) = (g.shape(xi)[1], self.hidden);
        let w_hh = g.param(store, self.w_hh);
        let b_hh = g.param(store, self.b_hh);
        let mut state = g.constant(Tensor::zeros(&[b, h]));
        for t in order {
            let x = g.slice(xi, 0, t, t + 1)?;
            let x = g.reshape(x, &[b, 3 * h])?;
            let hh = g.matmul(state, w_hh, false)?;
            let hh = g.add_bcast(hh, b_hh)?;
            let gate = |g: &mut Graph, v: Var, k: usize| g.slice(v, 1, k * h, (k + 1) * h);
            let (xr, xz, xn) = (gate(g, x, 0)?, gate(g, x, 1)?, gate(g, x, 2)?);
            let (hr, hz, hn) = (gate(g, hh, 0)?, gate(g, hh, 1)?, gate(g, hh, 2)?);
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let rn = g.mul(r, hn)?;
            let n = g.add(xn, rn)?;
            let n = g.tanh(n);
            // h' = n + z ⊙ (h − n)
            let diff = g.sub(state, n)?;
            let zd = g.mul(z, diff)?;
            state = g.add(n, zd)?;
        }
        Ok(state)
    }
}

/// Bidirectional GRU whose final states are concatenated and mapped to `d`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
    pub out: Linear,
    pub input: usize,
}

/// Final states of both directions, each `[B, h]`.
pub struct BiGruStates {
    pub forward: Var,
    pub backward: Var,
}

impl BiGru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, d: usize, rng: &mut ModelRng) -> Self {
        let hidden = (d / 2).max(1);
        Self {
            forward_cell: GruCell::new(store, &format!("{name}/fwd"), input, hidden, rng),
            backward_cell: GruCell::new(store, &format!("{name}/bwd"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}/out"), 2 * hidden, d, true, rng),
            input,
        }
    }

    fn projections(&self, g: &mut Graph, store: &ParamStore, cell: &GruCell, steps: Var) -> Result<Var> {
        let (t, b, c) = (g.shape(steps)[0], g.shape(steps)[1], self.input);
        let flat = g.reshape(steps, &[t * b, c])?;
        let w = g.param(store, cell.w_ih);
        let bias = g.param(store, cell.b_ih);
        let x = g.matmul(flat, w, false)?;
        let x = g.add_bcast(x, bias)?;
        g.reshape(x, &[t, b, 3 * cell.hidden])
    }

    /// `[B, C, L]` read as `L` steps of `C` features.
    pub fn states(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<BiGruStates> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.input {
            return Err(Error::Shape(format!("recurrent encoder expects [B, {}, L], got {s:?}", self.input)));
        }
        let len = s[2];
        let steps = g.permute(x, &[2, 0, 1])?;
        let xf = self.projections(g, store, &self.forward_cell, steps)?;
        let xb = self.projections(g, store, &self.backward_cell, steps)?;
        let forward = self.forward_cell.scan(g, store, xf, 0..len)?;
        let backward = self.backward_cell.scan(g, store, xb, (0..len).rev())?;
        Ok(BiGruStates { forward, backward })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let st = self.states(g, store, x)?;
        let both = g.concat(&[st.forward, st.backward], 1)?;
        self.out.forward(g, store, both)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_vector_encoder_and_superposition() {
        let mut store = ParamStore::new();
        let mut rng = ModelRng::seed_from_u64(0);
        let enc = VectorEncoder::new(&mut store, "audio", 3, 3, &mut rng);
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = Tensor::new(vec![1, 3], vec![1.5, 0.25, -0.75]).unwrap();
        let mut g = Graph::new();
        let run = |g: &mut Graph, store: &ParamStore, t: Tensor| {
            let v = g.constant(t);
            let o = enc.forward(g, store, v).unwrap();
            g.value(o).clone()
        };
        let sum = Tensor::from_fn(&[1, 3], |i| x.data()[i] + y.data()[i]);
        let lhs = run(&mut g, &store, sum);
        let zero = run(&mut g, &store, Tensor::zeros(&[1, 3]));
        let (ex, ey) = (run(&mut g, &store, x.clone()), run(&mut g, &store, y));
        for i in 0..3 {
            assert!((lhs.data()[i] + zero.data()[i] - ex.data()[i] - ey.data()[i]).abs() < 1e-12);
        }
        assert_eq!(zero.data(), store.get(enc.0.bias.unwrap()).data());

        *store.get_mut(enc.0.weight) = Tensor::identity(3);
        *store.get_mut(enc.0.bias.unwrap()) = Tensor::zeros(&[3]);
        // parameters are cached per tape
        let mut g = Graph::new();
        assert_eq!(run(&mut g, &store, x.clone()), x);
        let bad = g.constant(Tensor::zeros(&[1, 4]));
        assert!(enc.forward(&mut g, &store, bad).is_err());
    }

    #[test]
    fn zero_input_with_zero_recurrent_biases_gives_out_bias() {
        let mut store = ParamStore::new();
        let mut rng = ModelRng::seed_from_u64(1);
        let gru = BiGru::new(&mut store, "encoders/eeg", 3, 6, &mut rng);
        for cell in [gru.forward_cell, gru.backward_cell] {
            *store.get_mut(cell.b_ih) = Tensor::zeros(&[9]);
            *store.get_mut(cell.b_hh) = Tensor::zeros(&[9]);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 7]));
        let y = gru.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), [2, 6]);
        let bias = store.get(gru.out.bias.unwrap()).data().to_vec();
        for row in g.value(y).data().chunks(6) {
            assert_eq!(row, &bias[..]);
        }
    }

    #[test]
    fn time_reversal_swaps_directions_under_tied_weights() {
        let mut store = ParamStore::new();
        let mut rng = ModelRng::seed_from_u64(2);
        let gru = BiGru::new(&mut store, "encoders/eeg", 2, 4, &mut rng);
        let (f, b) = (gru.forward_cell, gru.backward_cell);
        for (src, dst) in [(f.w_ih, b.w_ih), (f.w_hh, b.w_hh), (f.b_ih, b.b_ih), (f.b_hh, b.b_hh)] {
            *store.get_mut(dst) = store.get(src).clone();
        }
        // symmetric output map so the concatenation order does not matter
        let w = store.get(gru.out.weight).clone();
        *store.get_mut(gru.out.weight) = Tensor::from_fn(&[4, 4], |i| w.data()[i % 8]);
        let mut r = ModelRng::seed_from_u64(5);
        let x = Tensor::from_fn(&[1, 2, 9], |_| r.random_range(-1.0..1.0));
        let rev = Tensor::from_fn(&[1, 2, 9], |i| x.data()[(i / 9) * 9 + 8 - i % 9]);
        let mut g = Graph::new();
        let (a, c) = (g.constant(x), g.constant(rev));
        let sa = gru.states(&mut g, &store, a).unwrap();
        let sc = gru.states(&mut g, &store, c).unwrap();
        assert!(g.value(sa.forward).max_abs_diff(g.value(sc.backward)) < 1e-14);
        assert!(g.value(sa.backward).max_abs_diff(g.value(sc.forward)) < 1e-14);
        let ya = gru.forward(&mut g, &store, a).unwrap();
        let yc = gru.forward(&mut g, &store, c).unwrap();
        assert!(g.value(ya).max_abs_diff(g.value(yc)) < 1e-14);
    }
}
