//! Subject-adaptive EEG encoder.
//!
//! Pipeline per sample: subject channel mixing, a channel-token transformer,
//! band-limited DE/PSD features, mutual-cross attention within each band
//! (channel tokens), cross attention across bands (band tokens), softmax band
//! importance, and a spectral reconstruction blended with the transformer
//! output. Every step is computed per sample, so outputs never depend on
//! batch composition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{attention, fan_in_uniform, layer_norm, LayerNorm, Linear, ModelRng};
use crate::spectral::{band_masks, freq_axis, Band, BandEdges};
use crate::tensor::Tensor;

const TWO_PI_E: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::E;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbemaConfig {
    pub d_k: usize,
    pub transformer_depth: usize,
    pub transformer_heads: usize,
    pub transformer_dim: usize,
    /// Weight of the reconstructed path against the transformer output, in `[0, 1]`.
    pub balance_alpha: f64,
    pub band_edges: BandEdges,
    pub intra_mca: bool,
    pub inter_mca: bool,
}

impl Default for AbemaConfig {
    fn default() -> Self {
        Self {
            d_k: 64,
            transformer_depth: 1,
            transformer_heads: 2,
            transformer_dim: 64,
            balance_alpha: 0.5,
            band_edges: BandEdges::default(),
            intra_mca: true,
            inter_mca: true,
        }
    }
}

/// Signal geometry the encoder is built for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalShape {
    pub channels: usize,
    pub window_len: usize,
    pub sampling_rate_hz: f64,
}

#[derive(Clone, Debug)]
struct TransformerLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

#[derive(Clone, Debug)]
struct ChannelTransformer {
    embed: Linear,
    layers: Vec<TransformerLayer>,
    project: Linear,
    heads: usize,
}

/// The six per-band projections, each `C×d_k`.
#[derive(Clone, Copy, Debug)]
struct IntraBand {
    q_de: ParamId,
    k_de: ParamId,
    v_de: ParamId,
    q_psd: ParamId,
    k_psd: ParamId,
    v_psd: ParamId,
}

#[derive(Clone, Debug)]
enum BandEncoder {
    Attention([IntraBand; 5]),
    /// `[D_b; P_b]` concatenated and mapped straight to `d_k`.
    Direct([Linear; 5]),
}

#[derive(Clone, Copy, Debug)]
struct InterBand {
    /// Per-band `d_k×d_k` queries.
    query: [ParamId; 5],
    /// `5d_k×d_k`; block `j` maps band `j` to its key.
    key: ParamId,
    value: ParamId,
}

/// Per-sample band features on the tape, each `[B, C]`.
pub struct BandTensors {
    pub de: [Var; 5],
    pub psd: [Var; 5],
    /// One-sided spectrum of the transformer output, `[B, C, F]`.
    pub re: Var,
    pub im: Var,
}

/// Intermediate values of one forward pass.
pub struct AbemaOutput {
    pub subject_mixed: Var,
    pub transformed: Var,
    pub bands: BandTensors,
    /// `[B, 5, d_k]` before inter-band attention.
    pub band_features: Var,
    /// `[B, 5, d_k]` after inter-band attention and residual.
    pub fused_bands: Var,
    /// `[B, 5]`, rows on the simplex.
    pub band_weights: Var,
    /// `[B, C, L]`.
    pub embedding: Var,
}

#[derive(Clone, Debug)]
pub struct Abema {
    pub config: AbemaConfig,
    pub shape: SignalShape,
    subjects: BTreeMap<String, ParamId>,
    transformer: Option<ChannelTransformer>,
    bands: BandEncoder,
    inter: Option<InterBand>,
    importance: ParamId,
    gain: ParamId,
    /// `[5, F]` band masks.
    masks: Tensor,
}

fn check_config(cfg: &AbemaConfig, shape: &SignalShape) -> Result<()> {
    if !(0.0..=1.0).contains(&cfg.balance_alpha) {
        return Err(Error::Config(format!("balance_alpha {} outside [0, 1]", cfg.balance_alpha)));
    }
    if cfg.d_k == 0 {
        return Err(Error::Config("d_k must be positive".into()));
    }
    if cfg.transformer_depth > 0
        && (cfg.transformer_heads == 0 || !cfg.transformer_dim.is_multiple_of(cfg.transformer_heads))
    {
        return Err(Error::Config(format!(
            "transformer_dim {} is not divisible by {} heads",
            cfg.transformer_dim, cfg.transformer_heads
        )));
    }
    if shape.channels == 0 || shape.window_len < 2 {
        return Err(Error::Config(format!("signal shape {shape:?}")));
    }
    cfg.band_edges.validate()
}

impl Abema {
    pub fn new(
        store: &mut ParamStore,
        config: AbemaConfig,
        shape: SignalShape,
        subject_ids: &[String],
        rng: &mut ModelRng,
    ) -> Result<Self> {
        check_config(&config, &shape)?;
        let (c, l, dk) = (shape.channels, shape.window_len, config.d_k);
        let subjects = subject_ids
            .iter()
            .map(|s| (s.clone(), store.add(format!("subject_bank/{s}"), Tensor::identity(c))))
            .collect();

        let transformer = (config.transformer_depth > 0).then(|| {
            let dm = config.transformer_dim;
            let layers = (0..config.transformer_depth)
                .map(|i| {
                    let p = format!("channel_tf/layer{i}");
                    TransformerLayer {
                        query: Linear::new(store, &format!("{p}/query"), dm, dm, true, rng),
                        key: Linear::new(store, &format!("{p}/key"), dm, dm, true, rng),
                        value: Linear::new(store, &format!("{p}/value"), dm, dm, true, rng),
                        out: Linear::new(store, &format!("{p}/out"), dm, dm, true, rng),
                        norm1: LayerNorm::new(store, &format!("{p}/norm1"), dm),
                        ff1: Linear::new(store, &format!("{p}/ff1"), dm, 2 * dm, true, rng),
                        ff2: Linear::new(store, &format!("{p}/ff2"), 2 * dm, dm, true, rng),
                        norm2: LayerNorm::new(store, &format!("{p}/norm2"), dm),
                    }
                })
                .collect();
            ChannelTransformer {
                embed: Linear::new(store, "channel_tf/embed", l, dm, true, rng),
                layers,
                project: Linear::new(store, "channel_tf/project", dm, l, true, rng),
                heads: config.transformer_heads,
            }
        });

        let bands = if config.intra_mca {
            BandEncoder::Attention(Band::ALL.map(|b| {
                let mut w =
                    |n: &str| store.add(format!("intra_mca/{}/{n}", b.name()), fan_in_uniform(&[c, dk], dk, rng));
                IntraBand {
                    q_de: w("q_de"),
                    k_de: w("k_de"),
                    v_de: w("v_de"),
                    q_psd: w("q_psd"),
                    k_psd: w("k_psd"),
                    v_psd: w("v_psd"),
                }
            }))
        } else {
            BandEncoder::Direct(
                Band::ALL.map(|b| Linear::new(store, &format!("intra_mca/{}/direct", b.name()), 2 * c, dk, true, rng)),
            )
        };

        let inter = config.inter_mca.then(|| InterBand {
            query: Band::ALL
                .map(|b| store.add(format!("inter_mca/{}/query", b.name()), fan_in_uniform(&[dk, dk], dk, rng))),
            key: store.add("inter_mca/key", fan_in_uniform(&[5 * dk, dk], dk, rng)),
            value: store.add("inter_mca/value", fan_in_uniform(&[5 * dk, dk], dk, rng)),
        });

        let importance = store.add("fusion/importance", fan_in_uniform(&[dk], dk, rng));
        let gain = store.add("fusion/gain", fan_in_uniform(&[dk, c], dk, rng));
        let masks = band_masks(&freq_axis(l, shape.sampling_rate_hz), &config.band_edges)?.to_tensor();
        Ok(Self { config, shape, subjects, transformer, bands, inter, importance, gain, masks })
    }

    pub fn subject_param(&self, subject: &str) -> Option<ParamId> {
        self.subjects.get(subject).copied()
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.subjects.keys().map(String::as_str)
    }

    fn check_input(&self, g: &Graph, e: Var) -> Result<usize> {
        let s = g.shape(e);
        if s.len() != 3 || s[1] != self.shape.channels || s[2] != self.shape.window_len {
            return Err(Error::Shape(format!(
                "encoder expects [B, {}, {}], got {s:?}",
                self.shape.channels, self.shape.window_len
            )));
        }
        Ok(s[0])
    }

    /// Left-multiplies each sample by its subject's matrix. Unknown subjects
    /// use the identity when `allow_unseen`, otherwise fail.
    pub fn subject_transform(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        e: Var,
        subjects: &[&str],
        allow_unseen: bool,
    ) -> Result<Var> {
        let b = self.check_input(g, e)?;
        if subjects.len() != b {
            return Err(Error::Shape(format!("{} subject ids for a batch of {b}", subjects.len())));
        }
        let c = self.shape.channels;
        let mut eye = None;
        let mut mats = Vec::with_capacity(b);
        for s in subjects {
            let m = match self.subjects.get(*s) {
                Some(id) => g.param(store, *id),
                None if allow_unseen => *eye.get_or_insert_with(|| g.constant(Tensor::identity(c))),
                None => return Err(Error::Lookup { kind: "subject", name: s.to_string() }),
            };
            mats.push(m);
        }
        let m = g.stack(&mats)?;
        g.bmm(m, e, false)
    }

    /// Self-attention across channel tokens; identity at depth 0.
    pub fn channel_transformer(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Result<Var> {
        let Some(tf) = &self.transformer else { return Ok(e) };
        let b = self.check_input(g, e)?;
        let c = self.shape.channels;
        let dm = self.config.transformer_dim;
        let (h, dh) = (tf.heads, dm / tf.heads);
        let split = |g: &mut Graph, x: Var| -> Result<Var> {
            let x = g.reshape(x, &[b, c, h, dh])?;
            let x = g.permute(x, &[0, 2, 1, 3])?;
            g.reshape(x, &[b * h, c, dh])
        };
        let mut x = tf.embed.forward(g, store, e)?;
        for layer in &tf.layers {
            let q = layer.query.forward(g, store, x)?;
            let k = layer.key.forward(g, store, x)?;
            let v = layer.value.forward(g, store, x)?;
            let (q, k, v) = (split(g, q)?, split(g, k)?, split(g, v)?);
            let a = attention(g, q, k, v)?;
            let a = g.reshape(a, &[b, h, c, dh])?;
            let a = g.permute(a, &[0, 2, 1, 3])?;
            let a = g.reshape(a, &[b, c, dm])?;
            let a = layer.out.forward(g, store, a)?;
            let x1 = g.add(x, a)?;
            let x1 = layer.norm1.forward(g, store, x1)?;
            let f = layer.ff1.forward(g, store, x1)?;
            let f = g.relu(f);
            let f = layer.ff2.forward(g, store, f)?;
            let x2 = g.add(x1, f)?;
            x = layer.norm2.forward(g, store, x2)?;
        }
        let y = tf.project.forward(g, store, x)?;
        g.add(e, y)
    }

    /// DE and PSD of every band, plus the spectrum they were computed from.
    pub fn band_tensors(&self, g: &mut Graph, e: Var) -> Result<BandTensors> {
        self.check_input(g, e)?;
        let (c, l) = (self.shape.channels, self.shape.window_len);
        let bins = l / 2 + 1;
        let re = g.rfft(e, false)?;
        let im = g.rfft(e, true)?;
        let mut de = Vec::with_capacity(5);
        let mut psd = Vec::with_capacity(5);
        for band in Band::ALL {
            let m = g.constant(self.masks.slice0(band.index(), band.index() + 1).reshape(&[bins])?);
            let br = g.mul_bcast(re, m)?;
            let bi = g.mul_bcast(im, m)?;

            let power = {
                let r2 = g.square(br);
                let i2 = g.square(bi);
                let p = g.add(r2, i2)?;
                let p = g.sum_axis(p, 2)?;
                g.scale(p, 1.0 / bins as f64)
            };
            psd.push(power);

            let x = g.irfft(br, bi, l)?;
            let mean = g.mean_axis(x, 2)?;
            let neg = g.scale(mean, -1.0);
            let centered = g.add_prefix(x, neg)?;
            let sq = g.square(centered);
            let var = g.mean_axis(sq, 2)?;
            let var = g.clamp_min(var, crate::spectral::DE_VARIANCE_FLOOR);
            let var = g.scale(var, TWO_PI_E);
            let lv = g.ln(var);
            de.push(g.scale(lv, 0.5));
        }
        debug_assert!(de.iter().all(|v| g.shape(*v)[1] == c));
        Ok(BandTensors { de: de.try_into().unwrap(), psd: psd.try_into().unwrap(), re, im })
    }

    /// `[B, C]` scalar-per-channel features embedded as `[B, C, d_k]` tokens
    /// through a per-channel row of `w`.
    fn tokens(&self, g: &mut Graph, x: Var, w: Var) -> Result<Var> {
        let (b, c, dk) = (g.shape(x)[0], self.shape.channels, self.config.d_k);
        let col = g.reshape(x, &[b * c, 1])?;
        let ones = g.constant(Tensor::full(&[1, dk], 1.0));
        let spread = g.matmul(col, ones, false)?;
        let spread = g.reshape(spread, &[b, c, dk])?;
        g.mul_bcast(spread, w)
    }

    /// Bidirectional DE↔PSD cross attention across channel tokens, pooled to `[B, d_k]`.
    pub fn intra_band_mca(&self, g: &mut Graph, store: &ParamStore, band: Band, de: Var, psd: Var) -> Result<Var> {
        let c = self.shape.channels;
        for x in [de, psd] {
            let s = g.shape(x);
            if s.len() != 2 || s[1] != c {
                return Err(Error::Shape(format!("band feature must be [B, {c}], got {s:?}")));
            }
        }
        match &self.bands {
            BandEncoder::Attention(params) => {
                let p = params[band.index()];
                let tok = |g: &mut Graph, x: Var, id: ParamId| {
                    let w = g.param(store, id);
                    self.tokens(g, x, w)
                };
                let q_d = tok(g, de, p.q_de)?;
                let k_d = tok(g, de, p.k_de)?;
                let v_d = tok(g, de, p.v_de)?;
                let q_p = tok(g, psd, p.q_psd)?;
                let k_p = tok(g, psd, p.k_psd)?;
                let v_p = tok(g, psd, p.v_psd)?;
                let dp = attention(g, q_d, k_p, v_p)?;
                let pd = attention(g, q_p, k_d, v_d)?;
                let dp = g.mean_axis(dp, 1)?;
                let pd = g.mean_axis(pd, 1)?;
                g.add(dp, pd)
            }
            BandEncoder::Direct(lin) => {
                let x = g.concat(&[de, psd], 1)?;
                lin[band.index()].forward(g, store, x)
            }
        }
    }

    /// Each band's query attends over all five band tokens; residual added.
    /// Takes and returns `[B, 5, d_k]`.
    pub fn inter_band_mca(&self, g: &mut Graph, store: &ParamStore, bands: Var) -> Result<Var> {
        let Some(p) = &self.inter else { return Ok(bands) };
        let dk = self.config.d_k;
        let s = g.shape(bands).to_vec();
        if s.len() != 3 || s[1] != 5 || s[2] != dk {
            return Err(Error::Shape(format!("expected [B, 5, {dk}] band features, got {s:?}")));
        }
        let per_band = g.permute(bands, &[1, 0, 2])?;
        let queries: Vec<Var> = p.query.iter().map(|id| g.param(store, *id)).collect();
        let wq = g.stack(&queries)?;
        let wk = g.param(store, p.key);
        let wk = g.reshape(wk, &[5, dk, dk])?;
        let wv = g.param(store, p.value);
        let wv = g.reshape(wv, &[5, dk, dk])?;
        let proj = |g: &mut Graph, w: Var| -> Result<Var> {
            let x = g.bmm(per_band, w, false)?;
            g.permute(x, &[1, 0, 2])
        };
        let q = proj(g, wq)?;
        let k = proj(g, wk)?;
        let v = proj(g, wv)?;
        let a = attention(g, q, k, v)?;
        g.add(bands, a)
    }

    /// Softmax over the five scores `w·F̂_b`; `[B, 5, d_k]` to `[B, 5]`.
    pub fn band_importance(&self, g: &mut Graph, store: &ParamStore, fused: Var) -> Result<Var> {
        let b = g.shape(fused)[0];
        let w = g.param(store, self.importance);
        let w = g.reshape(w, &[self.config.d_k, 1])?;
        let s = g.matmul(fused, w, false)?;
        let s = g.reshape(s, &[b, 5])?;
        Ok(g.softmax(s))
    }

    /// Gated band-weighted spectrum, inverse-transformed, normalized per
    /// sample over `(C, L)` and blended with `transformed`.
    pub fn reconstruct(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fused: Var,
        weights: Var,
        bands: &BandTensors,
        transformed: Var,
    ) -> Result<Var> {
        let alpha = self.config.balance_alpha;
        if alpha == 0.0 {
            return Ok(transformed);
        }
        let (c, l) = (self.shape.channels, self.shape.window_len);
        let b = g.shape(fused)[0];
        let w = g.param(store, self.gain);
        let logits = g.matmul(fused, w, false)?;
        let gains = g.sigmoid(logits);
        let coef = g.mul_prefix(gains, weights)?;
        let coef = g.permute(coef, &[0, 2, 1])?;
        let masks = g.constant(self.masks.clone());
        let gain_map = g.matmul(coef, masks, false)?;
        let re = g.mul(bands.re, gain_map)?;
        let im = g.mul(bands.im, gain_map)?;
        let x = g.irfft(re, im, l)?;
        let flat = g.reshape(x, &[b, c * l])?;
        let normed = layer_norm(g, flat)?;
        let normed = g.reshape(normed, &[b, c, l])?;
        if alpha == 1.0 {
            return Ok(normed);
        }
        let a = g.scale(normed, alpha);
        let t = g.scale(transformed, 1.0 - alpha);
        g.add(a, t)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        eeg: Var,
        subjects: &[&str],
        allow_unseen: bool,
    ) -> Result<AbemaOutput> {
        let b = self.check_input(g, eeg)?;
        let subject_mixed = self.subject_transform(g, store, eeg, subjects, allow_unseen)?;
        let transformed = self.channel_transformer(g, store, subject_mixed)?;
        let bands = self.band_tensors(g, transformed)?;
        let mut per_band = Vec::with_capacity(5);
        for band in Band::ALL {
            per_band.push(self.intra_band_mca(g, store, band, bands.de[band.index()], bands.psd[band.index()])?);
        }
        let stacked = g.stack(&per_band)?;
        let band_features = g.permute(stacked, &[1, 0, 2])?;
        debug_assert_eq!(g.shape(band_features), [b, 5, self.config.d_k]);
        let fused_bands = self.inter_band_mca(g, store, band_features)?;
        let band_weights = self.band_importance(g, store, fused_bands)?;
        let embedding = self.reconstruct(g, store, fused_bands, band_weights, &bands, transformed)?;
        Ok(AbemaOutput { subject_mixed, transformed, bands, band_features, fused_bands, band_weights, embedding })
    }
}

/// Affine layer norm over channels at every time step, plus an optional
/// linear map of the time-averaged channels to the shared dimension.
#[derive(Clone, Debug)]
pub struct NormalizeProject {
    norm: LayerNorm,
    project: Option<Linear>,
}

impl NormalizeProject {
    pub fn new(store: &mut ParamStore, shape: SignalShape, out_dim: Option<usize>, rng: &mut ModelRng) -> Self {
        Self {
            norm: LayerNorm::new(store, "fusion/norm", shape.channels),
            project: out_dim.map(|d| Linear::new(store, "fusion/project", shape.channels, d, true, rng)),
        }
    }

    /// Returns the normalized `[B, C, L]` features and, when configured, the `[B, d]` projection.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Result<(Var, Option<Var>)> {
        let steps = g.permute(e, &[0, 2, 1])?;
        let steps = self.norm.forward(g, store, steps)?;
        let normed = g.permute(steps, &[0, 2, 1])?;
        let projected = match &self.project {
            Some(lin) => {
                let pooled = g.mean_axis(normed, 2)?;
                Some(lin.forward(g, store, pooled)?)
            }
            None => None,
        };
        Ok((normed, projected))
    }
}
