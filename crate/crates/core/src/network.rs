//! Actor and critic networks assembled from the hypersphere primitives.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributional::{expected_q, ReturnSupport};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var, L2_EPS};
use crate::hypersphere::{
    init_orthonormal, shift_embed_var, BlockInit, HypersphereLinear, LerpBlock,
};
use crate::params::{Bound, Membership, ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_EPS: f64 = 1e-5;

/// How the normalized observation reaches the embedding layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputProjection {
    /// Append `c_shift`, then l2-normalize.
    Shift,
    /// Append `c_shift` without normalizing.
    ShiftNoL2,
    /// Divide by `c_shift * sqrt(d_h)`, append 1, then l2-normalize.
    Resize,
    /// Plain l2 normalization without the extra axis.
    L2Only,
    /// No projection at all.
    Raw,
}

impl InputProjection {
    /// Projection selected by the `no_shift` / `no_l2` switches.
    pub fn from_switches(no_shift: bool, no_l2: bool) -> Self {
        match (no_shift, no_l2) {
            (false, false) => Self::Shift,
            (false, true) => Self::ShiftNoL2,
            (true, false) => Self::L2Only,
            (true, true) => Self::Raw,
        }
    }

    fn appends_axis(self) -> bool {
        matches!(self, Self::Shift | Self::ShiftNoL2 | Self::Resize)
    }
}

/// Overrides of the default scaler and interpolation-vector settings.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct InitOverrides {
    pub s_init_one: bool,
    pub s_scale_one: bool,
    pub alpha_init: Option<f64>,
    pub alpha_scale_one: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Width of the (already normalized) input, action included for critics.
    pub input_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub c_shift: f64,
    pub projection: InputProjection,
    /// Replace the sphere encoder by pre-LayerNorm residual blocks.
    pub use_layernorm: bool,
    pub init: InitOverrides,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden: usize, blocks: usize) -> Self {
        Self {
            input_dim,
            hidden,
            blocks,
            c_shift: 3.0,
            projection: InputProjection::Shift,
            use_layernorm: false,
            init: InitOverrides::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.projection.appends_axis() && self.c_shift <= 0.0 {
            return Err(Error::Config(format!(
                "c_shift must be positive, got {}",
                self.c_shift
            )));
        }
        Ok(())
    }

    /// `(s_init, s_scale)` for a scaler over `width` units.
    pub fn scaler_pair(&self, width: usize) -> (f64, f64) {
        let d = (2.0 / width as f64).sqrt();
        (
            if self.init.s_init_one { 1.0 } else { d },
            if self.init.s_scale_one { 1.0 } else { d },
        )
    }

    pub fn block_init(&self) -> BlockInit {
        let (mlp_init, mlp_scale) = self.scaler_pair(4 * self.hidden);
        BlockInit {
            mlp_init,
            mlp_scale,
            alpha_init: self
                .init
                .alpha_init
                .unwrap_or(1.0 / (self.blocks as f64 + 1.0)),
            alpha_scale: if self.init.alpha_scale_one {
                1.0
            } else {
                1.0 / (self.hidden as f64).sqrt()
            },
        }
    }

    fn embed_input_dim(&self) -> usize {
        if self.use_layernorm {
            return self.input_dim;
        }
        self.input_dim + usize::from(self.projection.appends_axis())
    }
}

#[derive(Clone, Debug)]
struct LnBlock {
    ln_gain: ParamId,
    ln_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
enum EncoderLayers {
    Sphere {
        embed: HypersphereLinear,
        blocks: Vec<LerpBlock>,
    },
    LayerNorm {
        embed_w: ParamId,
        embed_b: ParamId,
        blocks: Vec<LnBlock>,
        out_gain: ParamId,
        out_bias: ParamId,
    },
}

/// Observation (+ action) encoder producing `h^L`.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    layers: EncoderLayers,
}

/// Encoder result: the residual-stream features `h^0..h^L` and the final
/// representation handed to the head.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub features: Vec<Var>,
    pub out: Var,
}

fn he_normal<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / inp as f64).sqrt();
    let data = (0..out * inp)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(vec![out, inp], data).expect("he init")
}

impl Encoder {
    pub fn create<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let enc = Membership::Encoder;
        let d = cfg.hidden;
        let layers = if cfg.use_layernorm {
            let embed_w = store.add(
                format!("{name}.embed.w"),
                he_normal(d, cfg.input_dim, rng),
                ParamKind::Free,
                enc,
            );
            let embed_b = store.add(
                format!("{name}.embed.b"),
                Tensor::zeros(&[d]),
                ParamKind::Bias,
                enc,
            );
            let blocks = (0..cfg.blocks)
                .map(|l| {
                    let p = format!("{name}.block{l}");
                    LnBlock {
                        ln_gain: store.add(
                            format!("{p}.ln.g"),
                            Tensor::filled(&[d], 1.0),
                            ParamKind::Gain,
                            enc,
                        ),
                        ln_bias: store.add(
                            format!("{p}.ln.b"),
                            Tensor::zeros(&[d]),
                            ParamKind::Bias,
                            enc,
                        ),
                        w1: store.add(
                            format!("{p}.w1"),
                            he_normal(4 * d, d, rng),
                            ParamKind::Free,
                            enc,
                        ),
                        b1: store.add(
                            format!("{p}.b1"),
                            Tensor::zeros(&[4 * d]),
                            ParamKind::Bias,
                            enc,
                        ),
                        w2: store.add(
                            format!("{p}.w2"),
                            he_normal(d, 4 * d, rng),
                            ParamKind::Free,
                            enc,
                        ),
                        b2: store.add(format!("{p}.b2"), Tensor::zeros(&[d]), ParamKind::Bias, enc),
                    }
                })
                .collect();
            EncoderLayers::LayerNorm {
                embed_w,
                embed_b,
                blocks,
                out_gain: store.add(
                    format!("{name}.out_ln.g"),
                    Tensor::filled(&[d], 1.0),
                    ParamKind::Gain,
                    enc,
                ),
                out_bias: store.add(
                    format!("{name}.out_ln.b"),
                    Tensor::zeros(&[d]),
                    ParamKind::Bias,
                    enc,
                ),
            }
        } else {
            let (s_init, s_scale) = cfg.scaler_pair(d);
            let embed = HypersphereLinear::create(
                store,
                &format!("{name}.embed"),
                cfg.embed_input_dim(),
                d,
                s_init,
                s_scale,
                enc,
                rng,
            );
            let init = cfg.block_init();
            let blocks = (0..cfg.blocks)
                .map(|l| LerpBlock::create(store, &format!("{name}.block{l}"), d, init, enc, rng))
                .collect();
            EncoderLayers::Sphere { embed, blocks }
        };
        Ok(Self {
            cfg: cfg.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// The LERP blocks (empty for the LayerNorm variant).
    pub fn lerp_blocks(&self) -> &[LerpBlock] {
        match &self.layers {
            EncoderLayers::Sphere { blocks, .. } => blocks,
            EncoderLayers::LayerNorm { .. } => &[],
        }
    }

    /// Parameter count of the layer producing each entry of
    /// [`EncoderOutput::features`].
    pub fn feature_param_counts(&self, store: &ParamStore) -> Vec<usize> {
        let n = |id: ParamId| store.value(id).numel();
        match &self.layers {
            EncoderLayers::Sphere { embed, blocks } => {
                std::iter::once(n(embed.weight) + n(embed.scaler.param))
                    .chain(blocks.iter().map(|b| {
                        n(b.mlp_in.weight)
                            + n(b.mlp_in.scaler.param)
                            + n(b.mlp_out)
                            + n(b.alpha.param)
                    }))
                    .collect()
            }
            EncoderLayers::LayerNorm {
                embed_w,
                embed_b,
                blocks,
                ..
            } => std::iter::once(n(*embed_w) + n(*embed_b))
                .chain(blocks.iter().map(|b| {
                    [b.ln_gain, b.ln_bias, b.w1, b.b1, b.w2, b.b2]
                        .into_iter()
                        .map(n)
                        .sum()
                }))
                .collect(),
        }
    }

    fn project_input(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let c = self.cfg.c_shift;
        match self.cfg.projection {
            InputProjection::Shift => shift_embed_var(g, x, c),
            InputProjection::ShiftNoL2 => {
                let rows = g.value(x).rows();
                let col = g.constant(Tensor::filled(&[rows, 1], c));
                g.concat_lastaxis(x, col)
            }
            InputProjection::Resize => {
                let scaled = g.scale(x, 1.0 / (c * (self.cfg.hidden as f64).sqrt()));
                shift_embed_var(g, scaled, 1.0)
            }
            InputProjection::L2Only => Ok(g.l2_normalize_lastaxis(x, L2_EPS)),
            InputProjection::Raw => Ok(x),
        }
    }

    /// Encodes a `[b, input_dim]` batch of normalized inputs.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<EncoderOutput> {
        if g.value(x).cols() != self.cfg.input_dim {
            return Err(crate::error::dim_err(
                "encoder",
                format!(
                    "input width {} vs configured {}",
                    g.value(x).cols(),
                    self.cfg.input_dim
                ),
            ));
        }
        match &self.layers {
            EncoderLayers::Sphere { embed, blocks } => {
                let x = self.project_input(g, x)?;
                let mut h = embed.forward(g, bound, x, true)?;
                let mut features = vec![h];
                for b in blocks {
                    h = b.forward(g, bound, h)?.out;
                    features.push(h);
                }
                Ok(EncoderOutput { features, out: h })
            }
            EncoderLayers::LayerNorm {
                embed_w,
                embed_b,
                blocks,
                out_gain,
                out_bias,
            } => {
                let h = g.linear(x, bound.get(*embed_w))?;
                let mut h = g.add_row(h, bound.get(*embed_b))?;
                let mut features = vec![h];
                for b in blocks {
                    let n = layer_norm_affine(g, bound, h, b.ln_gain, b.ln_bias)?;
                    let t = g.linear(n, bound.get(b.w1))?;
                    let t = g.add_row(t, bound.get(b.b1))?;
                    let t = g.relu(t);
                    let t = g.linear(t, bound.get(b.w2))?;
                    let t = g.add_row(t, bound.get(b.b2))?;
                    h = g.add(h, t)?;
                    features.push(h);
                }
                let out = layer_norm_affine(g, bound, h, *out_gain, *out_bias)?;
                Ok(EncoderOutput { features, out })
            }
        }
    }
}

fn layer_norm_affine(
    g: &mut Graph,
    bound: &Bound,
    x: Var,
    gain: ParamId,
    bias: ParamId,
) -> Result<Var> {
    let n = g.layer_norm_lastaxis(x, LN_EPS);
    let n = g.mul_row(n, bound.get(gain))?;
    g.add_row(n, bound.get(bias))
}

/// Two-stage output map `W2 (s_o * (W1 h))` with an optional bias.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub w1: HypersphereLinear,
    pub w2: ParamId,
    pub bias: Option<ParamId>,
}

/// Head result: the scaled hidden projection and the raw outputs.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub hidden: Var,
    pub out: Var,
}

impl OutputHead {
    #[allow(clippy::too_many_arguments)]
    pub fn create<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        outputs: usize,
        scaler: (f64, f64),
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let pred = Membership::Predictor;
        let w1 = HypersphereLinear::create(
            store,
            &format!("{name}.w1"),
            hidden,
            hidden,
            scaler.0,
            scaler.1,
            pred,
            rng,
        );
        let w2 = store.add(
            format!("{name}.w2.w"),
            init_orthonormal(outputs, hidden, rng),
            ParamKind::Weight,
            pred,
        );
        let bias = with_bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[outputs]),
                ParamKind::Bias,
                pred,
            )
        });
        Self { w1, w2, bias }
    }

    /// Parameter counts behind `hidden` and `out`.
    pub fn feature_param_counts(&self, store: &ParamStore) -> [usize; 2] {
        let n = |id: ParamId| store.value(id).numel();
        [
            n(self.w1.weight) + n(self.w1.scaler.param),
            n(self.w2) + self.bias.map_or(0, n),
        ]
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, h: Var) -> Result<HeadOutput> {
        let hidden = self.w1.forward(g, bound, h, false)?;
        let mut out = g.linear(hidden, bound.get(self.w2))?;
        if let Some(b) = self.bias {
            out = g.add_row(out, bound.get(b))?;
        }
        Ok(HeadOutput { hidden, out })
    }
}

// ---------------------------------------------------------------------------
// Actor

/// Squashed-Gaussian policy network.
#[derive(Clone, Debug)]
pub struct Actor {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: OutputHead,
    action_dim: usize,
}

#[derive(Clone, Debug)]
pub struct PolicyOutput {
    pub mean: Var,
    pub log_std: Var,
    pub encoder: EncoderOutput,
    pub head: HeadOutput,
}

/// Reparameterized sample and its log-density.
#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    pub action: Var,
    /// `[b, 1]`
    pub log_prob: Var,
}

impl Actor {
    pub fn create<R: Rng + ?Sized>(
        cfg: &EncoderConfig,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::create(&mut store, "actor.enc", cfg, rng)?;
        let scaler = cfg.scaler_pair(cfg.hidden);
        let head = OutputHead::create(
            &mut store,
            "actor.head",
            cfg.hidden,
            2 * action_dim,
            scaler,
            true,
            rng,
        );
        Ok(Self {
            store,
            encoder,
            head,
            action_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, obs: Var) -> Result<PolicyOutput> {
        let encoder = self.encoder.forward(g, bound, obs)?;
        let head = self.head.forward(g, bound, encoder.out)?;
        let mean = g.slice_cols(head.out, 0, self.action_dim)?;
        let raw = g.slice_cols(head.out, self.action_dim, self.action_dim)?;
        // LOG_STD_MIN + (MAX - MIN) * (tanh(raw) + 1) / 2
        let t = g.tanh(raw);
        let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        let t = g.scale(t, half);
        let log_std = g.add_scalar(t, LOG_STD_MIN + half);
        Ok(PolicyOutput {
            mean,
            log_std,
            encoder,
            head,
        })
    }

    /// Deterministic action `tanh(mean)` for a single observation.
    pub fn act_deterministic(&self, obs_norm: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.store.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![1, obs_norm.len()], obs_norm.to_vec())?);
        let out = self.forward(&mut g, &bound, x)?;
        Ok(g.value(out.mean).data().iter().map(|m| m.tanh()).collect())
    }
}

/// `a = tanh(mean + exp(log_std) * noise)` with the tanh-corrected
/// log-density summed over action dimensions.
pub fn actor_sample(
    g: &mut Graph,
    mean: Var,
    log_std: Var,
    noise: &Tensor,
) -> Result<PolicySample> {
    let eps = g.constant(noise.clone());
    let std = g.exp(log_std);
    let spread = g.mul(std, eps)?;
    let u = g.add(mean, spread)?;
    let action = g.tanh(u);

    // Gaussian part: -eps^2/2 - log_std - ln(2 pi)/2, with eps constant.
    let gauss_const: Vec<f64> = noise
        .data()
        .iter()
        .map(|e| -0.5 * e * e - 0.5 * (2.0 * std::f64::consts::PI).ln())
        .collect();
    let gc = g.constant(Tensor::new(noise.shape().to_vec(), gauss_const)?);
    let gauss = g.sub(gc, log_std)?;
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let m2u = g.scale(u, -2.0);
    let sp = g.softplus(m2u);
    let s = g.add(u, sp)?;
    let s = g.scale(s, -2.0);
    let log_det = g.add_scalar(s, 2.0 * std::f64::consts::LN_2);
    let per_dim = g.sub(gauss, log_det)?;
    let log_prob = g.sum_lastaxis(per_dim);
    Ok(PolicySample { action, log_prob })
}

// ---------------------------------------------------------------------------
// Critic

#[derive(Clone, Debug)]
pub enum CriticKind {
    /// Logits over the return atoms.
    Categorical(ReturnSupport),
    /// A scalar Q trained with a squared Bellman error.
    Mse,
}

#[derive(Clone, Debug)]
pub struct Critic {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: OutputHead,
    pub kind: CriticKind,
    obs_dim: usize,
}

#[derive(Clone, Debug)]
pub struct CriticOutput {
    /// Logits (categorical) or the scalar Q (MSE).
    pub logits: Var,
    /// Softmax of the logits; `None` for the MSE head.
    pub probs: Option<Var>,
    /// `[b, 1]` expected return.
    pub q: Var,
    pub encoder: EncoderOutput,
    pub head: HeadOutput,
}

impl Critic {
    /// `cfg.input_dim` must equal `obs_dim + action_dim`.
    pub fn create<R: Rng + ?Sized>(
        cfg: &EncoderConfig,
        obs_dim: usize,
        kind: CriticKind,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.input_dim <= obs_dim {
            return Err(Error::Config("critic input must include the action".into()));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::create(&mut store, "critic.enc", cfg, rng)?;
        let outputs = match &kind {
            CriticKind::Categorical(s) => s.len(),
            CriticKind::Mse => 1,
        };
        let scaler = cfg.scaler_pair(cfg.hidden);
        let head = OutputHead::create(
            &mut store,
            "critic.head",
            cfg.hidden,
            outputs,
            scaler,
            false,
            rng,
        );
        Ok(Self {
            store,
            encoder,
            head,
            kind,
            obs_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn support(&self) -> Option<&ReturnSupport> {
        match &self.kind {
            CriticKind::Categorical(s) => Some(s),
            CriticKind::Mse => None,
        }
    }

    /// `obs` is RSNorm-normalized; the action is appended after
    /// normalization.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        obs: Var,
        action: Var,
    ) -> Result<CriticOutput> {
        let x = g.concat_lastaxis(obs, action)?;
        let encoder = self.encoder.forward(g, bound, x)?;
        let head = self.head.forward(g, bound, encoder.out)?;
        let (probs, q) = match &self.kind {
            CriticKind::Categorical(s) => {
                let p = g.softmax_lastaxis(head.out);
                let q = expected_q(g, p, s)?;
                (Some(p), q)
            }
            CriticKind::Mse => (None, head.out),
        };
        Ok(CriticOutput {
            logits: head.out,
            probs,
            q,
            encoder,
            head,
        })
    }
}

/// Closed-form parameter count of a sphere encoder plus a two-stage head
/// with `outputs` units (and `bias` extra values).
pub fn sphere_param_count(
    input_dim: usize,
    hidden: usize,
    blocks: usize,
    outputs: usize,
    bias: bool,
) -> usize {
    let d = hidden;
    let embed = d * (input_dim + 1) + d;
    let block = 4 * d * d + 4 * d + d * 4 * d + d;
    let head = d * d + d + outputs * d + if bias { outputs } else { 0 };
    embed + blocks * block + head
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn batch(rows: usize, cols: usize, seed: u64, scale: f64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols)
                .map(|_| scale * r.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sphere_encoder_features_are_unit() {
        let cfg = EncoderConfig::new(5, 16, 2);
        let mut store = ParamStore::new();
        let enc = Encoder::create(&mut store, "e", &cfg, &mut rng()).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let x = g.constant(batch(7, 5, 1, 10.0));
        let out = enc.forward(&mut g, &b, x).unwrap();
        assert_eq!(out.features.len(), 3);
        for f in &out.features {
            assert!(g
                .value(*f)
                .row_norms()
                .iter()
                .all(|n| (n - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn zero_blocks_rejected() {
        let cfg = EncoderConfig::new(3, 8, 0);
        let mut store = ParamStore::new();
        assert!(matches!(
            Encoder::create(&mut store, "e", &cfg, &mut rng()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn one_block_is_embedding_then_block() {
        let cfg = EncoderConfig::new(3, 8, 1);
        let mut store = ParamStore::new();
        let enc = Encoder::create(&mut store, "e", &cfg, &mut rng()).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let x = g.constant(batch(2, 3, 2, 1.0));
        let out = enc.forward(&mut g, &b, x).unwrap();
        let x2 = g.constant(batch(2, 3, 2, 1.0));
        let e = shift_embed_var(&mut g, x2, 3.0).unwrap();
        let EncoderLayers::Sphere { embed, blocks } = &enc.layers else {
            unreachable!()
        };
        let h0 = embed.forward(&mut g, &b, e, true).unwrap();
        let h1 = blocks[0].forward(&mut g, &b, h0).unwrap().out;
        assert_eq!(g.value(h1), g.value(out.out));
    }

    #[test]
    fn layernorm_encoder_features_leave_the_sphere() {
        let mut cfg = EncoderConfig::new(4, 16, 1);
        cfg.use_layernorm = true;
        let mut store = ParamStore::new();
        let enc = Encoder::create(&mut store, "e", &cfg, &mut rng()).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let x = g.constant(batch(3, 4, 3, 20.0));
        let out = enc.forward(&mut g, &b, x).unwrap();
        let norms = g.value(*out.features.last().unwrap()).row_norms();
        assert!(norms.iter().all(|n| (n - 1.0).abs() > 0.5), "{norms:?}");
        // The final LayerNorm gives every row norm sqrt(d_h).
        let z = g.value(out.out).row_norms();
        assert!(z.iter().all(|n| (n - 4.0).abs() < 1e-3), "{z:?}");
    }

    #[test]
    fn critic_q_inside_support_and_symmetric_cases() {
        let support = ReturnSupport::new(-5.0, 5.0, 101).unwrap();
        assert!(support.expectation(&vec![1.0 / 101.0; 101]).abs() < 1e-12);
        let mut onehot = vec![0.0; 101];
        onehot[73] = 1.0;
        assert!((support.expectation(&onehot) - support.atoms()[73]).abs() < 1e-15);

        let cfg = EncoderConfig::new(4, 8, 1);
        let critic = Critic::create(&cfg, 3, CriticKind::Categorical(support), &mut rng()).unwrap();
        let mut g = Graph::new();
        let b = critic.store.bind(&mut g, false);
        let o = g.constant(batch(6, 3, 4, 3.0));
        let a = g.constant(batch(6, 1, 5, 1.0));
        let out = critic.forward(&mut g, &b, o, a).unwrap();
        let probs = g.value(out.probs.unwrap());
        for r in 0..6 {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(g
            .value(out.q)
            .data()
            .iter()
            .all(|q| (-5.0..=5.0).contains(q)));
    }

    #[test]
    fn log_std_is_bounded() {
        let cfg = EncoderConfig::new(3, 8, 1);
        let mut actor = Actor::create(&cfg, 2, &mut rng()).unwrap();
        let b = actor.head.bias.unwrap();
        actor
            .store
            .value_mut(b)
            .data_mut()
            .copy_from_slice(&[0.0, 0.0, 1e3, -1e3]);
        let mut g = Graph::new();
        let bound = actor.store.bind(&mut g, false);
        let x = g.constant(batch(4, 3, 9, 2.0));
        let out = actor.forward(&mut g, &bound, x).unwrap();
        let ls = g.value(out.log_std).data();
        assert!(ls.iter().all(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(v)));
        assert!((ls[0] - LOG_STD_MAX).abs() < 1e-9 && (ls[1] - LOG_STD_MIN).abs() < 1e-9);
    }

    #[test]
    fn tiny_std_gives_tanh_mean() {
        let mut g = Graph::new();
        let mean = g.constant(Tensor::from_rows(&[vec![0.7, -0.2]]).unwrap());
        let ls = g.constant(Tensor::from_rows(&[vec![-30.0, -30.0]]).unwrap());
        let s = actor_sample(
            &mut g,
            mean,
            ls,
            &Tensor::from_rows(&[vec![1.3, -0.4]]).unwrap(),
        )
        .unwrap();
        let a = g.value(s.action).data();
        assert!((a[0] - 0.7f64.tanh()).abs() < 1e-12 && (a[1] + 0.2f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_matches_formula() {
        let support = ReturnSupport::new(-5.0, 5.0, 101).unwrap();
        let (obs, act) = (3, 1);
        let actor = Actor::create(&EncoderConfig::new(obs, 128, 1), act, &mut rng()).unwrap();
        let critic = Critic::create(
            &EncoderConfig::new(obs + act, 512, 2),
            obs,
            CriticKind::Categorical(support),
            &mut rng(),
        )
        .unwrap();
        let a = sphere_param_count(obs, 128, 1, 2 * act, true);
        let c = sphere_param_count(obs + act, 512, 2, 101, false);
        assert_eq!(actor.store.num_scalars(), a);
        assert_eq!(critic.store.num_scalars(), c);
        // Hand evaluation of the formula for these dimensions.
        assert_eq!(
            a,
            128 * 4 + 128 + (8 * 128 * 128 + 5 * 128) + 128 * 128 + 128 + 2 * 128 + 2
        );
        assert_eq!(
            c,
            512 * 5 + 512 + 2 * (8 * 512 * 512 + 5 * 512) + 512 * 512 + 512 + 101 * 512
        );
        // One actor plus one critic lands near five million parameters.
        let total = (a + c) as f64;
        assert!((4.5e6..5.5e6).contains(&total), "{total}");
    }
}
