//! Unit-sphere building blocks: shift embedding, unit-row linear layers with
//! decoupled scalers, LERP blocks, weight projection and orthonormal init.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var, L2_EPS};
use crate::params::{Bound, Membership, ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Appends `c_shift` to `o_bar` and projects onto the unit sphere.
pub fn shift_embed(o_bar: &[f64], c_shift: f64) -> Result<Vec<f64>> {
    if c_shift <= 0.0 {
        return Err(Error::Config(format!(
            "c_shift must be positive, got {c_shift}"
        )));
    }
    let norm = (o_bar.iter().map(|v| v * v).sum::<f64>() + c_shift * c_shift + L2_EPS).sqrt();
    Ok(o_bar
        .iter()
        .copied()
        .chain(std::iter::once(c_shift))
        .map(|v| v / norm)
        .collect())
}

/// Graph version of [`shift_embed`] over a batch.
pub fn shift_embed_var(g: &mut Graph, x: Var, c_shift: f64) -> Result<Var> {
    if c_shift <= 0.0 {
        return Err(Error::Config(format!(
            "c_shift must be positive, got {c_shift}"
        )));
    }
    let mut shape = g.value(x).shape().to_vec();
    *shape.last_mut().unwrap() = 1;
    let col = g.constant(Tensor::filled(&shape, c_shift));
    let cat = g.concat_lastaxis(x, col)?;
    Ok(g.l2_normalize_lastaxis(cat, L2_EPS))
}

/// Divides each row of `w` by its Euclidean norm.
///
/// Rows with norm below `L2_EPS` are divided by `L2_EPS` instead, so a zero
/// row stays finite.
pub fn project_weights(w: &mut Tensor) {
    for r in 0..w.rows() {
        let row = w.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_EPS);
        row.iter_mut().for_each(|v| *v /= n);
    }
}

/// Seeded orthogonal init of an `out x in` matrix.
///
/// A Gaussian matrix is orthonormalized with two passes of modified
/// Gram-Schmidt (which fixes the sign convention: positive `R` diagonal).
/// Rows are orthonormal when `out <= in`; otherwise columns are, and rows are
/// then projected to unit norm.
pub fn init_orthonormal<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Tensor {
    let (tall, short) = (out.max(inp), out.min(inp));
    // Columns of a tall x short Gaussian matrix, stored column-major.
    let mut cols: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..short {
        for _pass in 0..2 {
            for i in 0..j {
                let proj: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                tail[0]
                    .iter_mut()
                    .zip(&head[i])
                    .for_each(|(b, a)| *b -= proj * a);
            }
        }
        let n = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= n);
    }
    let mut w = Tensor::zeros(&[out, inp]);
    for r in 0..out {
        for c in 0..inp {
            w.row_mut(r)[c] = if out <= inp { cols[r][c] } else { cols[c][r] };
        }
    }
    if out > inp {
        project_weights(&mut w);
    }
    w
}

/// Elementwise gain whose stored value starts at `scale` but acts as if it
/// started at `init`: the forward multiplier is `stored * (init / scale)`.
#[derive(Clone, Debug)]
pub struct Scaler {
    pub param: ParamId,
    pub init: f64,
    pub scale: f64,
}

impl Scaler {
    pub fn create(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        init: f64,
        scale: f64,
        kind: ParamKind,
        group: Membership,
    ) -> Self {
        let param = store.add(name, Tensor::filled(&[dim], scale), kind, group);
        Self { param, init, scale }
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        store.value(self.param).numel()
    }

    /// Effective per-unit multiplier under the current stored value.
    pub fn effective(&self, store: &ParamStore) -> Vec<f64> {
        let k = self.init / self.scale;
        store
            .value(self.param)
            .data()
            .iter()
            .map(|s| s * k)
            .collect()
    }

    /// The multiplier as a graph node (gradient flows to the stored vector).
    pub fn multiplier(&self, g: &mut Graph, bound: &Bound) -> Var {
        g.scale(bound.get(self.param), self.init / self.scale)
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let m = self.multiplier(g, bound);
        g.mul_row(x, m).map_err(|_| {
            dim_err(
                "scaler",
                format!(
                    "input last extent {} vs scaler {}",
                    g.value(x).cols(),
                    g.value(m).numel()
                ),
            )
        })
    }
}

/// Bias-free linear map with unit-norm rows followed by a [`Scaler`].
#[derive(Clone, Debug)]
pub struct HypersphereLinear {
    pub weight: ParamId,
    pub scaler: Scaler,
}

impl HypersphereLinear {
    #[allow(clippy::too_many_arguments)]
    pub fn create<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        s_init: f64,
        s_scale: f64,
        group: Membership,
        rng: &mut R,
    ) -> Self {
        let w = init_orthonormal(out, inp, rng);
        let weight = store.add(format!("{name}.w"), w, ParamKind::Weight, group);
        let scaler = Scaler::create(
            store,
            &format!("{name}.s"),
            out,
            s_init,
            s_scale,
            ParamKind::Scaler,
            group,
        );
        Self { weight, scaler }
    }

    /// `scaler(W h)`, re-normalized onto the sphere when `renormalize`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, h: Var, renormalize: bool) -> Result<Var> {
        let z = g.linear(h, bound.get(self.weight))?;
        let z = self.scaler.forward(g, bound, z)?;
        Ok(if renormalize {
            g.l2_normalize_lastaxis(z, L2_EPS)
        } else {
            z
        })
    }
}

/// Scaler settings of one LERP block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockInit {
    pub mlp_init: f64,
    pub mlp_scale: f64,
    pub alpha_init: f64,
    pub alpha_scale: f64,
}

/// Inverted-bottleneck MLP on the sphere, blended into the residual stream
/// by a learnable interpolation vector and re-normalized.
#[derive(Clone, Debug)]
pub struct LerpBlock {
    pub mlp_in: HypersphereLinear,
    pub mlp_out: ParamId,
    pub alpha: Scaler,
}

/// Outputs of a block forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LerpOutput {
    /// Normalized MLP branch output.
    pub transformed: Var,
    pub out: Var,
}

impl LerpBlock {
    pub fn create<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        init: BlockInit,
        group: Membership,
        rng: &mut R,
    ) -> Self {
        let mlp_in = HypersphereLinear::create(
            store,
            &format!("{name}.w1"),
            hidden,
            4 * hidden,
            init.mlp_init,
            init.mlp_scale,
            group,
            rng,
        );
        let w2 = init_orthonormal(hidden, 4 * hidden, rng);
        let mlp_out = store.add(format!("{name}.w2.w"), w2, ParamKind::Weight, group);
        let alpha = Scaler::create(
            store,
            &format!("{name}.alpha"),
            hidden,
            init.alpha_init,
            init.alpha_scale,
            ParamKind::Interp,
            group,
        );
        Self {
            mlp_in,
            mlp_out,
            alpha,
        }
    }

    /// The normalized MLP branch `l2(W2 relu(s * (W1 h)))`.
    pub fn transform(&self, g: &mut Graph, bound: &Bound, h: Var) -> Result<Var> {
        let t = self.mlp_in.forward(g, bound, h, false)?;
        let t = g.relu(t);
        let t = g.linear(t, bound.get(self.mlp_out))?;
        Ok(g.l2_normalize_lastaxis(t, L2_EPS))
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, h: Var) -> Result<LerpOutput> {
        let transformed = self.transform(g, bound, h)?;
        let alpha = self.alpha.multiplier(g, bound);
        let diff = g.sub(transformed, h)?;
        let step = g.mul_row(diff, alpha)?;
        let mixed = g.add(h, step)?;
        let out = g.l2_normalize_lastaxis(mixed, L2_EPS);
        Ok(LerpOutput { transformed, out })
    }
}

/// `l2((1 - alpha) * h + alpha * h_tilde)` on plain vectors.
pub fn lerp(h: &[f64], h_tilde: &[f64], alpha: &[f64]) -> Vec<f64> {
    let mixed: Vec<f64> = h
        .iter()
        .zip(h_tilde)
        .zip(alpha)
        .map(|((a, b), t)| (1.0 - t) * a + t * b)
        .collect();
    let n = (mixed.iter().map(|v| v * v).sum::<f64>() + L2_EPS).sqrt();
    mixed.into_iter().map(|v| v / n).collect()
}
