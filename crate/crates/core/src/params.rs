//! Flat parameter storage shared by networks, optimizer, checkpoints and
//! telemetry.

use crate::graph::{Graph, Var};
use crate::hypersphere::project_weights;
use crate::tensor::Tensor;

/// Role of a parameter tensor; decides projection and telemetry grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Bias-free weight whose rows live on the unit sphere.
    Weight,
    /// Unconstrained weight matrix (LayerNorm encoder path).
    Free,
    /// Learnable elementwise gain with decoupled init/scale.
    Scaler,
    /// Learnable interpolation vector of a LERP block.
    Interp,
    Bias,
    /// LayerNorm affine gain.
    Gain,
}

impl ParamKind {
    pub fn is_matrix(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Free)
    }
}

/// Encoder layers precede the output head; predictor layers form it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Membership {
    Encoder,
    Predictor,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
    pub group: Membership,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Graph handles for every parameter of one store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        kind: ParamKind,
        group: Membership,
    ) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            kind,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| g.leaf(p.value.clone(), requires_grad))
                .collect(),
        )
    }

    /// Gradients of every parameter after a backward pass (zeros where
    /// nothing flowed).
    pub fn grads(&self, g: &Graph, bound: &Bound) -> Vec<Tensor> {
        bound.0.iter().map(|&v| g.grad_tensor(v)).collect()
    }

    /// Re-normalizes the rows of every [`ParamKind::Weight`] tensor.
    pub fn project_constrained(&mut self) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.kind == ParamKind::Weight)
        {
            project_weights(&mut p.value);
        }
    }

    /// Largest `| ||row|| - 1 |` over all constrained weight rows.
    pub fn max_row_norm_deviation(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .flat_map(|p| p.value.row_norms())
            .map(|n| (n - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `target <- (1 - tau) * target + tau * online` for matching stores.
    pub fn lerp_from(&mut self, online: &ParamStore, tau: f64) {
        assert_eq!(self.params.len(), online.params.len(), "mismatched stores");
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            for (x, y) in t.value.data_mut().iter_mut().zip(o.value.data()) {
                *x = (1.0 - tau) * *x + tau * y;
            }
        }
    }
}
