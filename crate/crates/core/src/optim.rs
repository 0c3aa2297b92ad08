use crate::error::{dim_err, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Adam without weight decay. Moments live in ambient coordinates, so a
/// projection after the step does not touch them.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: impl IntoIterator<Item = usize>, beta1: f64, beta2: f64) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_store(store: &ParamStore, beta1: f64, beta2: f64) -> Self {
        Self::new(store.iter().map(|p| p.value.numel()), beta1, beta2)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params[i]` along `grads[i]`.
    pub fn step_slices(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(dim_err(
                "adam",
                format!(
                    "{} params / {} grads for {} slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(dim_err("adam", format!("slot {i} size mismatch")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        let gs: Vec<&[f64]> = grads.iter().map(|t| t.data()).collect();
        let mut ps: Vec<&mut [f64]> = store.iter_mut().map(|p| p.value.data_mut()).collect();
        self.step_slices(&mut ps, &gs, lr)
    }

    /// Flattened state: `[t, m..., v...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = vec![self.t as f64];
        self.m.iter().for_each(|m| out.extend_from_slice(m));
        self.v.iter().for_each(|v| out.extend_from_slice(v));
        out
    }

    pub fn load_vec(&mut self, data: &[f64]) -> Result<()> {
        let n: usize = self.m.iter().map(Vec::len).sum();
        if data.len() != 1 + 2 * n {
            return Err(crate::Error::Checkpoint(format!(
                "adam state has {} values, expected {}",
                data.len(),
                1 + 2 * n
            )));
        }
        self.t = data[0] as u64;
        let mut off = 1;
        for slot in self.m.iter_mut().chain(self.v.iter_mut()) {
            let n = slot.len();
            slot.copy_from_slice(&data[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Linear interpolation from `lr_init` at step 0 to `lr_final` at
/// `total_steps`; held at `lr_final` afterwards.
pub fn lr_schedule(step: u64, total_steps: u64, lr_init: f64, lr_final: f64) -> f64 {
    if total_steps == 0 {
        return lr_init;
    }
    let frac = (step.min(total_steps)) as f64 / total_steps as f64;
    lr_init + (lr_final - lr_init) * frac
}
