//! Categorical return distributions: fixed support, projection of shifted
//! targets back onto the support, and the cross-entropy critic loss.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Offset inside the log of the critic loss.
pub const LOG_TINY: f64 = 1e-12;

/// Uniformly spaced atoms `G_min + i * (G_max - G_min) / (n - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnSupport {
    g_min: f64,
    g_max: f64,
    atoms: Vec<f64>,
}

impl ReturnSupport {
    pub fn new(g_min: f64, g_max: f64, n_atom: usize) -> Result<Self> {
        if !(g_max > g_min) {
            return Err(Error::Config(format!(
                "support needs G_max > G_min, got [{g_min}, {g_max}]"
            )));
        }
        if n_atom < 2 {
            return Err(Error::Config(format!(
                "need at least 2 atoms, got {n_atom}"
            )));
        }
        let step = (g_max - g_min) / (n_atom - 1) as f64;
        let mut atoms: Vec<f64> = (0..n_atom).map(|i| g_min + i as f64 * step).collect();
        atoms[n_atom - 1] = g_max;
        Ok(Self {
            g_min,
            g_max,
            atoms,
        })
    }

    pub fn g_min(&self) -> f64 {
        self.g_min
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.g_max - self.g_min) / (self.atoms.len() - 1) as f64
    }

    /// `sum_i atom_i * p_i`.
    pub fn expectation(&self, probs: &[f64]) -> f64 {
        self.atoms.iter().zip(probs).map(|(a, p)| a * p).sum()
    }

    /// Atoms as an `[n, 1]` column, for graph expectations.
    pub fn atoms_column(&self) -> Tensor {
        Tensor::new(vec![self.atoms.len(), 1], self.atoms.clone()).expect("column")
    }

    /// Projects masses `probs[j]` sitting at arbitrary `values[j]` onto the
    /// atoms. Values are clamped to the support and each mass is split
    /// linearly between the two neighbouring atoms.
    pub fn project(&self, values: &[f64], probs: &[f64]) -> Vec<f64> {
        let n = self.atoms.len();
        let dz = self.spacing();
        let mut out = vec![0.0; n];
        for (&v, &p) in values.iter().zip(probs) {
            let v = v.clamp(self.g_min, self.g_max);
            let mut b = (v - self.g_min) / dz;
            if (b - b.round()).abs() < 1e-9 {
                b = b.round();
            }
            let b = b.clamp(0.0, (n - 1) as f64);
            let (lo, hi) = (b.floor() as usize, b.ceil() as usize);
            if lo == hi {
                out[lo] += p;
            } else {
                out[lo] += p * (hi as f64 - b);
                out[hi] += p * (b - lo as f64);
            }
        }
        out
    }
}

/// Batch cross-entropy `mean_b( -sum_i target_i * ln(pred_i + tiny) )`.
///
/// `target` enters as a constant so gradients reach `pred` only.
pub fn kl_critic_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let rows = g.value(pred).rows() as f64;
    let t = g.constant(target.clone());
    let logp = g.log(pred, LOG_TINY);
    let prod = g.mul(t, logp)?;
    let total = g.sum(prod);
    Ok(g.scale(total, -1.0 / rows))
}

/// Expected value of each row of `probs` under `support`: shape `[b, 1]`.
pub fn expected_q(g: &mut Graph, probs: Var, support: &ReturnSupport) -> Result<Var> {
    let col = g.constant(support.atoms_column());
    g.matmul(probs, col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_support() {
        let s = ReturnSupport::new(-5.0, 5.0, 101).unwrap();
        assert!((s.spacing() - 0.1).abs() < 1e-15);
        assert!(s.atoms()[50].abs() < 1e-12);
        assert_eq!(s.atoms()[0], -5.0);
        assert_eq!(s.atoms()[100], 5.0);
        assert!(s.atoms().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn small_supports() {
        assert_eq!(
            ReturnSupport::new(0.0, 1.0, 2).unwrap().atoms(),
            &[0.0, 1.0]
        );
        assert_eq!(
            ReturnSupport::new(-1.0, 1.0, 3).unwrap().atoms(),
            &[-1.0, 0.0, 1.0]
        );
        assert!(matches!(
            ReturnSupport::new(1.0, 1.0, 3),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ReturnSupport::new(0.0, 1.0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let s = ReturnSupport::new(-1.0, 1.0, 3).unwrap();
        assert_eq!(s.project(&[0.0], &[1.0]), vec![0.0, 1.0, 0.0]);
        assert_eq!(s.project(&[0.5], &[1.0]), vec![0.0, 0.5, 0.5]);
        assert_eq!(s.project(&[-2.0], &[1.0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(s.project(&[7.0], &[1.0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_rows(&[vec![0.2, 0.5, 0.3]]).unwrap());
        let l = kl_critic_loss(
            &mut g,
            p,
            &Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert!((g.value(l).data()[0] + (0.5f64 + LOG_TINY).ln()).abs() < 1e-12);

        // pred == target gives the target entropy, the minimum over pred.
        let t = vec![0.2, 0.5, 0.3];
        let entropy: f64 = -t.iter().map(|x: &f64| x * (x + LOG_TINY).ln()).sum::<f64>();
        let mut g = Graph::new();
        let p = g.param(Tensor::from_rows(&[t.clone()]).unwrap());
        let l = kl_critic_loss(&mut g, p, &Tensor::from_rows(&[t.clone()]).unwrap()).unwrap();
        assert!((g.value(l).data()[0] - entropy).abs() < 1e-12);
        for other in [[0.3, 0.4, 0.3], [0.1, 0.6, 0.3]] {
            let mut g = Graph::new();
            let p = g.param(Tensor::from_rows(&[other.to_vec()]).unwrap());
            let l2 = kl_critic_loss(&mut g, p, &Tensor::from_rows(&[t.clone()]).unwrap()).unwrap();
            assert!(g.value(l2).data()[0] > entropy);
        }
    }

    fn prob_vec(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn projection_preserves_mass_and_mean(
            pairs in prop::collection::vec((-8.0f64..8.0, 0.01f64..1.0), 1..60)
        ) {
            let s = ReturnSupport::new(-5.0, 5.0, 101).unwrap();
            let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let probs = prob_vec(pairs.iter().map(|p| p.1).collect());
            let out = s.project(&values, &probs);
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(out.iter().all(|p| *p >= 0.0));
            // brute-force expectation of the clamped targets
            let clamped_mean: f64 = values.iter().zip(&probs).map(|(v, p)| v.clamp(-5.0, 5.0) * p).sum();
            prop_assert!((s.expectation(&out) - clamped_mean).abs() <= s.spacing());
        }

        #[test]
        fn projection_is_identity_on_atoms(raw in prop::collection::vec(0.0f64..1.0, 21)) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-3);
            let s = ReturnSupport::new(-2.0, 3.0, 21).unwrap();
            let probs = prob_vec(raw);
            let out = s.project(s.atoms(), &probs);
            for (a, b) in out.iter().zip(&probs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn projection_mean_is_monotone_in_shift(
            pairs in prop::collection::vec((-4.0f64..4.0, 0.01f64..1.0), 1..30),
            shift in 0.0f64..0.5,
        ) {
            let s = ReturnSupport::new(-5.0, 5.0, 101).unwrap();
            let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let probs = prob_vec(pairs.iter().map(|p| p.1).collect());
            let m0 = s.expectation(&s.project(&values, &probs));
            let m1 = s.expectation(&s.project(&shifted, &probs));
            prop_assert!(m1 >= m0 - 1e-12);
        }
    }
}
