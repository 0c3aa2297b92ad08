//! Central finite-difference checks for tape gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fixed non-uniform weights used to reduce a tensor output to a scalar.
fn probe_weight(k: usize) -> f64 {
    (1.7 * k as f64 + 0.3).cos()
}

fn scalarize(g: &mut Graph, out: Var) -> Result<Var> {
    let v = g.value(out);
    if v.numel() == 1 {
        return Ok(out);
    }
    let w = Tensor::new(
        v.shape().to_vec(),
        (0..v.numel()).map(probe_weight).collect(),
    )?;
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn eval(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    Ok(g.value(s).data()[0])
}

/// Largest relative error over all `inputs` between the tape gradient of
/// `f` and central differences with step `h`. Tensor outputs are reduced
/// with a fixed weighted sum.
pub fn check(
    inputs: &[Tensor],
    h: f64,
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    g.backward(s)?;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad_tensor(*v).into_data();
        let mut err = None;
        let numeric = numeric_grad(inputs[k].data(), h, |x| {
            let mut probe = inputs.to_vec();
            probe[k] = Tensor::new(inputs[k].shape().to_vec(), x.to_vec()).expect("same shape");
            eval(&probe, f).unwrap_or_else(|e| {
                err = Some(e);
                f64::NAN
            })
        });
        if let Some(e) = err {
            return Err(e);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let good = check(&[x.clone()], 1e-5, &|g, v| Ok(g.tanh(v[0]))).unwrap();
        assert!(good < 1e-8, "{good}");
        // relu evaluated right at its kink has a one-sided derivative.
        let kink = check(&[Tensor::vector(vec![0.0])], 1e-5, &|g, v| Ok(g.relu(v[0]))).unwrap();
        assert!(kink > 0.1);
    }

    #[test]
    fn rel_err_edge_cases() {
        assert_eq!(rel_err(&[0.0], &[0.0]), 0.0);
        assert!((rel_err(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
