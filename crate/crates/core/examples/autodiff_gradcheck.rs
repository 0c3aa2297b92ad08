//! Builds a small computation on the tape, backpropagates, and compares the
//! result with central finite differences.
//!
//! cargo run --example autodiff_gradcheck

use simbav2::gradcheck::check;
use simbav2::{Graph, Result, Tensor};

fn main() -> Result<()> {
    // f(x, W) = mean(softmax(tanh(x W^T)) * c) for a fixed weighting c
    let x = Tensor::from_rows(&[vec![0.3, -1.1, 0.8], vec![1.5, 0.2, -0.4]])?;
    let w = Tensor::from_rows(&[vec![0.5, 0.1, -0.3], vec![-0.7, 0.9, 0.2], vec![0.05, -0.2, 0.6], vec![1.0, 0.0, 0.4]])?;

    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let wv = g.param(w.clone());
    let z = g.linear(xv, wv)?;
    let a = g.tanh(z);
    let p = g.softmax_lastaxis(a);
    let c = g.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5, 3.0], vec![0.0, 1.0, -1.0, 2.0]])?);
    let pc = g.mul(p, c)?;
    let loss = g.mean(pc);
    g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).item()?);
    println!("dL/dW row 0 = {:?}", &g.grad(wv).unwrap()[..3]);

    let err = check(&[x, w], 1e-6, &|g, v| {
        let z = g.linear(v[0], v[1])?;
        let a = g.tanh(z);
        let l = g.l2_normalize_lastaxis(a, 1e-8);
        Ok(g.softmax_lastaxis(l))
    })?;
    println!("relative error vs finite differences: {err:.3e}");
    assert!(err < 1e-6);
    Ok(())
}
