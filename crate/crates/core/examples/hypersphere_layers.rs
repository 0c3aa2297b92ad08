//! Shift embedding, weight projection, LERP blocks, and the scaler
//! initialisation check on the unit sphere.
//!
//! cargo run --example hypersphere_layers

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use simbav2::hypersphere::{init_orthonormal, lerp, project_weights, shift_embed};
use simbav2::Tensor;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> simbav2::Result<()> {
    // Magnitude survives the projection thanks to the appended constant.
    for o in [[0.0, 0.0], [4.0, 0.0], [1.0, 0.0], [2.0, 0.0]] {
        let e = shift_embed(&o, 3.0)?;
        println!("shift_embed({o:?}, c=3) = {e:.4?}  |e| = {:.12}", norm(&e));
    }

    let mut w = Tensor::from_rows(&[vec![2.0, 0.0], vec![3.0, 4.0]])?;
    project_weights(&mut w);
    println!("projected rows: {:?} / {:?}", w.row(0), w.row(1));

    // LERP between two unit vectors, re-normalised.
    let h = [1.0, 0.0];
    let ht = [0.0, 1.0];
    for a in [0.0, 0.25, 0.5, 1.0] {
        println!("lerp(alpha={a}) = {:.4?}", lerp(&h, &ht, &[a, a]));
    }

    // Monte-Carlo of ||s * W h||^2 for orthonormal W and unit h.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for d in [64, 256, 512] {
        let w = init_orthonormal(d, d, &mut rng);
        let s = (2.0 / d as f64).sqrt();
        let trials = 2000;
        let mut total = 0.0;
        for _ in 0..trials {
            let h: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&h);
            let sq: f64 = (0..d)
                .map(|r| (s * w.row(r).iter().zip(&h).map(|(a, b)| a * b / n).sum::<f64>()).powi(2))
                .sum();
            total += sq;
        }
        println!("d_h = {d:4}: mean ||s*Wh||^2 = {:.6}  (2/d_h = {:.6})", total / trials as f64, 2.0 / d as f64);
    }
    Ok(())
}
