//! Projects a shifted and discounted return distribution back onto the
//! fixed atom grid, as done for the critic's bootstrap target.
//!
//! cargo run --example categorical_projection

use simbav2::distributional::ReturnSupport;

fn main() -> simbav2::Result<()> {
    let support = ReturnSupport::new(-5.0, 5.0, 11)?;
    println!("atoms: {:?}", support.atoms());

    // Next-state distribution: most mass near +2.
    let mut next = vec![0.0; 11];
    next[6] = 0.2;
    next[7] = 0.6;
    next[8] = 0.2;
    let (reward, gamma) = (0.37, 0.99);
    let shifted: Vec<f64> = support.atoms().iter().map(|z| reward + gamma * z).collect();
    let target = support.project(&shifted, &next);

    println!("E[next]   = {:.4}", support.expectation(&next));
    println!("E[target] = {:.4}  (r + gamma * E[next] = {:.4})", support.expectation(&target), reward + gamma * support.expectation(&next));
    println!("target mass = {:.15}", target.iter().sum::<f64>());
    for (z, p) in support.atoms().iter().zip(&target) {
        println!("{z:5.1} {}", "#".repeat((p * 60.0).round() as usize));
    }

    // Values outside the support are clamped onto the edge atoms.
    let edge = support.project(&[9.0, -12.0], &[0.5, 0.5]);
    println!("clamped: first {:.2}, last {:.2}", edge[0], edge[10]);
    Ok(())
}
