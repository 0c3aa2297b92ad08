//! Feeds a high-return reward stream through the scaler and shows that the
//! scaled discounted return stays inside the critic's support.
//!
//! cargo run --example reward_scaling

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simbav2::normalizers::RewardScaler;

fn main() -> simbav2::Result<()> {
    let g_max = 5.0;
    let mut bounded = RewardScaler::new(0.99, g_max, 1e-8)?;
    let mut plain = RewardScaler::new(0.99, g_max, 1e-8)?.without_bounding();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_b, mut worst_p) = (0.0f64, 0.0f64);
    let mut start = true;
    for t in 0..10_000 {
        let r = if rng.gen::<f64>() < 0.01 { 2000.0 } else { rng.gen_range(50.0..150.0) };
        let sb = bounded.step(r, start);
        plain.step(r, start);
        start = (t + 1) % 500 == 0;
        worst_b = worst_b.max(bounded.running_return() / bounded.denominator());
        worst_p = worst_p.max(plain.running_return() / plain.denominator());
        if t % 2000 == 0 {
            println!("t={t:5} raw {r:7.1} scaled {sb:.4} denominator {:.2} G {:.0}", bounded.denominator(), bounded.running_return());
        }
    }
    println!("max scaled return: bounded {worst_b:.4} (limit {g_max}), variance-only {worst_p:.4}");
    Ok(())
}
