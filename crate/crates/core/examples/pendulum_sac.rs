//! Trains the full agent on pendulum swing-up with the desk preset and prints
//! the evaluation curve. Pass a step count to shorten or extend the run.
//!
//! cargo run --release --example pendulum_sac -- 15000

use simbav2::config::TrainConfig;
use simbav2::trainer::{MemorySink, Trainer};

const PRESET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/pendulum_desk.cfg");

fn main() -> simbav2::Result<()> {
    let mut cfg = TrainConfig::load(PRESET.as_ref())?;
    if let Some(steps) = std::env::args().nth(1) {
        cfg.set("total_steps", &steps)?;
    }
    let cfg = cfg.resolve()?;
    println!("{}", cfg.to_text());

    let mut trainer = Trainer::new(&cfg)?;
    let mut sink = MemorySink::default();
    let start = std::time::Instant::now();
    let mut shown = 0;
    while trainer.env_step < cfg.total_steps {
        let next = (trainer.env_step + cfg.eval_every).min(cfg.total_steps);
        trainer.run_until(next, &mut sink, None)?;
        for e in &sink.evals[shown..] {
            println!(
                "step {:6}  return {:9.2} ± {:7.2}  alpha {:.3e}  [{:.0}s]",
                e.env_step,
                e.return_mean,
                e.return_std,
                e.alpha,
                start.elapsed().as_secs_f64()
            );
        }
        shown = sink.evals.len();
    }
    println!("{} gradient updates", trainer.agent.updates);
    Ok(())
}
