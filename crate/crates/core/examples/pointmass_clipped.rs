//! Point-mass reaching task with failure termination. The task has a
//! terminal state, so the critic target takes the smaller of two critics.
//!
//! cargo run --release --example pointmass_clipped -- 6000

use simbav2::config::TrainConfig;
use simbav2::trainer::{MemorySink, Trainer};

fn main() -> simbav2::Result<()> {
    let steps = std::env::args().nth(1).unwrap_or_else(|| "4000".into());
    let mut cfg = TrainConfig::parse(
        "env = pointmass\nactor_hidden = 32\ncritic_hidden = 32\ncritic_blocks = 1\nactor_blocks = 1\n\
         batch_size = 128\nlearning_starts = 1000\neval_every = 500\neval_episodes = 5\ntelemetry_every = 0\n",
    )?;
    cfg.set("total_steps", &steps)?;
    let cfg = cfg.resolve()?;
    println!("clipped double Q: {:?}, gamma: {:?}", cfg.clipped_double_q, cfg.gamma);

    let mut trainer = Trainer::new(&cfg)?;
    println!("critics: {}", trainer.agent.critics.len());
    let mut sink = MemorySink::default();
    trainer.run(&mut sink, None)?;
    for e in &sink.evals {
        println!("step {:5}  return {:8.2} ± {:6.2}", e.env_step, e.return_mean, e.return_std);
    }
    Ok(())
}
