//! Short pendulum runs with individual components switched off, compared at
//! the same step budget. Uses the same value validation as the sweep command.
//!
//! cargo run --release --example ablation_sweep -- 8000

use simbav2::cli::{sweep_config, Axis};
use simbav2::config::TrainConfig;
use simbav2::trainer::{MemorySink, Trainer};

const PRESET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/pendulum_desk.cfg");

fn main() -> simbav2::Result<()> {
    let steps = std::env::args().nth(1).unwrap_or_else(|| "4000".into());
    let mut base = TrainConfig::load(PRESET.as_ref())?;
    base.set("total_steps", &steps)?;
    base.set("learning_starts", "1000")?;
    base.set("eval_episodes", "5")?;
    base.set("telemetry_every", "0")?;

    println!("{:<36} {:>12} {:>10}", "ablation", "best return", "final");
    for flags in ["none", "no_shift", "no_l2", "mse_loss", "no_reward_scaling", "use_layernorm"] {
        let cfg = sweep_config(&base, Axis::Ablation, flags)?;
        let mut trainer = Trainer::new(&cfg)?;
        let mut sink = MemorySink::default();
        trainer.run(&mut sink, None)?;
        let best = sink.evals.iter().map(|e| e.return_mean).fold(f64::NEG_INFINITY, f64::max);
        let last = sink.evals.last().map_or(f64::NAN, |e| e.return_mean);
        println!("{flags:<36} {best:>12.1} {last:>10.1}");
    }
    Ok(())
}
