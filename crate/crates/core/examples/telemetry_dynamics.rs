//! Records critic training dynamics for the hyperspherical network and for
//! the LayerNorm residual baseline, then compares how much the encoder's
//! effective learning rate drifts late in training.
//!
//! cargo run --release --example telemetry_dynamics -- 8000

use simbav2::config::TrainConfig;
use simbav2::telemetry::drift_ratio;
use simbav2::trainer::{MemorySink, Trainer};

const PRESET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/pendulum_desk.cfg");

fn main() -> simbav2::Result<()> {
    let steps = std::env::args().nth(1).unwrap_or_else(|| "5000".into());
    let mut base = TrainConfig::load(PRESET.as_ref())?;
    base.set("total_steps", &steps)?;
    base.set("learning_starts", "1000")?;
    base.set("eval_episodes", "3")?;

    for variant in ["none", "use_layernorm"] {
        let cfg = base.ablate_all(variant)?.resolve()?;
        let mut trainer = Trainer::new(&cfg)?;
        let mut sink = MemorySink::default();
        trainer.run(&mut sink, None)?;
        let t = &sink.telemetry;
        println!("== {variant}: {} telemetry rows", t.len());
        println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "update", "feat", "|W|", "|grad|", "elr");
        for r in t.iter().step_by((t.len() / 8).max(1)) {
            let e = &r.encoder;
            println!("{:>8} {:>10.4} {:>10.4} {:>10.3e} {:>10.3e}", r.update_step, e.feat_norm, e.w_norm_all, e.g_norm, e.elr);
        }
        let elr: Vec<f64> = t.iter().map(|r| r.encoder.elr).collect();
        match drift_ratio(&elr) {
            Some(d) => println!("encoder ELR drift ratio (second half, max/min): {d:.3}\n"),
            None => println!("no updates recorded\n"),
        }
    }
    Ok(())
}
