//! Serialises a trainer mid-run, restores it from bytes, and checks that the
//! restored copy continues exactly like the original.
//!
//! cargo run --release --example checkpoint_resume

use simbav2::checkpoint::Checkpoint;
use simbav2::config::TrainConfig;
use simbav2::trainer::{MemorySink, Trainer};

fn main() -> simbav2::Result<()> {
    let cfg = TrainConfig::parse(
        "actor_hidden = 16\ncritic_hidden = 16\ncritic_blocks = 1\nbatch_size = 64\n\
         learning_starts = 300\ntotal_steps = 1200\neval_every = 300\neval_episodes = 2\ntelemetry_every = 25\n",
    )?
    .resolve()?;

    let mut original = Trainer::new(&cfg)?;
    let mut sink = MemorySink::default();
    original.run_until(700, &mut sink, None)?;

    let bytes = Checkpoint::capture(&original).to_bytes();
    println!("checkpoint at step {}: {} bytes, {} updates so far", original.env_step, bytes.len(), original.agent.updates);
    let mut restored = Checkpoint::from_bytes(&bytes)?.restore()?;

    let (mut a, mut b) = (MemorySink::default(), MemorySink::default());
    original.run(&mut a, None)?;
    restored.run(&mut b, None)?;
    for (x, y) in a.evals.iter().zip(&b.evals) {
        println!("step {:5}: original {:.12}  restored {:.12}", x.env_step, x.return_mean, y.return_mean);
        assert_eq!(x.return_mean.to_bits(), y.return_mean.to_bits());
    }
    assert_eq!(a.telemetry, b.telemetry);
    assert_eq!(Checkpoint::capture(&original).to_bytes(), Checkpoint::capture(&restored).to_bytes());
    println!("final states are byte-identical");

    let mut flipped = bytes.clone();
    flipped[0] ^= 1;
    println!("corrupted header: {}", Checkpoint::from_bytes(&flipped).unwrap_err());
    Ok(())
}
