//! Trains the default configuration on a synthetic dataset and prints the
//! learning curve.
//!
//! `cargo run --release --example learning_curve -- [separation] [epochs]`

use std::time::Instant;

use hypermml::data::{make_synthetic_dataset, SynthConfig};
use hypermml::trainer::{resolve_split, train_with, TrainConfig};

fn main() -> hypermml::Result<()> {
    let mut args = std::env::args().skip(1);
    let sep: f64 = args.next().map_or(5.0, |s| s.parse().expect("separation"));
    let epochs: usize = args.next().map_or(200, |s| s.parse().expect("epochs"));
    let ds = make_synthetic_dataset(&SynthConfig { class_separation: sep, ..SynthConfig::default() })?;
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let split = resolve_split(&cfg, &ds)?;
    let start = Instant::now();
    train_with(&cfg, &ds, &split, |r| {
        if r.epoch % 10 == 0 || r.epoch == 1 {
            println!(
                "{:>4} loss {:.4} train {:.3} eval {:.3} ({:.1}s)",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                r.eval_accuracy.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    Ok(())
}
