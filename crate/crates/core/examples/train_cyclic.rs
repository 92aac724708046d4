//! Train on the cyclic toy graph (20 entities alternating between two
//! targets) and report filtered test metrics.
//!
//! ```text
//! cargo run --release --example train_cyclic -- [seed]
//! ```

use tkgmatch::data::Split;
use tkgmatch::synth::{cyclic, CyclicParams};
use tkgmatch::train::{evaluate, train, FilterMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let ds = cyclic(&CyclicParams::default(), seed)?.dataset.augment_inverse()?;
    let config = TrainConfig {
        epochs: 200,
        seed,
        ..TrainConfig::default()
    };

    let outcome = train(&ds, &config, |row| {
        println!(
            "epoch {:>3}  loss {:.4}  valid MRR {:.4}  {:.1}s",
            row.epoch,
            row.loss.unwrap_or(f64::NAN),
            row.mrr().unwrap_or(f64::NAN),
            row.seconds
        );
    })?;
    println!("best epoch {}", outcome.best_epoch);
    println!("{}", evaluate(&ds, &outcome.state, Split::Test, FilterMode::TimeAware, 0)?);
    println!("{}", evaluate(&ds, &outcome.state, Split::Test, FilterMode::Raw, 0)?);
    Ok(())
}
