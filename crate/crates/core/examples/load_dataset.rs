//! Load a dataset directory (train/valid/test/stat files), add inverse
//! facts and print a summary.
//!
//! ```text
//! cargo run --example load_dataset -- path/to/ICEWS14
//! ```
//!
//! Without an argument a small random dataset is generated and loaded from
//! a temporary directory.

use std::path::PathBuf;

use tkgmatch::data::{load_dir, Split};
use tkgmatch::synth::{random, RandomParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arg = std::env::args().nth(1);
    let dir = match &arg {
        Some(p) => PathBuf::from(p),
        None => {
            let dir = std::env::temp_dir().join(format!("tkgmatch-load-{}", std::process::id()));
            random(&RandomParams::default(), 7)?.write(&dir)?;
            println!("generated a random dataset in {}", dir.display());
            dir
        }
    };

    let ds = load_dir(&dir, None)?;
    println!(
        "{} entities, {} relations, {} snapshots (granularity {})",
        ds.num_entities(),
        ds.num_base_relations(),
        ds.num_snapshots(),
        ds.time_granularity()
    );
    let ds = ds.augment_inverse()?;
    for split in Split::ALL {
        let ts = ds.timestamps(split);
        match (ts.first(), ts.last()) {
            (Some(a), Some(b)) => println!("  {split:<5} {:>6} facts with inverses, timestamps {a}..={b}", ds.split(split).len()),
            _ => println!("  {split:<5} empty"),
        }
    }
    let busiest = ds.snapshots().iter().max_by_key(|s| s.len()).expect("at least one snapshot");
    println!("busiest snapshot: t={} with {} edges", busiest.index(), busiest.len());
    println!("inverse of relation 0 is {}", ds.inverse_relation(0));
    if arg.is_none() {
        std::fs::remove_dir_all(&dir)?;
    }
    Ok(())
}
