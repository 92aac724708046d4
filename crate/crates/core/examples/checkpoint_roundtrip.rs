//! Train briefly, save the best checkpoint, load it back and confirm the
//! validation MRR is reproduced exactly.

use tkgmatch::data::Split;
use tkgmatch::synth::{cyclic, CyclicParams};
use tkgmatch::train::{evaluate, metrics_csv, train, Checkpoint, FilterMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = cyclic(&CyclicParams::default(), 3)?.dataset.augment_inverse()?;
    let mut config = TrainConfig::default();
    config.apply_text("d_e=32\nd_t=8\nkernels=8\nepochs=5\nlr=0.003")?;
    let outcome = train(&ds, &config, |_| {})?;
    print!("{}", metrics_csv(&outcome.rows));

    let path = std::env::temp_dir().join(format!("tkgmatch-{}.ckpt", std::process::id()));
    outcome.checkpoint(&config).save(&path)?;
    let loaded = Checkpoint::load_for(&path, &ds)?;
    let report = evaluate(&ds, &loaded.state, Split::Valid, FilterMode::TimeAware, 0)?;
    println!("recorded validation MRR {} at epoch {}", loaded.val_mrr, loaded.epoch);
    println!("reloaded validation MRR {}", report.mrr);
    println!("bit-identical: {}", report.mrr.to_bits() == loaded.val_mrr.to_bits());
    std::fs::remove_file(&path)?;
    Ok(())
}
