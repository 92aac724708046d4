//! Interval-parity task: the answer depends only on whether the gap since
//! the previous event is odd or even. Compares the full model with one
//! whose time encoding is switched off.

use tkgmatch::data::Split;
use tkgmatch::synth::{parity, ParityParams};
use tkgmatch::train::{evaluate, train, FilterMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let ds = parity(&ParityParams::default(), seed)?.dataset.augment_inverse()?;
    for disable_time in [false, true] {
        let mut config = TrainConfig::default();
        config.apply_text(&format!(
            "m=1\nn=1\nk=1\nd_e=32\nd_t=16\nkernels=16\ndropout=0\nlr=0.003\nepochs=100\npatience=40\nseed={seed}\ndisable_time={disable_time}"
        ))?;
        let outcome = train(&ds, &config, |_| {})?;
        let report = evaluate(&ds, &outcome.state, Split::Test, FilterMode::TimeAware, 0)?;
        println!(
            "disable_time={disable_time:<5} best epoch {:>3}  test MRR {:.4}",
            outcome.best_epoch, report.mrr
        );
    }
    Ok(())
}
