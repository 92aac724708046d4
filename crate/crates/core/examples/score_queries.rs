//! One forward pass of an untrained model: encode the history of every
//! query at a timestamp, score all candidates and show the top three.

use tkgmatch::data::Split;
use tkgmatch::history::HistoryIndex;
use tkgmatch::model::{ModelConfig, ModelState};
use tkgmatch::synth::{cyclic, CyclicParams};
use tkgmatch::train::score_queries;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = cyclic(&CyclicParams::default(), 0)?.dataset.augment_inverse()?;
    let config = ModelConfig {
        entity_dim: 32,
        time_dim: 8,
        kernels: 8,
        ..ModelConfig::default()
    };
    let state = ModelState::new(config, ds.num_entities(), ds.num_relations(), 1)?;
    println!("{} parameters", state.num_scalars());

    let index = HistoryIndex::new(&ds);
    let t = ds.timestamps(Split::Test)[0];
    let queries: Vec<_> = ds.split(Split::Test).iter().filter(|q| q.timestamp == t).take(3).copied().collect();
    let pairs: Vec<_> = queries.iter().map(|q| (q.subject, q.relation)).collect();
    for (q, sv) in queries.iter().zip(score_queries(&state, &ds, &index, t, &pairs)?) {
        let top: Vec<String> = sv.top_k(3).iter().map(|(e, s)| format!("{e}:{s:.3}")).collect();
        println!("({}, {}, ?, {t}) answer {}  top3 {}", q.subject, q.relation, q.object, top.join(" "));
    }
    Ok(())
}
