//! The three history structures attached to one query.

use tkgmatch::data::{Quadruple, TkgDataset};
use tkgmatch::history::{build_background_graph, extract_candidate_history, HistoryConfig, HistoryIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = Quadruple::new;
    let facts = vec![
        q(0, 0, 1, 0),
        q(2, 1, 3, 0),
        q(0, 0, 2, 2),
        q(3, 1, 4, 3),
        q(0, 0, 1, 4),
        q(1, 1, 0, 5),
        q(0, 0, 4, 6),
    ];
    let ds = TkgDataset::new(5, 2, facts, vec![], vec![])?.augment_inverse()?;
    let cfg = HistoryConfig { m: 2, n: 3, k: 2, window: None };
    let index = HistoryIndex::new(&ds);

    let (subject, relation, t_q) = (0, 0, 6);
    println!("query ({subject}, {relation}, ?, {t_q})");

    let qh = index.query_history(subject, relation, t_q, cfg.m, cfg.window);
    println!("query history (last {} matching timestamps):", cfg.m);
    for step in &qh.steps {
        println!("  t={} interval={} neighbors={:?}", step.timestamp, t_q - step.timestamp, step.neighbors);
    }

    let visible = ds.snapshots_before(t_q);
    let ch = extract_candidate_history(visible, t_q, cfg.n);
    println!("candidate history (last {} snapshots):", cfg.n);
    for (snap, d) in ch.snapshots.iter().zip(&ch.intervals) {
        println!("  t={} interval={d} edges={:?}", snap.index(), snap.edges());
    }

    let bg = build_background_graph(visible, t_q, cfg.k, ds.num_entities());
    println!("background graph (union of last {} snapshots): {:?}", cfg.k, bg.edges);
    println!("isolated entities: {:?}", bg.isolated);
    Ok(())
}
