//! The three historical structures attached to a query timestamp.
//!
//! * [`QueryHistory`]: the latest timestamps at which the query subject was
//!   linked through the query relation, with the objects seen at each.
//! * [`CandidateHistory`]: the `n` calendar snapshots right before `t_q`,
//!   shared by every candidate entity.
//! * [`BackgroundGraph`]: the deduplicated union of the last `k` snapshots.
//!
//! Every extractor only looks at timestamps strictly below `t_q`.

use std::collections::{BTreeSet, HashMap};

use crate::data::{DataError, Quadruple, SnapshotGraph, Split, TkgDataset};

/// Lengths of the three structures plus an optional cap on how far back the
/// query-history search may look.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistoryConfig {
    /// Maximum query-history length.
    pub m: usize,
    /// Candidate-history length.
    pub n: usize,
    /// Snapshots merged into the background graph.
    pub k: usize,
    /// Only timestamps in `[t_q - window, t_q)` are searched for query
    /// history. `None` searches back to the first snapshot.
    pub window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryStep {
    pub timestamp: usize,
    /// Sorted, deduplicated objects of `(e_q, r_q, ·, timestamp)`.
    pub neighbors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryHistory {
    pub subject: usize,
    pub relation: usize,
    pub t_q: usize,
    /// Oldest first.
    pub steps: Vec<HistoryStep>,
}

impl QueryHistory {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `t_q - t_1`, the span covered by the oldest step.
    pub fn max_interval(&self) -> Option<usize> {
        self.steps.first().map(|s| self.t_q - s.timestamp)
    }
}

#[derive(Clone, Debug)]
pub struct CandidateHistory<'a> {
    pub t_q: usize,
    /// Oldest first.
    pub snapshots: Vec<&'a SnapshotGraph>,
    /// `t_q - t'_i` for each snapshot.
    pub intervals: Vec<usize>,
}

impl CandidateHistory<'_> {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackgroundGraph {
    pub t_q: usize,
    /// Sorted, deduplicated `(subject, relation, object)` triples.
    pub edges: Vec<(usize, usize, usize)>,
    /// Entities without any incident edge, sorted.
    pub isolated: Vec<usize>,
}

/// Scans snapshots backwards from `t_q - 1` and keeps the `m` most recent
/// timestamps holding at least one `(subject, relation, ·)` fact.
pub fn extract_query_history(
    query: (usize, usize, usize),
    snapshots: &[SnapshotGraph],
    m: usize,
    window: Option<usize>,
) -> QueryHistory {
    let (subject, relation, t_q) = query;
    let end = t_q.min(snapshots.len());
    let start = window.map_or(0, |w| t_q.saturating_sub(w));
    let mut steps = Vec::new();
    for snap in snapshots[start.min(end)..end].iter().rev() {
        if steps.len() == m {
            break;
        }
        let neighbors: BTreeSet<usize> = snap
            .edges()
            .iter()
            .filter(|&&(s, r, _)| s == subject && r == relation)
            .map(|&(_, _, o)| o)
            .collect();
        if !neighbors.is_empty() {
            steps.push(HistoryStep {
                timestamp: snap.index(),
                neighbors: neighbors.into_iter().collect(),
            });
        }
    }
    steps.reverse();
    QueryHistory {
        subject,
        relation,
        t_q,
        steps,
    }
}

/// The `min(n, t_q)` snapshots immediately preceding `t_q`.
pub fn extract_candidate_history(snapshots: &[SnapshotGraph], t_q: usize, n: usize) -> CandidateHistory<'_> {
    let end = t_q.min(snapshots.len());
    let start = t_q.saturating_sub(n).min(end);
    let chosen: Vec<&SnapshotGraph> = snapshots[start..end].iter().collect();
    let intervals = chosen.iter().map(|s| t_q - s.index()).collect();
    CandidateHistory {
        t_q,
        snapshots: chosen,
        intervals,
    }
}

/// Union of the triples in snapshots `[max(0, t_q - k), t_q)`.
pub fn build_background_graph(
    snapshots: &[SnapshotGraph],
    t_q: usize,
    k: usize,
    num_entities: usize,
) -> BackgroundGraph {
    let end = t_q.min(snapshots.len());
    let start = t_q.saturating_sub(k).min(end);
    let edges: BTreeSet<(usize, usize, usize)> = snapshots[start..end]
        .iter()
        .flat_map(|s| s.edges().iter().copied())
        .collect();
    let mut touched = vec![false; num_entities];
    for &(s, _, o) in &edges {
        touched[s] = true;
        touched[o] = true;
    }
    BackgroundGraph {
        t_q,
        edges: edges.into_iter().collect(),
        isolated: (0..num_entities).filter(|&e| !touched[e]).collect(),
    }
}

/// Per `(subject, relation)` list of timestamps and objects, so query
/// histories for a whole timestamp are a binary search each instead of a
/// snapshot scan.
#[derive(Clone, Debug, Default)]
pub struct HistoryIndex {
    by_pair: HashMap<(usize, usize), Vec<HistoryStep>>,
}

impl HistoryIndex {
    pub fn new(dataset: &TkgDataset) -> Self {
        let mut grouped: HashMap<(usize, usize), BTreeSetMap> = HashMap::new();
        for q in dataset.all_facts() {
            grouped
                .entry((q.subject, q.relation))
                .or_default()
                .entry(q.timestamp)
                .or_default()
                .insert(q.object);
        }
        let by_pair = grouped
            .into_iter()
            .map(|(key, per_t)| {
                let steps = per_t
                    .into_iter()
                    .map(|(timestamp, objs)| HistoryStep {
                        timestamp,
                        neighbors: objs.into_iter().collect(),
                    })
                    .collect();
                (key, steps)
            })
            .collect();
        HistoryIndex { by_pair }
    }

    /// Same result as [`extract_query_history`] over the dataset snapshots.
    pub fn query_history(
        &self,
        subject: usize,
        relation: usize,
        t_q: usize,
        m: usize,
        window: Option<usize>,
    ) -> QueryHistory {
        let steps = match self.by_pair.get(&(subject, relation)) {
            Some(all) => {
                let end = all.partition_point(|s| s.timestamp < t_q);
                let floor = window.map_or(0, |w| t_q.saturating_sub(w));
                let start = all[..end].partition_point(|s| s.timestamp < floor);
                let start = start.max(end.saturating_sub(m));
                all[start..end].to_vec()
            }
            None => Vec::new(),
        };
        QueryHistory {
            subject,
            relation,
            t_q,
            steps,
        }
    }
}

type BTreeSetMap = std::collections::BTreeMap<usize, BTreeSet<usize>>;

/// Everything the encoders need for one query timestamp.
#[derive(Clone, Debug)]
pub struct HistoryBundle<'a> {
    pub t_q: usize,
    pub queries: Vec<QueryHistory>,
    pub candidates: CandidateHistory<'a>,
    pub background: BackgroundGraph,
}

impl<'a> HistoryBundle<'a> {
    /// `queries` are `(subject, relation)` pairs asked at `t_q`.
    pub fn build(
        dataset: &'a TkgDataset,
        index: &HistoryIndex,
        t_q: usize,
        queries: &[(usize, usize)],
        config: &HistoryConfig,
    ) -> Self {
        let visible = dataset.snapshots_before(t_q);
        HistoryBundle {
            t_q,
            queries: queries
                .iter()
                .map(|&(s, r)| index.query_history(s, r, t_q, config.m, config.window))
                .collect(),
            candidates: extract_candidate_history(visible, t_q, config.n),
            background: build_background_graph(visible, t_q, config.k, dataset.num_entities()),
        }
    }

    /// Latest timestamp referenced anywhere in the bundle.
    pub fn latest_timestamp(&self) -> Option<usize> {
        let q = self.queries.iter().filter_map(|q| q.steps.last().map(|s| s.timestamp));
        let c = self.candidates.snapshots.iter().map(|s| s.index());
        q.chain(c).max()
    }
}

/// Averages of `t_q - t_1` over queries with a non-empty query history and
/// of `t_q - t'_1` over queries with a non-empty candidate history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalStats {
    pub mean_dt: f64,
    pub mean_dt_prime: f64,
    pub k: usize,
    pub queries: usize,
}

/// Interval statistics over every (augmented) fact of `split` viewed as a
/// query.
pub fn history_interval_stats(
    dataset: &TkgDataset,
    config: &HistoryConfig,
    split: Split,
) -> Result<IntervalStats, DataError> {
    let facts: &[Quadruple] = dataset.split(split);
    if facts.is_empty() {
        return Err(DataError::EmptySplit(split));
    }
    let index = HistoryIndex::new(dataset);
    let (mut dt_sum, mut dt_count) = (0usize, 0usize);
    let (mut dtp_sum, mut dtp_count) = (0usize, 0usize);
    for q in facts {
        let qh = index.query_history(q.subject, q.relation, q.timestamp, config.m, config.window);
        if let Some(dt) = qh.max_interval() {
            dt_sum += dt;
            dt_count += 1;
        }
        let span = config.n.min(q.timestamp).min(dataset.num_snapshots());
        if span > 0 {
            dtp_sum += span;
            dtp_count += 1;
        }
    }
    let mean = |sum: usize, count: usize| if count == 0 { 0.0 } else { sum as f64 / count as f64 };
    Ok(IntervalStats {
        mean_dt: mean(dt_sum, dt_count),
        mean_dt_prime: mean(dtp_sum, dtp_count),
        k: config.k,
        queries: facts.len(),
    })
}
