//! Filtered ranking and split evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{Quadruple, Split, TkgDataset};
use crate::history::{HistoryBundle, HistoryIndex};
use crate::model::{timestamp_logits, Forward, ModelState, ScoreVector};
use crate::Error;

/// Which competitors are removed before ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FilterMode {
    /// Every other entity competes.
    Raw,
    /// Other true answers at the query timestamp are removed.
    #[default]
    TimeAware,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::Raw => "raw",
            FilterMode::TimeAware => "time-aware",
        })
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(FilterMode::Raw),
            "time-aware" | "time_aware" | "filtered" => Ok(FilterMode::TimeAware),
            other => Err(Error::Config(format!("unknown filter mode `{other}`"))),
        }
    }
}

/// Rank of `target` (1 = best) among the candidates of `scores`, comparing
/// logits. Entities in `truth` other than the target are skipped in
/// time-aware mode. Ties count as the mean position of the tied block.
pub fn rank_with_filter(scores: &ScoreVector, target: usize, truth: &[usize], mode: FilterMode) -> Result<f64, Error> {
    let logits = &scores.logits;
    let Some(&own) = logits.get(target) else {
        return Err(Error::Model(format!(
            "target {target} out of range for {} candidates",
            logits.len()
        )));
    };
    let (mut above, mut tied) = (0usize, 0usize);
    for (e, &x) in logits.iter().enumerate() {
        if e == target || (mode == FilterMode::TimeAware && truth.contains(&e)) {
            continue;
        }
        if x > own {
            above += 1;
        } else if x == own {
            tied += 1;
        }
    }
    Ok(1.0 + above as f64 + tied as f64 / 2.0)
}

/// Aggregate rank metrics for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub mode: FilterMode,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// One rank per query, in dataset order.
    pub ranks: Vec<f64>,
}

impl EvalReport {
    pub fn from_ranks(split: Split, mode: FilterMode, ranks: Vec<f64>) -> Result<Self, Error> {
        if ranks.is_empty() {
            return Err(Error::Data(crate::data::DataError::EmptySplit(split)));
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(EvalReport {
            split,
            mode,
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
            ranks,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.ranks.len()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}): MRR {:.4}  H@1 {:.4}  H@3 {:.4}  H@10 {:.4}  over {} queries",
            self.split,
            self.mode,
            self.mrr,
            self.hits1,
            self.hits3,
            self.hits10,
            self.num_queries()
        )
    }
}

/// Objects of every `(s, r, ·, t)` fact across all splits.
#[derive(Clone, Debug, Default)]
pub struct TruthIndex {
    objects: HashMap<(usize, usize, usize), Vec<usize>>,
}

impl TruthIndex {
    pub fn new(dataset: &TkgDataset) -> Self {
        let mut objects: HashMap<_, Vec<usize>> = HashMap::new();
        for q in dataset.all_facts() {
            objects.entry((q.subject, q.relation, q.timestamp)).or_default().push(q.object);
        }
        for v in objects.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        TruthIndex { objects }
    }

    pub fn at(&self, subject: usize, relation: usize, timestamp: usize) -> &[usize] {
        self.objects
            .get(&(subject, relation, timestamp))
            .map_or(&[], Vec::as_slice)
    }
}

/// Facts grouped by timestamp, keeping the original order inside each group.
pub(crate) fn group_by_timestamp(facts: &[Quadruple]) -> BTreeMap<usize, Vec<(usize, Quadruple)>> {
    let mut groups: BTreeMap<usize, Vec<(usize, Quadruple)>> = BTreeMap::new();
    for (i, q) in facts.iter().enumerate() {
        groups.entry(q.timestamp).or_default().push((i, *q));
    }
    groups
}

/// Scores every query `(s, r)` at `t_q` without dropout. Duplicate pairs
/// share one row.
pub fn score_queries(
    state: &ModelState,
    dataset: &TkgDataset,
    index: &HistoryIndex,
    t_q: usize,
    queries: &[(usize, usize)],
) -> Result<Vec<ScoreVector>, Error> {
    let mut unique: Vec<(usize, usize)> = queries.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let bundle = HistoryBundle::build(dataset, index, t_q, &unique, &state.config().history);
    debug_assert!(bundle.latest_timestamp().is_none_or(|t| t < t_q), "history leaks t >= t_q");
    let mut fw = Forward::inference(state);
    let logits = timestamp_logits(&mut fw, &bundle)?;
    let rows = ScoreVector::from_batch(t_q, &unique, fw.graph.value(logits));
    Ok(queries
        .iter()
        .map(|q| rows[unique.binary_search(q).expect("query is in its own dedup list")].clone())
        .collect())
}

/// Ranks every (augmented) fact of `split` as an object query. Timestamps
/// are scored in parallel on `workers` threads (0 = all cores); ranks come
/// back in dataset order regardless.
pub fn evaluate(
    dataset: &TkgDataset,
    state: &ModelState,
    split: Split,
    mode: FilterMode,
    workers: usize,
) -> Result<EvalReport, Error> {
    let facts = dataset.split(split);
    if facts.is_empty() {
        return Err(Error::Data(crate::data::DataError::EmptySplit(split)));
    }
    let index = HistoryIndex::new(dataset);
    let truth = TruthIndex::new(dataset);
    let groups: Vec<_> = group_by_timestamp(facts).into_iter().collect();

    let run = || -> Result<Vec<Vec<(usize, f64)>>, Error> {
        groups
            .par_iter()
            .map(|(t, group)| {
                let pairs: Vec<_> = group.iter().map(|(_, q)| (q.subject, q.relation)).collect();
                let scores = score_queries(state, dataset, &index, *t, &pairs)?;
                group
                    .iter()
                    .zip(&scores)
                    .map(|((i, q), sv)| {
                        let rank = rank_with_filter(sv, q.object, truth.at(q.subject, q.relation, q.timestamp), mode)?;
                        Ok((*i, rank))
                    })
                    .collect()
            })
            .collect()
    };
    let per_group = if workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?
    };

    let mut ranks = vec![0.0; facts.len()];
    for (i, r) in per_group.into_iter().flatten() {
        ranks[i] = r;
    }
    EvalReport::from_ranks(split, mode, ranks)
}
