//! Checks shared by the acceptance run and the focused integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tkgmatch::autodiff::{relative_error, Graph, GraphError, NodeId, Tensor};
use tkgmatch::data::{Quadruple, SnapshotGraph, TkgDataset};
use tkgmatch::history::{build_background_graph, extract_candidate_history, extract_query_history, HistoryBundle, HistoryConfig, HistoryIndex};
use tkgmatch::model::ScoreVector;
use tkgmatch::train::{rank_with_filter, FilterMode};

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId, GraphError>>;

/// One randomized gradient case: inputs, which of them are differentiated,
/// and the op applied to them.
pub struct OpCase {
    pub inputs: Vec<Tensor>,
    pub differentiable: Vec<bool>,
    pub training: bool,
    pub build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so a ReLU kink is never straddled.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=4)
}

pub const OP_KINDS: [&str; 24] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "concat",
    "mean_rows",
    "cos",
    "sigmoid",
    "tanh",
    "relu",
    "softmax",
    "log",
    "gather",
    "scatter_mean",
    "conv1d",
    "reshape",
    "flatten",
    "dropout",
    "dot_rows",
    "cross_entropy",
    "sum",
    "standardize",
];

pub fn op_case(kind: &str, rng: &mut ChaCha8Rng) -> OpCase {
    let (r, c) = (dim(rng), dim(rng));
    let all = |n: usize| vec![true; n];
    let case = |inputs: Vec<Tensor>, build: Build| OpCase {
        differentiable: all(inputs.len()),
        inputs,
        training: false,
        build,
    };
    match kind {
        "matmul" => {
            let k = dim(rng);
            case(
                vec![uniform(rng, &[r, k], -1.0, 1.0), uniform(rng, &[k, c], -1.0, 1.0)],
                Box::new(|g, x| g.matmul(x[0], x[1])),
            )
        }
        "add" => {
            let rhs = if rng.gen_bool(0.5) { vec![r, c] } else { vec![c] };
            case(
                vec![uniform(rng, &[r, c], -1.0, 1.0), uniform(rng, &rhs, -1.0, 1.0)],
                Box::new(|g, x| g.add(x[0], x[1])),
            )
        }
        "sub" => case(
            vec![uniform(rng, &[r, c], -1.0, 1.0), uniform(rng, &[r, c], -1.0, 1.0)],
            Box::new(|g, x| g.sub(x[0], x[1])),
        ),
        "mul" => case(
            vec![uniform(rng, &[r, c], -1.0, 1.0), uniform(rng, &[r, c], -1.0, 1.0)],
            Box::new(|g, x| g.mul(x[0], x[1])),
        ),
        "scale" => {
            let k = rng.gen_range(-2.0..2.0);
            case(vec![uniform(rng, &[r, c], -1.0, 1.0)], Box::new(move |g, x| g.scale(x[0], k)))
        }
        "add_scalar" => {
            let k = rng.gen_range(-2.0..2.0);
            case(vec![uniform(rng, &[r, c], -1.0, 1.0)], Box::new(move |g, x| g.add_scalar(x[0], k)))
        }
        "concat" => {
            let c2 = dim(rng);
            case(
                vec![uniform(rng, &[r, c], -1.0, 1.0), uniform(rng, &[r, c2], -1.0, 1.0)],
                Box::new(|g, x| g.concat(x[0], x[1])),
            )
        }
        "mean_rows" => case(vec![uniform(rng, &[r, c], -1.0, 1.0)], Box::new(|g, x| g.mean_rows(x[0]))),
        "cos" => case(vec![uniform(rng, &[r, c], -3.0, 3.0)], Box::new(|g, x| g.cos(x[0]))),
        "sigmoid" => case(vec![uniform(rng, &[r, c], -3.0, 3.0)], Box::new(|g, x| g.sigmoid(x[0]))),
        "tanh" => case(vec![uniform(rng, &[r, c], -2.0, 2.0)], Box::new(|g, x| g.tanh(x[0]))),
        "relu" => case(vec![off_zero(rng, &[r, c])], Box::new(|g, x| g.relu(x[0]))),
        "softmax" => case(vec![uniform(rng, &[r, c + 1], -2.0, 2.0)], Box::new(|g, x| g.softmax(x[0]))),
        "log" => case(vec![uniform(rng, &[r, c], 0.5, 2.0)], Box::new(|g, x| g.log(x[0]))),
        "gather" => {
            let len = rng.gen_range(1..=6);
            let index: Vec<usize> = (0..len).map(|_| rng.gen_range(0..r)).collect();
            case(
                vec![uniform(rng, &[r, c], -1.0, 1.0)],
                Box::new(move |g, x| g.gather(x[0], index.clone())),
            )
        }
        "scatter_mean" => {
            let len = rng.gen_range(1..=6);
            let groups = dim(rng);
            let index: Vec<usize> = (0..len).map(|_| rng.gen_range(0..groups)).collect();
            case(
                vec![uniform(rng, &[len, c], -1.0, 1.0)],
                Box::new(move |g, x| g.scatter_mean(x[0], index.clone(), groups)),
            )
        }
        "conv1d" => {
            let (b, h, w, ch) = (dim(rng), rng.gen_range(1..=2), rng.gen_range(2..=5), dim(rng));
            let k = if rng.gen_bool(0.5) { 1 } else { 3 };
            case(
                vec![
                    uniform(rng, &[b, h, w], -1.0, 1.0),
                    uniform(rng, &[ch, h, k], -1.0, 1.0),
                    uniform(rng, &[ch], -1.0, 1.0),
                ],
                Box::new(|g, x| g.conv1d(x[0], x[1], x[2])),
            )
        }
        "reshape" => {
            let target = if rng.gen_bool(0.5) { vec![c, r] } else { vec![r * c] };
            case(
                vec![uniform(rng, &[r, c], -1.0, 1.0)],
                Box::new(move |g, x| g.reshape(x[0], target.clone())),
            )
        }
        "flatten" => {
            let d = dim(rng);
            case(vec![uniform(rng, &[r, c, d], -1.0, 1.0)], Box::new(|g, x| g.flatten(x[0])))
        }
        "dropout" => {
            let rate = rng.gen_range(0.1..0.6);
            OpCase {
                training: true,
                ..case(vec![uniform(rng, &[r, c], -1.0, 1.0)], Box::new(move |g, x| g.dropout(x[0], rate)))
            }
        }
        "dot_rows" => {
            let q = if rng.gen_bool(0.5) { vec![dim(rng), c] } else { vec![c] };
            case(
                vec![uniform(rng, &[r, c], -1.0, 1.0), uniform(rng, &q, -1.0, 1.0)],
                Box::new(|g, x| g.dot_rows(x[0], x[1])),
            )
        }
        "cross_entropy" => {
            let classes = c + 1;
            let targets: Vec<usize> = (0..r).map(|_| rng.gen_range(0..classes)).collect();
            case(
                vec![uniform(rng, &[r, classes], -2.0, 2.0)],
                Box::new(move |g, x| g.cross_entropy(x[0], targets.clone())),
            )
        }
        "sum" => case(vec![uniform(rng, &[r, c], -1.0, 1.0)], Box::new(|g, x| g.sum(x[0]))),
        "standardize" => case(
            vec![uniform(rng, &[r, c + 2], -1.0, 1.0)],
            Box::new(|g, x| g.standardize(x[0], 1e-5)),
        ),
        other => panic!("no generator for op kind `{other}`"),
    }
}

/// `sum(op(inputs) * w)` for a fixed random `w`, so every output coordinate
/// carries a distinct weight.
fn weighted_loss(case: &OpCase, inputs: &[Tensor]) -> Result<(Graph, Vec<NodeId>, NodeId), GraphError> {
    let mut g = Graph::new(case.training, 17);
    let nodes: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = (case.build)(&mut g, &nodes)?;
    let shape = g.shape(out).to_vec();
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(99), &shape, 0.5, 1.5);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    let loss = g.sum(p)?;
    Ok((g, nodes, loss))
}

/// Worst coordinate-wise relative error of reverse mode against central
/// differences over every differentiable input of `case`.
pub fn op_case_error(case: &OpCase, eps: f64) -> Result<f64, GraphError> {
    let (g, nodes, loss) = weighted_loss(case, &case.inputs)?;
    let grads = g.gradients(loss)?;
    let mut worst = 0.0f64;
    for (i, node) in nodes.iter().enumerate() {
        if !case.differentiable[i] {
            continue;
        }
        let analytic = grads.wrt(*node).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; case.inputs[i].len()]);
        for j in 0..case.inputs[i].len() {
            let mut shifted = case.inputs.clone();
            shifted[i].values_mut()[j] += eps;
            let (gp, _, lp) = weighted_loss(case, &shifted)?;
            shifted[i].values_mut()[j] -= 2.0 * eps;
            let (gm, _, lm) = weighted_loss(case, &shifted)?;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    Ok(worst)
}

/// Worst error per op kind over `cases` random cases each.
pub fn op_gradient_suite(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OP_KINDS
        .iter()
        .map(|&kind| {
            let worst = (0..cases)
                .map(|_| op_case_error(&op_case(kind, &mut rng), GRAD_EPS).unwrap())
                .fold(0.0, f64::max);
            (kind, worst)
        })
        .collect()
}

pub fn random_tkg(rng: &mut ChaCha8Rng) -> TkgDataset {
    let entities = rng.gen_range(2..=30);
    let relations = rng.gen_range(1..=4);
    let timestamps = rng.gen_range(1..=20);
    let mut facts = Vec::new();
    for t in 0..timestamps {
        for _ in 0..rng.gen_range(0..=12) {
            facts.push(Quadruple::new(
                rng.gen_range(0..entities),
                rng.gen_range(0..relations),
                rng.gen_range(0..entities),
                t,
            ));
        }
    }
    let ds = TkgDataset::new(entities, relations, facts, vec![], vec![]).unwrap();
    if rng.gen_bool(0.5) {
        ds.augment_inverse().unwrap()
    } else {
        ds
    }
}

/// Linear scan over the flat fact list.
pub fn oracle_query_history(
    facts: &[Quadruple],
    (s, r, t_q): (usize, usize, usize),
    m: usize,
    window: Option<usize>,
) -> Vec<(usize, Vec<usize>)> {
    let floor = window.map_or(0, |w| t_q.saturating_sub(w));
    let times: BTreeSet<usize> = facts
        .iter()
        .filter(|q| q.subject == s && q.relation == r && q.timestamp < t_q && q.timestamp >= floor)
        .map(|q| q.timestamp)
        .collect();
    let keep: Vec<usize> = times.into_iter().rev().take(m).collect();
    keep.into_iter()
        .rev()
        .map(|t| {
            let objs: BTreeSet<usize> = facts
                .iter()
                .filter(|q| q.subject == s && q.relation == r && q.timestamp == t)
                .map(|q| q.object)
                .collect();
            (t, objs.into_iter().collect())
        })
        .collect()
}

pub fn oracle_background(facts: &[Quadruple], t_q: usize, k: usize, entities: usize) -> (Vec<(usize, usize, usize)>, Vec<usize>) {
    let edges: BTreeSet<(usize, usize, usize)> = facts
        .iter()
        .filter(|q| q.timestamp < t_q && q.timestamp + k >= t_q)
        .map(|q| (q.subject, q.relation, q.object))
        .collect();
    let isolated = (0..entities).filter(|&e| !edges.iter().any(|&(s, _, o)| s == e || o == e)).collect();
    (edges.into_iter().collect(), isolated)
}

#[derive(Debug, Default)]
pub struct ExtractionSummary {
    pub graphs: usize,
    pub queries: usize,
    pub mismatches: Vec<String>,
    pub leaks: usize,
}

fn leaks_in(facts: &[Quadruple], bundle: &HistoryBundle, t_q: usize) -> usize {
    let seen_before = |(s, r, o): (usize, usize, usize), t: Option<usize>| {
        facts
            .iter()
            .any(|q| (q.subject, q.relation, q.object) == (s, r, o) && q.timestamp < t_q && t.is_none_or(|t| q.timestamp == t))
    };
    let mut leaks = 0;
    for qh in &bundle.queries {
        for step in &qh.steps {
            leaks += usize::from(step.timestamp >= t_q);
            leaks += step.neighbors.iter().filter(|&&o| !seen_before((qh.subject, qh.relation, o), Some(step.timestamp))).count();
        }
    }
    for snap in &bundle.candidates.snapshots {
        leaks += usize::from(snap.index() >= t_q);
        leaks += snap.edges().iter().filter(|&&e| !seen_before(e, Some(snap.index()))).count();
    }
    leaks += bundle.background.edges.iter().filter(|&&e| !seen_before(e, None)).count();
    leaks += usize::from(bundle.latest_timestamp().is_some_and(|t| t >= t_q));
    leaks
}

fn snapshot_edges(snap: &SnapshotGraph) -> BTreeSet<(usize, usize, usize)> {
    snap.edges().iter().copied().collect()
}

/// Compares the extractors with linear-scan oracles on `graphs` random
/// TKGs and audits every structure for facts at or after the query time.
pub fn extraction_oracle(graphs: usize, seed: u64) -> ExtractionSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ExtractionSummary::default();
    for g in 0..graphs {
        let ds = random_tkg(&mut rng);
        let facts: Vec<Quadruple> = ds.all_facts().copied().collect();
        let index = HistoryIndex::new(&ds);
        let cfg = HistoryConfig {
            m: rng.gen_range(1..=6),
            n: rng.gen_range(1..=6),
            k: rng.gen_range(1..=6),
            window: if rng.gen_bool(0.3) { Some(rng.gen_range(1..=10)) } else { None },
        };
        let horizon = ds.num_snapshots() + 1;
        for t_q in 0..=horizon {
            let visible = ds.snapshots_before(t_q);
            let mut pairs = Vec::new();
            for _ in 0..4 {
                pairs.push((rng.gen_range(0..ds.num_entities()), rng.gen_range(0..ds.num_relations())));
            }
            pairs.extend(facts.iter().filter(|q| q.timestamp == t_q).map(|q| (q.subject, q.relation)));
            for &(s, r) in &pairs {
                out.queries += 1;
                let expect = oracle_query_history(&facts, (s, r, t_q), cfg.m, cfg.window);
                let scan = extract_query_history((s, r, t_q), ds.snapshots(), cfg.m, cfg.window);
                let indexed = index.query_history(s, r, t_q, cfg.m, cfg.window);
                for (name, got) in [("scan", &scan), ("index", &indexed)] {
                    let got: Vec<(usize, Vec<usize>)> = got.steps.iter().map(|st| (st.timestamp, st.neighbors.clone())).collect();
                    if got != expect {
                        out.mismatches.push(format!("graph {g} {name} query ({s},{r},{t_q}): {got:?} != {expect:?}"));
                    }
                }
            }
            let (edges, isolated) = oracle_background(&facts, t_q, cfg.k, ds.num_entities());
            let bg = build_background_graph(visible, t_q, cfg.k, ds.num_entities());
            if bg.edges != edges || bg.isolated != isolated {
                out.mismatches.push(format!("graph {g} background at {t_q}"));
            }
            let ch = extract_candidate_history(visible, t_q, cfg.n);
            let want: Vec<usize> = (t_q.saturating_sub(cfg.n)..t_q.min(ds.num_snapshots())).collect();
            let got: Vec<usize> = ch.snapshots.iter().map(|s| s.index()).collect();
            let intervals_ok = ch.intervals.iter().zip(&got).all(|(&d, &t)| d == t_q - t);
            let edges_ok = ch.snapshots.iter().all(|snap| {
                let want: BTreeSet<_> = facts
                    .iter()
                    .filter(|q| q.timestamp == snap.index())
                    .map(|q| (q.subject, q.relation, q.object))
                    .collect();
                snapshot_edges(snap) == want
            });
            if got != want || !intervals_ok || !edges_ok {
                out.mismatches.push(format!("graph {g} candidate history at {t_q}: {got:?} != {want:?}"));
            }
            let bundle = HistoryBundle::build(&ds, &index, t_q, &pairs, &cfg);
            out.leaks += leaks_in(&facts, &bundle, t_q);
        }
        out.graphs += 1;
    }
    out
}

/// Number of random score vectors whose filtered rank exceeds the raw
/// rank. Logits are drawn from a small set so ties are common.
pub fn filtered_rank_violations(vectors: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..vectors {
        let n = rng.gen_range(1..=40);
        let logits: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8)) * 0.5).collect();
        let target = rng.gen_range(0..n);
        let truth: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.3)).collect();
        let sv = ScoreVector::new(0, (0, 0), logits);
        let raw = rank_with_filter(&sv, target, &truth, FilterMode::Raw).unwrap();
        let filtered = rank_with_filter(&sv, target, &truth, FilterMode::TimeAware).unwrap();
        if filtered > raw || filtered < 1.0 {
            bad += 1;
        }
    }
    bad
}
