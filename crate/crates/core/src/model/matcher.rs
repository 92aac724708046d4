//! ConvTransE matching and the per-timestamp scoring pipeline.

use super::encoders::{encode_background, encode_candidates, encode_queries, Forward};
use crate::autodiff::{NodeId, Tensor};
use crate::history::HistoryBundle;
use crate::Error;

/// Scores of every candidate entity for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub t_q: usize,
    /// `(subject, relation)`
    pub query: (usize, usize),
    pub logits: Vec<f64>,
    /// `sigmoid(logits)`
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(t_q: usize, query: (usize, usize), logits: Vec<f64>) -> Self {
        let scores = logits.iter().map(|&x| crate::autodiff::sigmoid(x)).collect();
        ScoreVector {
            t_q,
            query,
            logits,
            scores,
        }
    }

    /// Splits a `[B, |E|]` logit matrix into one vector per query.
    pub fn from_batch(t_q: usize, queries: &[(usize, usize)], logits: &Tensor) -> Vec<ScoreVector> {
        queries
            .iter()
            .enumerate()
            .map(|(b, &q)| ScoreVector::new(t_q, q, logits.row(b).to_vec()))
            .collect()
    }

    /// Entity ids sorted by descending score, ties by id.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.logits.len()).collect();
        order.sort_by(|&a, &b| self.logits[b].total_cmp(&self.logits[a]).then(a.cmp(&b)));
        order.into_iter().take(k).map(|e| (e, self.scores[e])).collect()
    }
}

/// Stacks `combined` and `rel` (both `[B, d_e]`) into `[B, 2, d_e]`, then
/// convolution, flatten and a fully connected projection back to `[B, d_e]`.
pub fn conv_trans_e(fw: &mut Forward, combined: NodeId, rel: NodeId) -> Result<NodeId, Error> {
    let matcher = fw
        .state()
        .params()
        .matcher
        .ok_or_else(|| Error::Model("matcher is disabled".into()))?;
    let config = fw.state().config().clone();
    let d = config.entity_dim;
    let (cs, rs) = (fw.graph.shape(combined).to_vec(), fw.graph.shape(rel).to_vec());
    if cs.len() != 2 || cs != rs || cs[1] != d {
        return Err(Error::Model(format!(
            "matcher inputs {cs:?} and {rs:?} must both be [B, {d}]"
        )));
    }
    let batch = cs[0];
    let dropout = |fw: &mut Forward, x: NodeId| -> Result<NodeId, Error> {
        if config.dropout == 0.0 {
            Ok(x)
        } else {
            Ok(fw.graph.dropout(x, config.dropout)?)
        }
    };

    let stacked = fw.graph.concat(combined, rel)?;
    let mut x = fw.graph.reshape(stacked, vec![batch, 2, d])?;
    if config.standardize {
        x = fw.graph.standardize(x, 1e-5)?;
    }
    x = dropout(fw, x)?;
    let (kernel, kernel_bias) = (fw.p(matcher.kernel), fw.p(matcher.kernel_bias));
    let conv = fw.graph.conv1d(x, kernel, kernel_bias)?;
    let conv = fw.graph.relu(conv)?;
    let conv = dropout(fw, conv)?;
    let flat = fw.graph.flatten(conv)?;
    let (fc, fc_bias) = (fw.p(matcher.fc), fw.p(matcher.fc_bias));
    let out = fw.graph.matmul(flat, fc)?;
    let out = fw.graph.add(out, fc_bias)?;
    let out = dropout(fw, out)?;
    Ok(fw.graph.relu(out)?)
}

/// Logits `[B, |E|]`: each candidate row dotted with
/// `conv_trans_e(h_q + h_eq, R[r_q])`.
pub fn score_all(
    fw: &mut Forward,
    h_q: NodeId,
    h_eq: NodeId,
    relations: &[usize],
    candidates: NodeId,
) -> Result<NodeId, Error> {
    let table = fw.p(fw.state().params().relation);
    let num_relations = fw.graph.shape(table)[0];
    if let Some(r) = relations.iter().find(|&&r| r >= num_relations) {
        return Err(Error::Model(format!("relation {r} out of range for {num_relations}")));
    }
    let rel = fw.graph.gather(table, relations.to_vec())?;
    let combined = fw.graph.add(h_q, h_eq)?;
    let o = conv_trans_e(fw, combined, rel)?;
    Ok(fw.graph.dot_rows(candidates, o)?)
}

/// Summed multi-class cross-entropy of `logits` against `targets`.
pub fn loss(fw: &mut Forward, logits: NodeId, targets: &[usize]) -> Result<NodeId, Error> {
    Ok(fw.graph.cross_entropy(logits, targets.to_vec())?)
}

/// Full pipeline for every query of `bundle`: background, candidate and
/// query encoders followed by the matcher (or the direct projection when
/// the candidate encoder is disabled). Returns `[B, |E|]` logits.
pub fn timestamp_logits(fw: &mut Forward, bundle: &HistoryBundle) -> Result<NodeId, Error> {
    if bundle.queries.is_empty() {
        return Err(Error::Model(format!("no queries at timestamp {}", bundle.t_q)));
    }
    let params = fw.state().params().clone();
    let num_entities = fw.state().num_entities();
    if let Some(q) = bundle.queries.iter().find(|q| q.subject >= num_entities) {
        return Err(Error::Model(format!("subject {} out of range", q.subject)));
    }
    let entities = encode_background(fw, &bundle.background)?;

    if let Some(direct) = params.direct {
        let h_q = encode_queries(fw, &bundle.queries, entities)?;
        let (w, b) = (fw.p(direct.weight), fw.p(direct.bias));
        let logits = fw.graph.matmul(h_q, w)?;
        return Ok(fw.graph.add(logits, b)?);
    }

    let candidates = encode_candidates(fw, &bundle.candidates, entities)?;
    let subjects = bundle.queries.iter().map(|q| q.subject).collect();
    let h_eq = fw.graph.gather(candidates, subjects)?;
    let h_q = if params.query_gru.is_some() {
        encode_queries(fw, &bundle.queries, entities)?
    } else {
        h_eq
    };
    let relations: Vec<usize> = bundle.queries.iter().map(|q| q.relation).collect();
    score_all(fw, h_q, h_eq, &relations, candidates)
}
