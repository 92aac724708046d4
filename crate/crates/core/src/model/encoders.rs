//! Background, query and candidate encoders plus the shared time encoding.
//!
//! Everything here records onto a [`Forward`], which wraps a [`Graph`] and
//! loads each parameter into it at most once.

use std::collections::HashMap;

use super::{Composition, GcnLayer, GruParams, ModelState};
use crate::autodiff::{Graph, NodeId, ParamId, Tensor};
use crate::history::{BackgroundGraph, CandidateHistory, QueryHistory};
use crate::Error;

/// One forward pass over a [`ModelState`].
pub struct Forward<'s> {
    pub graph: Graph,
    state: &'s ModelState,
    loaded: HashMap<ParamId, NodeId>,
}

impl<'s> Forward<'s> {
    pub fn new(state: &'s ModelState, training: bool, seed: u64) -> Self {
        Forward {
            graph: Graph::new(training, seed),
            state,
            loaded: HashMap::new(),
        }
    }

    pub fn inference(state: &'s ModelState) -> Self {
        Forward::new(state, false, 0)
    }

    pub fn state(&self) -> &'s ModelState {
        self.state
    }

    /// Graph node holding parameter `id`.
    pub fn p(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.loaded.get(&id) {
            return node;
        }
        let node = self.graph.param(self.state.store(), id);
        self.loaded.insert(id, node);
        node
    }

    fn dropout(&mut self, x: NodeId, enabled: bool) -> Result<NodeId, Error> {
        let rate = self.state.config().dropout;
        if !enabled || rate == 0.0 {
            return Ok(x);
        }
        Ok(self.graph.dropout(x, rate)?)
    }
}

/// `cos(d * w + b)` evaluated directly.
pub fn time_vector(unit: &[f64], bias: &[f64], interval: usize) -> Vec<f64> {
    unit.iter()
        .zip(bias)
        .map(|(w, b)| (interval as f64 * w + b).cos())
        .collect()
}

/// Time encodings of `intervals`, one row each: `[len, d_t]`. Returns
/// `None` when the time component is disabled.
pub fn time_encode(fw: &mut Forward, intervals: &[usize]) -> Result<Option<NodeId>, Error> {
    let Some(time) = fw.state().params().time else {
        return Ok(None);
    };
    let column = Tensor::new(vec![intervals.len(), 1], intervals.iter().map(|&d| d as f64).collect())?;
    let d = fw.graph.constant(column);
    let unit = fw.p(time.unit);
    let bias = fw.p(time.bias);
    let scaled = fw.graph.matmul(d, unit)?;
    let shifted = fw.graph.add(scaled, bias)?;
    Ok(Some(fw.graph.cos(shifted)?))
}

/// One relational convolution layer over `edges` (`(subject, relation,
/// object)`, messages flow subject → object):
///
/// `h'_e = tanh(W_n · mean_{(s, r, e)} compose(h_s, r) + W_s · h_e)`
///
/// where the mean is over in-edges of `e` (empty sums vanish).
pub fn compgcn_layer(
    fw: &mut Forward,
    edges: &[(usize, usize, usize)],
    h: NodeId,
    relations: NodeId,
    layer: &GcnLayer,
    composition: Composition,
) -> Result<NodeId, Error> {
    let num_entities = fw.graph.shape(h)[0];
    let num_relations = fw.graph.shape(relations)[0];
    if let Some(e) = edges
        .iter()
        .find(|&&(s, r, o)| s >= num_entities || o >= num_entities || r >= num_relations)
    {
        return Err(Error::Model(format!(
            "edge {e:?} out of range for {num_entities} entities and {num_relations} relations"
        )));
    }
    let w_self = fw.p(layer.w_self);
    let self_term = fw.graph.matmul(h, w_self)?;
    let pre = if edges.is_empty() {
        self_term
    } else {
        let sources = fw.graph.gather(h, edges.iter().map(|e| e.0).collect())?;
        let rels = fw.graph.gather(relations, edges.iter().map(|e| e.1).collect())?;
        let composed = match composition {
            Composition::Subtract => fw.graph.sub(sources, rels)?,
            Composition::Multiply => fw.graph.mul(sources, rels)?,
        };
        let mean = fw.graph.scatter_mean(composed, edges.iter().map(|e| e.2).collect(), num_entities)?;
        let w_neighbor = fw.p(layer.w_neighbor);
        let message = fw.graph.matmul(mean, w_neighbor)?;
        fw.graph.add(message, self_term)?
    };
    Ok(fw.graph.tanh(pre)?)
}

fn gcn_stack(
    fw: &mut Forward,
    edges: &[(usize, usize, usize)],
    input: NodeId,
    layers: &[GcnLayer],
    dropout: bool,
) -> Result<NodeId, Error> {
    let composition = fw.state().config().composition;
    let relations = fw.p(fw.state().params().relation);
    let mut h = input;
    for layer in layers {
        h = compgcn_layer(fw, edges, h, relations, layer, composition)?;
        h = fw.dropout(h, dropout)?;
    }
    Ok(h)
}

/// Entity matrix `E` for one query timestamp: the entity table passed
/// through the background convolution stack (or the table itself when the
/// background encoder is disabled).
pub fn encode_background(fw: &mut Forward, background: &BackgroundGraph) -> Result<NodeId, Error> {
    let entity = fw.p(fw.state().params().entity);
    let layers = fw.state().params().background.clone();
    if layers.is_empty() {
        return Ok(entity);
    }
    gcn_stack(fw, &background.edges, entity, &layers, true)
}

/// `h' = n + z ⊙ (h - n)` with reset gate `r`, update gate `z` and candidate
/// `n = tanh(x W_xn + b_xn + r ⊙ (h W_hn + b_hn))`.
pub fn gru_step(fw: &mut Forward, gru: &GruParams, h: NodeId, x: NodeId) -> Result<NodeId, Error> {
    let gate = |fw: &mut Forward, wx: ParamId, wh: ParamId, b: ParamId| -> Result<NodeId, Error> {
        let (wx, wh, b) = (fw.p(wx), fw.p(wh), fw.p(b));
        let xw = fw.graph.matmul(x, wx)?;
        let hw = fw.graph.matmul(h, wh)?;
        let sum = fw.graph.add(xw, hw)?;
        let pre = fw.graph.add(sum, b)?;
        Ok(fw.graph.sigmoid(pre)?)
    };
    let r = gate(fw, gru.w_xr, gru.w_hr, gru.b_r)?;
    let z = gate(fw, gru.w_xz, gru.w_hz, gru.b_z)?;

    let (w_xn, b_xn, w_hn, b_hn) = (fw.p(gru.w_xn), fw.p(gru.b_xn), fw.p(gru.w_hn), fw.p(gru.b_hn));
    let xn = fw.graph.matmul(x, w_xn)?;
    let xn = fw.graph.add(xn, b_xn)?;
    let hn = fw.graph.matmul(h, w_hn)?;
    let hn = fw.graph.add(hn, b_hn)?;
    let gated = fw.graph.mul(r, hn)?;
    let pre = fw.graph.add(xn, gated)?;
    let n = fw.graph.tanh(pre)?;

    let diff = fw.graph.sub(h, n)?;
    let keep = fw.graph.mul(z, diff)?;
    Ok(fw.graph.add(n, keep)?)
}

/// Appends the time encoding of `intervals` (one per row) to `g`.
fn with_time(fw: &mut Forward, g: NodeId, intervals: &[usize]) -> Result<NodeId, Error> {
    match time_encode(fw, intervals)? {
        Some(v) => Ok(fw.graph.concat(g, v)?),
        None => Ok(g),
    }
}

/// Candidate representations of every entity, `[|E|, d_e]`: each snapshot
/// of the candidate history goes through the candidate convolution stack
/// (starting from `entities`), and the per-snapshot rows plus their time
/// encodings are folded by the candidate GRU from a zero state.
pub fn encode_candidates(fw: &mut Forward, history: &CandidateHistory, entities: NodeId) -> Result<NodeId, Error> {
    let gru = fw
        .state()
        .params()
        .candidate_gru
        .ok_or_else(|| Error::Model("candidate encoder is disabled".into()))?;
    let layers = fw.state().params().candidate.clone();
    let dropout = fw.state().config().candidate_dropout;
    let num_entities = fw.graph.shape(entities)[0];
    let d = fw.state().config().entity_dim;
    let mut h = fw.graph.constant(Tensor::zeros(vec![num_entities, d]));
    for (snapshot, &interval) in history.snapshots.iter().zip(&history.intervals) {
        let g = gcn_stack(fw, snapshot.edges(), entities, &layers, dropout)?;
        let x = with_time(fw, g, &vec![interval; num_entities])?;
        h = gru_step(fw, &gru, h, x)?;
    }
    Ok(h)
}

/// Query representations, `[B, d_e]`, one row per history. Each step's
/// neighbor rows of `entities` are mean-pooled, joined with the time
/// encoding of `t_q - t_i`, and folded by the query GRU from the learned
/// initial state. Shorter histories are aligned to end at the last step;
/// rows without a step keep their state unchanged.
pub fn encode_queries(fw: &mut Forward, histories: &[QueryHistory], entities: NodeId) -> Result<NodeId, Error> {
    let params = fw.state().params();
    let (gru, h0) = match (params.query_gru, params.query_h0) {
        (Some(g), Some(h)) => (g, h),
        _ => return Err(Error::Model("query encoder is disabled".into())),
    };
    if histories.is_empty() {
        return Err(Error::Model("no queries to encode".into()));
    }
    let batch = histories.len();
    let d = fw.state().config().entity_dim;
    let h0 = fw.p(h0);
    let mut h = fw.graph.gather(h0, vec![0; batch])?;
    let longest = histories.iter().map(|q| q.steps.len()).max().unwrap_or(0);

    for j in 0..longest {
        let mut rows = Vec::new();
        let mut groups = Vec::new();
        let mut intervals = vec![0usize; batch];
        let mut active = vec![false; batch];
        for (b, q) in histories.iter().enumerate() {
            let offset = longest - q.steps.len();
            if j < offset {
                continue;
            }
            let step = &q.steps[j - offset];
            active[b] = true;
            intervals[b] = q.t_q - step.timestamp;
            for &o in &step.neighbors {
                rows.push(o);
                groups.push(b);
            }
        }
        let neighbors = fw.graph.gather(entities, rows)?;
        let g = fw.graph.scatter_mean(neighbors, groups, batch)?;
        let x = with_time(fw, g, &intervals)?;
        let h_new = gru_step(fw, &gru, h, x)?;
        h = if active.iter().all(|&a| a) {
            h_new
        } else {
            let mask = |on: bool| -> Vec<f64> {
                active
                    .iter()
                    .flat_map(|&a| std::iter::repeat_n(if a == on { 1.0 } else { 0.0 }, d))
                    .collect()
            };
            let take_new = fw.graph.constant(Tensor::new(vec![batch, d], mask(true))?);
            let take_old = fw.graph.constant(Tensor::new(vec![batch, d], mask(false))?);
            let new_part = fw.graph.mul(take_new, h_new)?;
            let old_part = fw.graph.mul(take_old, h)?;
            fw.graph.add(new_part, old_part)?
        };
    }
    Ok(h)
}

/// Single-query form of [`encode_queries`]; returns `[1, d_e]`.
pub fn encode_query(fw: &mut Forward, history: &QueryHistory, entities: NodeId) -> Result<NodeId, Error> {
    encode_queries(fw, std::slice::from_ref(history), entities)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::data::SnapshotGraph;
    use crate::history::HistoryStep;
    use crate::model::{Ablations, ModelConfig};

    fn config(d: usize, dt: usize) -> ModelConfig {
        ModelConfig {
            entity_dim: d,
            time_dim: dt,
            kernels: 2,
            dropout: 0.0,
            omega1: 1,
            omega2: 1,
            ..ModelConfig::default()
        }
    }

    fn set(state: &mut ModelState, id: ParamId, values: &[f64]) {
        state.store_mut().get_mut(id).tensor_mut().values_mut().copy_from_slice(values);
    }

    fn fill(state: &mut ModelState, id: ParamId, value: f64) {
        state.store_mut().get_mut(id).tensor_mut().values_mut().fill(value);
    }

    fn identity(d: usize) -> Vec<f64> {
        (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect()
    }

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
    }

    // Straight-line re-implementations used as oracles.

    fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
        let cols = w.last_dim();
        (0..cols)
            .map(|j| x.iter().enumerate().map(|(i, xi)| xi * w.values()[i * cols + j]).sum())
            .collect()
    }

    fn gcn_oracle(
        edges: &[(usize, usize, usize)],
        h: &[Vec<f64>],
        rel: &[Vec<f64>],
        w_n: &Tensor,
        w_s: &Tensor,
    ) -> Vec<Vec<f64>> {
        (0..h.len())
            .map(|e| {
                let incoming: Vec<_> = edges.iter().filter(|x| x.2 == e).collect();
                let mut mean = vec![0.0; h[e].len()];
                for &&(s, r, _) in &incoming {
                    for (j, m) in mean.iter_mut().enumerate() {
                        *m += (h[s][j] - rel[r][j]) / incoming.len() as f64;
                    }
                }
                let a = vec_mat(&mean, w_n);
                let b = vec_mat(&h[e], w_s);
                a.iter().zip(&b).map(|(x, y)| (x + y).tanh()).collect()
            })
            .collect()
    }

    fn gru_oracle(state: &ModelState, gru: &GruParams, h: &[f64], x: &[f64]) -> Vec<f64> {
        let t = |id: ParamId| state.store().get(id).tensor().clone();
        let lin = |wx: ParamId, wh: ParamId| -> (Vec<f64>, Vec<f64>) { (vec_mat(x, &t(wx)), vec_mat(h, &t(wh))) };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (xr, hr) = lin(gru.w_xr, gru.w_hr);
        let (xz, hz) = lin(gru.w_xz, gru.w_hz);
        let (xn, hn) = lin(gru.w_xn, gru.w_hn);
        let (br, bz, bxn, bhn) = (t(gru.b_r), t(gru.b_z), t(gru.b_xn), t(gru.b_hn));
        (0..h.len())
            .map(|j| {
                let r = sig(xr[j] + hr[j] + br.values()[j]);
                let z = sig(xz[j] + hz[j] + bz.values()[j]);
                let n = (xn[j] + bxn.values()[j] + r * (hn[j] + bhn.values()[j])).tanh();
                (1.0 - z) * n + z * h[j]
            })
            .collect()
    }

    fn time_oracle(state: &ModelState, d: usize) -> Vec<f64> {
        let time = state.params().time.unwrap();
        time_vector(
            state.store().get(time.unit).tensor().values(),
            state.store().get(time.bias).tensor().values(),
            d,
        )
    }

    #[test]
    fn time_encoding_examples() {
        let mut state = ModelState::new(config(2, 3), 3, 2, 0).unwrap();
        let time = state.params().time.unwrap();
        set(&mut state, time.unit, &[PI / 2.0, 0.7, -1.3]);
        set(&mut state, time.bias, &[0.0, 0.0, 0.0]);
        let mut fw = Forward::inference(&state);
        let v = time_encode(&mut fw, &[0, 2]).unwrap().unwrap();
        let v = fw.graph.value(v);
        assert_eq!(v.row(0), &[1.0, 1.0, 1.0]);
        assert!((v.row(1)[0] + 1.0).abs() < 1e-12);

        let unit = [0.7, -1.3];
        let bias = [0.2, 0.4];
        let a = time_vector(&unit[..1], &bias[..1], 3);
        let period_shift = (3.0 + 2.0 * PI / 0.7) * 0.7 + 0.2;
        assert!((a[0] - period_shift.cos()).abs() < 1e-12);
    }

    #[test]
    fn gcn_empty_graph_uses_self_path_only() {
        let state = ModelState::new(config(3, 2), 4, 2, 5).unwrap();
        let mut fw = Forward::inference(&state);
        let bg = BackgroundGraph { t_q: 0, edges: vec![], isolated: (0..4).collect() };
        let out = encode_background(&mut fw, &bg).unwrap();
        let layer = state.params().background[0];
        let e = state.store().get(state.params().entity).tensor();
        let w_s = state.store().get(layer.w_self).tensor();
        let expected: Vec<Vec<f64>> = rows(e).iter().map(|r| vec_mat(r, w_s).iter().map(|x| x.tanh()).collect()).collect();
        for (a, b) in rows(fw.graph.value(out)).iter().flatten().zip(expected.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_single_edge_with_matching_relation_leaves_target_unchanged() {
        let d = 3;
        let mut state = ModelState::new(config(d, 2), 3, 1, 1).unwrap();
        let p = state.params().clone();
        let layer = p.background[0];
        set(&mut state, layer.w_neighbor, &identity(d));
        set(&mut state, layer.w_self, &identity(d));
        let rel = state.store().get(p.relation).tensor().row(0).to_vec();
        let mut ent = state.store().get(p.entity).tensor().values().to_vec();
        ent[..d].copy_from_slice(&rel);
        set(&mut state, p.entity, &ent);

        let mut fw = Forward::inference(&state);
        let h = fw.p(p.entity);
        let r = fw.p(p.relation);
        let out = compgcn_layer(&mut fw, &[(0, 0, 1)], h, r, &layer, Composition::Subtract).unwrap();
        let got = fw.graph.value(out).row(1).to_vec();
        let want: Vec<f64> = ent[d..2 * d].iter().map(|x| x.tanh()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn gcn_mean_of_identical_messages() {
        let d = 2;
        let state = ModelState::new(config(d, 2), 4, 1, 3).unwrap();
        let layer = state.params().background[0];
        let mut fw = Forward::inference(&state);
        let h = fw.graph.constant(Tensor::new(vec![4, d], vec![1.0, 2.0, 1.0, 2.0, 0.0, 0.0, 0.5, 0.5]).unwrap());
        let r = fw.graph.constant(Tensor::new(vec![1, d], vec![0.5, 0.5]).unwrap());
        let two = compgcn_layer(&mut fw, &[(0, 0, 3), (1, 0, 3)], h, r, &layer, Composition::Subtract).unwrap();
        let one = compgcn_layer(&mut fw, &[(0, 0, 3)], h, r, &layer, Composition::Subtract).unwrap();
        assert_eq!(fw.graph.value(two).row(3), fw.graph.value(one).row(3));
    }

    #[test]
    fn gcn_matches_per_node_oracle_and_rejects_bad_edges() {
        let d = 4;
        let state = ModelState::new(config(d, 2), 6, 3, 11).unwrap();
        let p = state.params().clone();
        let layer = p.background[0];
        let edges = vec![(0, 1, 2), (3, 0, 2), (5, 2, 2), (2, 1, 0), (4, 0, 4), (1, 2, 3)];
        let mut fw = Forward::inference(&state);
        let h = fw.p(p.entity);
        let r = fw.p(p.relation);
        let out = compgcn_layer(&mut fw, &edges, h, r, &layer, Composition::Subtract).unwrap();
        let oracle = gcn_oracle(
            &edges,
            &rows(state.store().get(p.entity).tensor()),
            &rows(state.store().get(p.relation).tensor()),
            state.store().get(layer.w_neighbor).tensor(),
            state.store().get(layer.w_self).tensor(),
        );
        for (got, want) in rows(fw.graph.value(out)).iter().zip(&oracle) {
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(compgcn_layer(&mut fw, &[(0, 3, 1)], h, r, &layer, Composition::Subtract).is_err());
        assert!(compgcn_layer(&mut fw, &[(6, 0, 1)], h, r, &layer, Composition::Multiply).is_err());
    }

    #[test]
    fn gcn_row_ignores_non_neighbors() {
        let d = 3;
        let state = ModelState::new(config(d, 2), 5, 2, 2).unwrap();
        let layer = state.params().background[0];
        let edges = [(0, 0, 1), (2, 1, 1), (3, 0, 4)];
        let run = |table: Vec<f64>| {
            let mut fw = Forward::inference(&state);
            let h = fw.graph.constant(Tensor::new(vec![5, d], table).unwrap());
            let r = fw.p(state.params().relation);
            let out = compgcn_layer(&mut fw, &edges, h, r, &layer, Composition::Multiply).unwrap();
            fw.graph.value(out).row(1).to_vec()
        };
        let base: Vec<f64> = (0..5 * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut perturbed = base.clone();
        for v in &mut perturbed[3 * d..5 * d] {
            *v += 10.0;
        }
        assert_eq!(run(base).iter().map(|x| x.to_bits()).collect::<Vec<_>>(), run(perturbed).iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    fn history(t_q: usize, steps: &[(usize, &[usize])]) -> QueryHistory {
        QueryHistory {
            subject: 0,
            relation: 0,
            t_q,
            steps: steps
                .iter()
                .map(|&(timestamp, n)| HistoryStep { timestamp, neighbors: n.to_vec() })
                .collect(),
        }
    }

    #[test]
    fn query_encoder_matches_gru_oracle() {
        let d = 3;
        let state = ModelState::new(config(d, 2), 5, 2, 4).unwrap();
        let p = state.params().clone();
        let gru = p.query_gru.unwrap();
        let e = rows(state.store().get(p.entity).tensor());
        let h0 = state.store().get(p.query_h0.unwrap()).tensor().values().to_vec();

        let qh = history(7, &[(2, &[1]), (5, &[2, 4])]);
        let mut fw = Forward::inference(&state);
        let ent = fw.p(p.entity);
        let out = encode_query(&mut fw, &qh, ent).unwrap();

        let mut h = h0.clone();
        let mut x = e[1].clone();
        x.extend(time_oracle(&state, 5));
        h = gru_oracle(&state, &gru, &h, &x);
        let mut x: Vec<f64> = e[2].iter().zip(&e[4]).map(|(a, b)| (a + b) / 2.0).collect();
        x.extend(time_oracle(&state, 2));
        h = gru_oracle(&state, &gru, &h, &x);
        for (a, b) in fw.graph.value(out).values().iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }

        let empty = encode_query(&mut fw, &history(7, &[]), ent).unwrap();
        assert_eq!(fw.graph.value(empty).values(), &h0[..]);
    }

    #[test]
    fn batched_queries_equal_individual_ones() {
        let state = ModelState::new(config(3, 2), 6, 2, 8).unwrap();
        let batch = vec![
            history(9, &[(1, &[2]), (4, &[3, 5]), (8, &[0])]),
            history(9, &[(6, &[1])]),
            history(9, &[]),
        ];
        let mut fw = Forward::inference(&state);
        let ent = fw.p(state.params().entity);
        let all = encode_queries(&mut fw, &batch, ent).unwrap();
        let all = fw.graph.value(all).clone();
        for (b, q) in batch.iter().enumerate() {
            let one = encode_query(&mut fw, q, ent).unwrap();
            assert_eq!(fw.graph.value(one).values(), all.row(b));
        }
    }

    #[test]
    fn interval_changes_query_input() {
        let state = ModelState::new(config(3, 4), 4, 1, 6).unwrap();
        let mut fw = Forward::inference(&state);
        let ent = fw.p(state.params().entity);
        let near = encode_query(&mut fw, &history(10, &[(9, &[1])]), ent).unwrap();
        let far = encode_query(&mut fw, &history(10, &[(1, &[1])]), ent).unwrap();
        assert_ne!(fw.graph.value(near).values(), fw.graph.value(far).values());
        assert_ne!(time_oracle(&state, 1), time_oracle(&state, 9));
    }

    #[test]
    fn zero_weight_gru_is_input_independent() {
        let d = 2;
        let mut state = ModelState::new(config(d, 2), 4, 1, 2).unwrap();
        let gru = state.params().query_gru.unwrap();
        for id in [gru.w_xr, gru.w_xz, gru.w_xn, gru.w_hr, gru.w_hz, gru.w_hn, gru.b_r, gru.b_z, gru.b_xn, gru.b_hn] {
            fill(&mut state, id, 0.0);
        }
        let h0 = state.store().get(state.params().query_h0.unwrap()).tensor().values().to_vec();
        let mut fw = Forward::inference(&state);
        let ent = fw.p(state.params().entity);
        let a = encode_query(&mut fw, &history(5, &[(1, &[1]), (3, &[2])]), ent).unwrap();
        let b = encode_query(&mut fw, &history(5, &[(2, &[3]), (4, &[0, 1])]), ent).unwrap();
        // r = z = 1/2 and n = tanh(0) = 0, so each step halves h.
        let want: Vec<f64> = h0.iter().map(|h| h / 4.0).collect();
        assert_eq!(fw.graph.value(a).values(), &want[..]);
        assert_eq!(fw.graph.value(b).values(), &want[..]);
    }

    #[test]
    fn candidate_encoder_matches_straight_line_oracle() {
        let d = 3;
        let cfg = ModelConfig { omega1: 1, omega2: 1, ..config(d, 2) };
        let state = ModelState::new(cfg, 5, 2, 21).unwrap();
        let p = state.params().clone();
        let snaps = [
            SnapshotGraph::new(0, vec![(0, 0, 1), (2, 1, 1), (3, 0, 4)]),
            SnapshotGraph::new(1, vec![(4, 1, 0), (1, 0, 2)]),
        ];
        let ch = CandidateHistory { t_q: 2, snapshots: snaps.iter().collect(), intervals: vec![2, 1] };
        let bg = BackgroundGraph { t_q: 2, edges: vec![(0, 0, 1), (1, 0, 2), (2, 1, 1), (3, 0, 4), (4, 1, 0)], isolated: vec![] };

        let mut fw = Forward::inference(&state);
        let e = encode_background(&mut fw, &bg).unwrap();
        let cand = encode_candidates(&mut fw, &ch, e).unwrap();
        let got = rows(fw.graph.value(cand));

        let tensor = |id: ParamId| state.store().get(id).tensor();
        let rel = rows(tensor(p.relation));
        let bl = p.background[0];
        let e0 = gcn_oracle(&bg.edges, &rows(tensor(p.entity)), &rel, tensor(bl.w_neighbor), tensor(bl.w_self));
        let cl = p.candidate[0];
        let gru = p.candidate_gru.unwrap();
        let mut h = vec![vec![0.0; d]; 5];
        for (snap, &dt) in snaps.iter().zip(&ch.intervals) {
            let g = gcn_oracle(snap.edges(), &e0, &rel, tensor(cl.w_neighbor), tensor(cl.w_self));
            for ent in 0..5 {
                let mut x = g[ent].clone();
                x.extend(time_oracle(&state, dt));
                h[ent] = gru_oracle(&state, &gru, &h[ent], &x);
            }
        }
        for (a, b) in got.iter().flatten().zip(h.iter().flatten()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn isomorphic_entities_get_identical_candidate_rows() {
        let d = 3;
        let mut state = ModelState::new(config(d, 2), 4, 1, 7).unwrap();
        let p = state.params().clone();
        let mut ent = state.store().get(p.entity).tensor().values().to_vec();
        let row0 = ent[..d].to_vec();
        ent[d..2 * d].copy_from_slice(&row0);
        set(&mut state, p.entity, &ent);
        let snaps = [SnapshotGraph::new(0, vec![(2, 0, 0), (2, 0, 1), (3, 0, 2)])];
        let ch = CandidateHistory { t_q: 1, snapshots: snaps.iter().collect(), intervals: vec![1] };
        let bg = BackgroundGraph { t_q: 1, edges: snaps[0].edges().to_vec(), isolated: vec![] };
        let mut fw = Forward::inference(&state);
        let e = encode_background(&mut fw, &bg).unwrap();
        let cand = encode_candidates(&mut fw, &ch, e).unwrap();
        let v = fw.graph.value(cand);
        assert_eq!(v.row(0), v.row(1));
    }

    #[test]
    fn one_time_component_serves_both_encoders() {
        let state = ModelState::new(config(3, 2), 4, 2, 1).unwrap();
        let time = state.params().time.unwrap();
        let snaps = [SnapshotGraph::new(0, vec![(0, 0, 1)]), SnapshotGraph::new(1, vec![(0, 0, 2)])];
        let ch = CandidateHistory { t_q: 2, snapshots: snaps.iter().collect(), intervals: vec![2, 1] };
        let mut fw = Forward::inference(&state);
        let e = fw.p(state.params().entity);
        encode_candidates(&mut fw, &ch, e).unwrap();
        let unit_before = fw.p(time.unit);
        encode_query(&mut fw, &history(2, &[(0, &[1])]), e).unwrap();
        assert_eq!(fw.p(time.unit), unit_before);
        let loaded: Vec<ParamId> = fw.graph.params().collect();
        assert_eq!(loaded.iter().filter(|&&id| id == time.unit).count(), 1);
        assert_eq!(loaded.iter().filter(|&&id| id == time.bias).count(), 1);
        assert_eq!(state.store().iter().filter(|(_, p)| p.name().starts_with("time.")).count(), 2);
    }

    #[test]
    fn disabled_time_feeds_structure_only() {
        let cfg = ModelConfig {
            ablations: Ablations { disable_time: true, ..Default::default() },
            ..config(3, 2)
        };
        let state = ModelState::new(cfg, 4, 1, 1).unwrap();
        let mut fw = Forward::inference(&state);
        let e = fw.p(state.params().entity);
        assert!(time_encode(&mut fw, &[1]).unwrap().is_none());
        let a = encode_query(&mut fw, &history(9, &[(8, &[1])]), e).unwrap();
        let b = encode_query(&mut fw, &history(9, &[(1, &[1])]), e).unwrap();
        assert_eq!(fw.graph.value(a).values(), fw.graph.value(b).values());
    }
}
