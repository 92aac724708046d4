//! Timestamp-ordered training, filtered evaluation and checkpoints.

mod checkpoint;
mod config;
mod eval;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

pub use checkpoint::Checkpoint;
pub use config::{keys_help, TrainConfig, KEYS, PROFILES};
pub use eval::{evaluate, rank_with_filter, score_queries, EvalReport, FilterMode, TruthIndex};

use crate::autodiff::Adam;
use crate::data::{DataError, Split, TkgDataset};
use crate::history::{HistoryBundle, HistoryIndex};
use crate::model::{matcher, timestamp_logits, Forward, ModelState};
use crate::Error;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    /// `None` when the split was not evaluated.
    pub report: Option<(f64, f64, f64, f64)>,
    /// Mean training loss per query over the epoch.
    pub loss: Option<f64>,
    pub seconds: f64,
}

impl MetricsRow {
    pub fn from_report(epoch: usize, report: &EvalReport, loss: Option<f64>, seconds: f64) -> Self {
        MetricsRow {
            epoch,
            split: report.split,
            report: Some((report.mrr, report.hits1, report.hits3, report.hits10)),
            loss,
            seconds,
        }
    }

    pub fn mrr(&self) -> Option<f64> {
        self.report.map(|r| r.0)
    }
}

pub const METRICS_HEADER: &str = "epoch,split,mrr,h1,h3,h10,loss,seconds";

/// CSV text for `rows`, header included. Floats use the shortest
/// round-trip representation.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let (mrr, h1, h3, h10) = match r.report {
            Some((a, b, c, d)) => (a.to_string(), b.to_string(), c.to_string(), d.to_string()),
            None => Default::default(),
        };
        let _ = writeln!(
            out,
            "{},{},{mrr},{h1},{h3},{h10},{},{:.3}",
            r.epoch,
            r.split,
            opt(r.loss),
            r.seconds
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), Error> {
    crate::run::write_atomic(path, metrics_csv(rows).as_bytes())
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation MRR (the last
    /// epoch when there is no validation split).
    pub state: ModelState,
    pub best_epoch: usize,
    pub best_val_mrr: Option<f64>,
    pub epochs_run: usize,
    pub rows: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            epoch: self.best_epoch,
            val_mrr: self.best_val_mrr.unwrap_or(f64::NAN),
            state: self.state.clone(),
        }
    }
}

fn dropout_seed(seed: u64, epoch: usize, t: usize) -> u64 {
    let mut x = seed ^ ((epoch as u64) << 32 | t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Summed loss over every fact at `t` and the number of such facts.
/// Training mode turns dropout on and accumulates gradients into `state`.
pub fn timestamp_loss(
    state: &mut ModelState,
    dataset: &TkgDataset,
    index: &HistoryIndex,
    t: usize,
    training: Option<u64>,
) -> Result<(f64, usize), Error> {
    let facts: Vec<_> = dataset.all_facts().filter(|q| q.timestamp == t).copied().collect();
    if facts.is_empty() {
        return Ok((0.0, 0));
    }
    let pairs: Vec<_> = facts.iter().map(|q| (q.subject, q.relation)).collect();
    let targets: Vec<_> = facts.iter().map(|q| q.object).collect();
    let bundle = HistoryBundle::build(dataset, index, t, &pairs, &state.config().history);
    debug_assert!(bundle.latest_timestamp().is_none_or(|s| s < t), "history leaks t >= t_q");

    let mut fw = match training {
        Some(seed) => Forward::new(state, true, seed),
        None => Forward::inference(state),
    };
    let logits = timestamp_logits(&mut fw, &bundle)?;
    let loss = matcher::loss(&mut fw, logits, &targets)?;
    let value = fw.graph.value(loss).item();
    if training.is_some() && value.is_finite() {
        let graph = std::mem::replace(&mut fw.graph, crate::autodiff::Graph::inference());
        drop(fw);
        graph.backward(loss, state.store_mut())?;
    }
    Ok((value, facts.len()))
}

/// Trains on `dataset` (which must carry inverse facts) and evaluates the
/// validation split after every epoch. `on_epoch` sees each metrics row as
/// it is produced.
pub fn train(
    dataset: &TkgDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, Error> {
    config.validate()?;
    if !dataset.is_augmented() {
        return Err(Error::Config("training expects a dataset with inverse facts".into()));
    }
    let train_times = dataset.timestamps(Split::Train);
    if train_times.is_empty() {
        return Err(Error::Data(DataError::EmptySplit(Split::Train)));
    }
    let has_valid = !dataset.split(Split::Valid).is_empty();
    let index = HistoryIndex::new(dataset);
    let mut state = ModelState::new(
        config.model.clone(),
        dataset.num_entities(),
        dataset.num_relations(),
        config.seed,
    )?;
    let adam = Adam::with_lr(config.lr);

    let mut rows = Vec::new();
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let (mut loss_sum, mut count) = (0.0, 0);
        for &t in &train_times {
            state.store_mut().zero_grad();
            let seed = dropout_seed(config.seed, epoch, t);
            let (loss, n) = timestamp_loss(&mut state, dataset, &index, t, Some(seed)).map_err(|e| match e {
                Error::Graph(crate::GraphError::NonFinite { .. }) => Error::NonFiniteLoss { epoch, timestamp: t },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, timestamp: t });
            }
            if config.grad_clip > 0.0 {
                state.store_mut().clip_grad_norm(config.grad_clip);
            }
            adam.step(state.store_mut())?;
            loss_sum += loss;
            count += n;
        }
        epochs_run = epoch;
        let loss = Some(loss_sum / count.max(1) as f64);

        let row = if has_valid {
            let report = evaluate(dataset, &state, Split::Valid, FilterMode::TimeAware, config.workers)?;
            MetricsRow::from_report(epoch, &report, loss, started.elapsed().as_secs_f64())
        } else {
            MetricsRow {
                epoch,
                split: Split::Train,
                report: None,
                loss,
                seconds: started.elapsed().as_secs_f64(),
            }
        };
        on_epoch(&row);
        let mrr = row.mrr();
        rows.push(row);

        match mrr {
            Some(mrr) if best.as_ref().is_none_or(|b| mrr > b.0) => {
                best = Some((mrr, epoch, state.clone()));
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if config.patience > 0 && since_best >= config.patience {
                    break;
                }
            }
            None => {}
        }
    }

    Ok(match best {
        Some((mrr, epoch, state)) => TrainOutcome {
            state,
            best_epoch: epoch,
            best_val_mrr: Some(mrr),
            epochs_run,
            rows,
        },
        None => TrainOutcome {
            state,
            best_epoch: epochs_run,
            best_val_mrr: None,
            epochs_run,
            rows,
        },
    })
}
