use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tkgmatch::data::{self, DatasetFiles, Split, TkgDataset};
use tkgmatch::history::{history_interval_stats, HistoryIndex};
use tkgmatch::run::{fingerprint_files, write_atomic, RunManifest};
use tkgmatch::synth::{self, SynthKind};
use tkgmatch::train::{
    evaluate, keys_help, score_queries, train, write_metrics_csv, Checkpoint, EvalReport, FilterMode, TrainConfig,
};
use tkgmatch::{DataError, Error, GraphError};

#[derive(Parser)]
#[command(name = "tkgmatch", version, about = "Temporal knowledge graph extrapolation by history matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset directory and write its snapshot index.
    Prepare {
        #[command(flatten)]
        data: DataArgs,
        /// Where to write snapshot_index.tsv (defaults to the data directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and keep the best checkpoint.
    #[command(after_help = keys_help())]
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory for the manifest, metrics and checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    #[command(after_help = keys_help())]
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// raw or time-aware
        #[arg(long, default_value = "time-aware")]
        filter: FilterMode,
        /// Evaluation threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Also write one rank per query to ranks.txt.
        #[arg(long)]
        dump_ranks: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the top-k candidates of every query of a split as JSON lines.
    #[command(after_help = keys_help())]
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// History interval statistics of a split as CSV.
    #[command(after_help = keys_help())]
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset label for the CSV (defaults to the directory name).
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Output CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding train.txt, valid.txt, test.txt and stat.txt.
    #[arg(long)]
    data: PathBuf,
    /// Raw time units per snapshot (inferred from the data when absent).
    #[arg(long)]
    granularity: Option<u64>,
}

impl DataArgs {
    fn load(&self) -> Result<TkgDataset, Error> {
        Ok(data::load_dir(&self.data, self.granularity)?.augment_inverse()?)
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Built-in profile: icews14, icews14s, icews18, icews05-15, gdelt, wiki.
    #[arg(long)]
    profile: Option<String>,
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value override, repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut config = match &self.profile {
            Some(p) => TrainConfig::profile(p)?,
            None => TrainConfig::default(),
        };
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for pair in &self.overrides {
            config.apply_text(pair)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// cyclic, parity, relay or random
    #[arg(long)]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    timestamps: Option<usize>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    min_gap: Option<usize>,
    #[arg(long)]
    max_gap: Option<usize>,
    #[arg(long)]
    senders: Option<usize>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    facts_per_timestamp: Option<usize>,
    #[arg(long)]
    valid: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
}

fn cmd_prepare(args: &DataArgs, out: Option<&Path>) -> Result<(), Error> {
    let files = DatasetFiles::in_dir(&args.data);
    if let Some(missing) = files.missing() {
        return Err(Error::Data(DataError::Io {
            path: missing.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "required dataset file is missing"),
        }));
    }
    let ds = data::parse_dataset(&files, args.granularity)?;
    println!(
        "{} entities, {} relations, {} snapshots",
        ds.num_entities(),
        ds.num_base_relations(),
        ds.num_snapshots()
    );
    for split in Split::ALL {
        println!(
            "  {split}: {} facts over {} timestamps",
            ds.split(split).len(),
            ds.timestamps(split).len()
        );
    }
    println!("  time granularity: {}", ds.time_granularity());

    let mut owner = vec!["-"; ds.num_snapshots()];
    for split in Split::ALL {
        for t in ds.timestamps(split) {
            owner[t] = split.file_name().trim_end_matches(".txt");
        }
    }
    let mut index = String::from("snapshot\tsplit\tfacts\n");
    for snap in ds.snapshots() {
        index.push_str(&format!("{}\t{}\t{}\n", snap.index(), owner[snap.index()], snap.len()));
    }
    let dir = out.unwrap_or(&args.data);
    let path = dir.join("snapshot_index.tsv");
    write_atomic(&path, index.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Error> {
    let s = match a.kind {
        SynthKind::Cyclic => {
            let d = synth::CyclicParams::default();
            synth::cyclic(
                &synth::CyclicParams {
                    entities: a.entities.unwrap_or(d.entities),
                    period: a.period.unwrap_or(d.period),
                    timestamps: a.timestamps.unwrap_or(d.timestamps),
                    valid: a.valid.unwrap_or(d.valid),
                    test: a.test.unwrap_or(d.test),
                },
                a.seed,
            )?
        }
        SynthKind::Parity => {
            let d = synth::ParityParams::default();
            synth::parity(
                &synth::ParityParams {
                    groups: a.groups.unwrap_or(d.groups),
                    timestamps: a.timestamps.unwrap_or(d.timestamps),
                    min_gap: a.min_gap.unwrap_or(d.min_gap),
                    max_gap: a.max_gap.unwrap_or(d.max_gap),
                    valid: a.valid.unwrap_or(d.valid),
                    test: a.test.unwrap_or(d.test),
                },
                a.seed,
            )?
        }
        SynthKind::Relay => {
            let d = synth::RelayParams::default();
            synth::relay(
                &synth::RelayParams {
                    senders: a.senders.unwrap_or(d.senders),
                    pool: a.pool.unwrap_or(d.pool),
                    timestamps: a.timestamps.unwrap_or(d.timestamps),
                    valid: a.valid.unwrap_or(d.valid),
                    test: a.test.unwrap_or(d.test),
                },
                a.seed,
            )?
        }
        SynthKind::Random => {
            let d = synth::RandomParams::default();
            synth::random(
                &synth::RandomParams {
                    entities: a.entities.unwrap_or(d.entities),
                    relations: a.relations.unwrap_or(d.relations),
                    timestamps: a.timestamps.unwrap_or(d.timestamps),
                    facts_per_timestamp: a.facts_per_timestamp.unwrap_or(d.facts_per_timestamp),
                    valid: a.valid.unwrap_or(d.valid),
                    test: a.test.unwrap_or(d.test),
                },
                a.seed,
            )?
        }
    };
    s.write(&a.out)?;
    println!("wrote {} dataset to {}", a.kind, a.out.display());
    Ok(())
}

fn cmd_train(data: &DataArgs, config: &ConfigArgs, out: &Path) -> Result<(), Error> {
    let cfg = config.resolve()?;
    let ds = data.load()?;
    let fingerprint = fingerprint_files(&DatasetFiles::in_dir(&data.data))?;
    let mut manifest = RunManifest::start(
        "train",
        config.config.clone(),
        cfg.clone(),
        data.data.clone(),
        fingerprint,
        out.to_path_buf(),
    );
    manifest.write()?;

    let metrics_path = out.join("metrics.csv");
    let mut rows = Vec::new();
    let outcome = train(&ds, &cfg, |row| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  {} mrr {}",
            row.epoch,
            row.loss.unwrap_or(f64::NAN),
            row.split,
            row.mrr().map_or("-".into(), |m| format!("{m:.4}"))
        );
        rows.push(row.clone());
        if let Err(e) = write_metrics_csv(&metrics_path, &rows) {
            eprintln!("warning: {e}");
        }
    })?;
    let ckpt_path = out.join("checkpoint.bin");
    outcome.checkpoint(&cfg).save(&ckpt_path)?;
    write_metrics_csv(&metrics_path, &outcome.rows)?;
    println!(
        "best epoch {} (validation MRR {}), checkpoint {}",
        outcome.best_epoch,
        outcome.best_val_mrr.map_or("-".into(), |m| format!("{m:.4}")),
        ckpt_path.display()
    );
    manifest.finish()
}

fn eval_csv(report: &EvalReport) -> String {
    format!(
        "split,filter,mrr,h1,h3,h10,queries\n{},{},{},{},{},{},{}\n",
        report.split,
        report.mode,
        report.mrr,
        report.hits1,
        report.hits3,
        report.hits10,
        report.num_queries()
    )
}

fn cmd_eval(data: &DataArgs, checkpoint: &Path, split: Split, filter: FilterMode, workers: usize, dump: bool, out: &Path) -> Result<(), Error> {
    let ds = data.load()?;
    let ckpt = Checkpoint::load_for(checkpoint, &ds)?;
    let report = evaluate(&ds, &ckpt.state, split, filter, workers)?;
    println!("{report}");
    write_atomic(&out.join(format!("eval_{split}.csv")), eval_csv(&report).as_bytes())?;
    if dump {
        let text: String = report.ranks.iter().map(|r| format!("{r}\n")).collect();
        write_atomic(&out.join(format!("ranks_{split}.txt")), text.as_bytes())?;
    }
    Ok(())
}

fn cmd_predict(data: &DataArgs, checkpoint: &Path, split: Split, top_k: usize, out: &Path) -> Result<(), Error> {
    let ds = data.load()?;
    let ckpt = Checkpoint::load_for(checkpoint, &ds)?;
    let index = HistoryIndex::new(&ds);
    let mut lines = String::new();
    let mut count = 0;
    for t in ds.timestamps(split) {
        let pairs: Vec<_> = ds
            .split(split)
            .iter()
            .filter(|q| q.timestamp == t)
            .map(|q| (q.subject, q.relation))
            .collect();
        for sv in score_queries(&ckpt.state, &ds, &index, t, &pairs)? {
            let topk: Vec<_> = sv.top_k(top_k).into_iter().map(|(e, s)| json!([e, s])).collect();
            lines.push_str(&json!({"query": [sv.query.0, sv.query.1, t], "topk": topk}).to_string());
            lines.push('\n');
            count += 1;
        }
    }
    let path = out.join(format!("predictions_{split}.jsonl"));
    write_atomic(&path, lines.as_bytes())?;
    println!("wrote {count} predictions to {}", path.display());
    Ok(())
}

fn cmd_stats(data: &DataArgs, config: &ConfigArgs, name: Option<&str>, split: Split, out: Option<&Path>) -> Result<(), Error> {
    let cfg = config.resolve()?;
    let ds = data.load()?;
    let stats = history_interval_stats(&ds, &cfg.model.history, split)?;
    let label = name.map(str::to_string).unwrap_or_else(|| {
        data.data
            .file_name()
            .map_or("dataset".into(), |n| n.to_string_lossy().into_owned())
    });
    let csv = format!(
        "dataset,split,mean_dt,mean_dt_prime,k\n{label},{split},{:.4},{:.4},{}\n",
        stats.mean_dt, stats.mean_dt_prime, stats.k
    );
    match out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::NonFiniteLoss { .. } | Error::Graph(GraphError::NonFinite { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Prepare { data, out } => cmd_prepare(data, out.as_deref()),
        Command::Synth(args) => cmd_synth(args),
        Command::Train { data, config, out } => cmd_train(data, config, out),
        Command::Eval {
            data,
            checkpoint,
            split,
            filter,
            workers,
            dump_ranks,
            out,
        } => cmd_eval(data, checkpoint, *split, *filter, *workers, *dump_ranks, out),
        Command::Predict {
            data,
            checkpoint,
            split,
            top_k,
            out,
        } => cmd_predict(data, checkpoint, *split, *top_k, out),
        Command::Stats {
            data,
            config,
            name,
            split,
            out,
        } => cmd_stats(data, config, name.as_deref(), *split, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
