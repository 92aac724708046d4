//! Flat `key=value` training configuration and the per-benchmark profiles.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::model::{Composition, ModelConfig};
use crate::Error;

/// Model architecture plus optimisation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm cap; `0` disables clipping.
    pub grad_clip: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Evaluation threads; `0` uses every core.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 0.001,
            epochs: 100,
            seed: 0,
            grad_clip: 1.0,
            patience: 10,
            workers: 0,
        }
    }
}

/// Every accepted key, its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("d_e", "128", "entity/relation embedding and hidden size"),
    ("d_t", "32", "time encoding size"),
    ("m", "5", "query history length"),
    ("n", "5", "candidate history length"),
    ("k", "4", "snapshots merged into the background graph"),
    ("window", "none", "how far back query histories may look (none = unbounded)"),
    ("omega1", "2", "candidate-side graph convolution layers"),
    ("omega2", "2", "background graph convolution layers"),
    ("kernels", "50", "matcher convolution kernels"),
    ("kernel_width", "3", "matcher kernel width (height is 2)"),
    ("dropout", "0.2", "dropout rate"),
    ("candidate_dropout", "true", "apply dropout in the candidate convolution stack"),
    ("composition", "subtract", "neighbor/relation composition: subtract | multiply"),
    ("standardize", "false", "row-standardize the matcher input"),
    ("disable_query", "false", "ablation: use the candidate representation of the subject as the query"),
    ("disable_candidate", "false", "ablation: score with a linear layer on the query representation"),
    ("disable_background", "false", "ablation: feed raw entity embeddings to the encoders"),
    ("disable_time", "false", "ablation: drop the time encoding"),
    ("lr", "0.001", "Adam learning rate"),
    ("epochs", "100", "maximum training epochs"),
    ("seed", "0", "random seed"),
    ("grad_clip", "1.0", "gradient-norm clipping threshold (0 = off)"),
    ("patience", "10", "early-stopping patience in epochs"),
    ("workers", "0", "evaluation threads (0 = all cores)"),
];

/// Benchmark names with built-in profiles.
pub const PROFILES: &[&str] = &["icews14", "icews14s", "icews18", "icews05-15", "gdelt", "wiki"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Defaults with the history lengths and layer counts tuned for one of
    /// [`PROFILES`].
    pub fn profile(name: &str) -> Result<Self, Error> {
        let (mn, k, omega1) = match name.to_ascii_lowercase().as_str() {
            "icews14" => (5, 4, 2),
            "icews14s" | "icews14*" => (6, 1, 2),
            "icews18" => (5, 1, 2),
            "icews05-15" => (5, 2, 2),
            "gdelt" => (5, 2, 1),
            "wiki" => (1, 2, 2),
            other => return Err(Error::Config(format!("unknown profile `{other}`"))),
        };
        let mut config = TrainConfig::default();
        config.model.history.m = mn;
        config.model.history.n = mn;
        config.model.history.k = k;
        config.model.omega1 = omega1;
        Ok(config)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let value = value.trim();
        let m = &mut self.model;
        match key.trim() {
            "d_e" => m.entity_dim = parse(key, value)?,
            "d_t" => m.time_dim = parse(key, value)?,
            "m" => m.history.m = parse(key, value)?,
            "n" => m.history.n = parse(key, value)?,
            "k" => m.history.k = parse(key, value)?,
            "window" => {
                m.history.window = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "omega1" => m.omega1 = parse(key, value)?,
            "omega2" => m.omega2 = parse(key, value)?,
            "kernels" => m.kernels = parse(key, value)?,
            "kernel_width" => m.kernel_width = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "candidate_dropout" => m.candidate_dropout = parse(key, value)?,
            "composition" => m.composition = parse::<Composition>(key, value)?,
            "standardize" => m.standardize = parse(key, value)?,
            "disable_query" => m.ablations.disable_query = parse(key, value)?,
            "disable_candidate" => m.ablations.disable_candidate = parse(key, value)?,
            "disable_background" => m.ablations.disable_background = parse(key, value)?,
            "disable_time" => m.ablations.disable_time = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let mut config = TrainConfig::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), Error> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        self.apply_text(&text)
    }

    /// Canonical `key=value` form; [`TrainConfig::from_text`] reads it back
    /// unchanged.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &m.ablations;
        let window = m.history.window.map_or("none".to_string(), |w| w.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("d_e", m.entity_dim.to_string()),
            ("d_t", m.time_dim.to_string()),
            ("m", m.history.m.to_string()),
            ("n", m.history.n.to_string()),
            ("k", m.history.k.to_string()),
            ("window", window),
            ("omega1", m.omega1.to_string()),
            ("omega2", m.omega2.to_string()),
            ("kernels", m.kernels.to_string()),
            ("kernel_width", m.kernel_width.to_string()),
            ("dropout", format!("{:?}", m.dropout)),
            ("candidate_dropout", m.candidate_dropout.to_string()),
            ("composition", m.composition.to_string()),
            ("standardize", m.standardize.to_string()),
            ("disable_query", a.disable_query.to_string()),
            ("disable_candidate", a.disable_candidate.to_string()),
            ("disable_background", a.disable_background.to_string()),
            ("disable_time", a.disable_time.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("grad_clip", format!("{:?}", self.grad_clip)),
            ("patience", self.patience.to_string()),
            ("workers", self.workers.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Config(format!("grad_clip must be non-negative, got {}", self.grad_clip)));
        }
        Ok(())
    }

    /// Hash of everything that fixes parameter shapes, together with the
    /// entity and relation counts. Two states with equal fingerprints have
    /// identically named and shaped parameters.
    pub fn fingerprint(&self, num_entities: usize, num_relations: usize) -> u64 {
        let m = &self.model;
        let a = &m.ablations;
        let canonical = format!(
            "d_e={} d_t={} omega1={} omega2={} kernels={} kernel_width={} dq={} dc={} db={} dt={} E={} R={}",
            m.entity_dim,
            m.time_dim,
            m.omega1,
            m.omega2,
            m.kernels,
            m.kernel_width,
            a.disable_query,
            a.disable_candidate,
            a.disable_background,
            a.disable_time,
            num_entities,
            num_relations,
        );
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// `--help` text listing every key and its default.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (key=value, defaults in brackets):\n");
    for (key, default, doc) in KEYS {
        let _ = writeln!(out, "  {key:<20} [{default}] {doc}");
    }
    let _ = write!(out, "Profiles: {}", PROFILES.join(", "));
    out
}
