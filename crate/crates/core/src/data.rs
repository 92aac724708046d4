//! Quadruple datasets: parsing, inverse augmentation and per-timestamp
//! snapshots.
//!
//! The on-disk layout follows the public benchmark releases: `train.txt`,
//! `valid.txt` and `test.txt` hold whitespace-separated integer columns
//! `subject relation object time` (extra columns are ignored) and
//! `stat.txt` starts with the entity and relation counts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}:{line}: {detail}")]
    Bounds {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("split timestamps overlap or are out of order: {0}")]
    SplitOrder(String),
    #[error("dataset is already augmented with inverse relations")]
    AlreadyAugmented,
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quadruple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    pub timestamp: usize,
}

impl Quadruple {
    pub fn new(subject: usize, relation: usize, object: usize, timestamp: usize) -> Self {
        Quadruple {
            subject,
            relation,
            object,
            timestamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(DataError::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// All facts sharing one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotGraph {
    index: usize,
    edges: Vec<(usize, usize, usize)>,
    /// Edge positions ordered by object.
    by_object: Vec<usize>,
    in_degree: BTreeMap<usize, usize>,
}

impl SnapshotGraph {
    pub fn new(index: usize, edges: Vec<(usize, usize, usize)>) -> Self {
        let mut by_object: Vec<usize> = (0..edges.len()).collect();
        by_object.sort_by_key(|&i| (edges[i].2, i));
        let mut in_degree = BTreeMap::new();
        for &(_, _, o) in &edges {
            *in_degree.entry(o).or_insert(0) += 1;
        }
        SnapshotGraph {
            index,
            edges,
            by_object,
            in_degree,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// `(subject, relation, object)` triples in insertion order.
    pub fn edges(&self) -> &[(usize, usize, usize)] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn in_degree(&self, entity: usize) -> usize {
        self.in_degree.get(&entity).copied().unwrap_or(0)
    }

    /// Edges whose object is `entity`.
    pub fn incoming(&self, entity: usize) -> impl Iterator<Item = &(usize, usize, usize)> + '_ {
        let lo = self.by_object.partition_point(|&i| self.edges[i].2 < entity);
        let hi = self.by_object.partition_point(|&i| self.edges[i].2 <= entity);
        self.by_object[lo..hi].iter().map(move |&i| &self.edges[i])
    }
}

/// An integer-encoded temporal knowledge graph split chronologically.
#[derive(Clone, Debug)]
pub struct TkgDataset {
    num_entities: usize,
    num_base_relations: usize,
    time_granularity: u64,
    time_origin: i64,
    train: Vec<Quadruple>,
    valid: Vec<Quadruple>,
    test: Vec<Quadruple>,
    augmented: bool,
    snapshots: Vec<SnapshotGraph>,
}

impl TkgDataset {
    /// Builds a dataset from already-normalized quadruples. Splits may be
    /// empty, but non-empty splits must be chronologically disjoint.
    pub fn new(
        num_entities: usize,
        num_base_relations: usize,
        train: Vec<Quadruple>,
        valid: Vec<Quadruple>,
        test: Vec<Quadruple>,
    ) -> Result<Self, DataError> {
        if num_entities == 0 || num_base_relations == 0 {
            return Err(DataError::Invalid("entity and relation counts must be positive".into()));
        }
        for (split, facts) in [(Split::Train, &train), (Split::Valid, &valid), (Split::Test, &test)] {
            if let Some(q) = facts.iter().find(|q| {
                q.subject >= num_entities || q.object >= num_entities || q.relation >= num_base_relations
            }) {
                return Err(DataError::Invalid(format!("{split} fact {q:?} exceeds declared counts")));
            }
        }
        check_order(&train, &valid, &test)?;
        let mut ds = TkgDataset {
            num_entities,
            num_base_relations,
            time_granularity: 1,
            time_origin: 0,
            train,
            valid,
            test,
            augmented: false,
            snapshots: Vec::new(),
        };
        ds.snapshots = build_snapshots(&ds);
        Ok(ds)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    /// Size of the relation table (`2 |R|` once augmented).
    pub fn num_relations(&self) -> usize {
        if self.augmented {
            2 * self.num_base_relations
        } else {
            self.num_base_relations
        }
    }

    pub fn time_granularity(&self) -> u64 {
        self.time_granularity
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn split(&self, split: Split) -> &[Quadruple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_facts(&self) -> impl Iterator<Item = &Quadruple> + '_ {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshots(&self) -> &[SnapshotGraph] {
        &self.snapshots
    }

    /// Snapshots strictly before `t`; nothing at or after `t` is reachable
    /// through the returned slice.
    pub fn snapshots_before(&self, t: usize) -> &[SnapshotGraph] {
        &self.snapshots[..t.min(self.snapshots.len())]
    }

    /// Distinct timestamps of a split in increasing order.
    pub fn timestamps(&self, split: Split) -> Vec<usize> {
        let mut ts: Vec<usize> = self.split(split).iter().map(|q| q.timestamp).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// Relation id of the mirror of `relation`. Applying it twice returns
    /// the original id.
    pub fn inverse_relation(&self, relation: usize) -> usize {
        let r = self.num_base_relations;
        if relation < r {
            relation + r
        } else {
            relation - r
        }
    }

    /// Adds `(o, r + |R|, s, t)` for every base fact `(s, r, o, t)`.
    pub fn augment_inverse(mut self) -> Result<Self, DataError> {
        if self.augmented {
            return Err(DataError::AlreadyAugmented);
        }
        let r = self.num_base_relations;
        for facts in [&mut self.train, &mut self.valid, &mut self.test] {
            let mirrors: Vec<Quadruple> = facts
                .iter()
                .map(|q| Quadruple::new(q.object, q.relation + r, q.subject, q.timestamp))
                .collect();
            facts.extend(mirrors);
        }
        self.augmented = true;
        self.snapshots = build_snapshots(&self);
        Ok(self)
    }

    /// Writes the base facts in the canonical layout: one
    /// `subject\trelation\tobject\ttime` line per fact (time in raw units)
    /// and `stat.txt` holding the two counts.
    pub fn write_tsv(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for split in Split::ALL {
            let mut text = String::new();
            for q in self.split(split).iter().filter(|q| q.relation < self.num_base_relations) {
                let raw = self.time_origin + (q.timestamp as u64 * self.time_granularity) as i64;
                text.push_str(&format!("{}\t{}\t{}\t{}\n", q.subject, q.relation, q.object, raw));
            }
            write_file(&dir.join(split.file_name()), text.as_bytes())?;
        }
        let stat = format!("{}\t{}\n", self.num_entities, self.num_base_relations);
        write_file(&dir.join("stat.txt"), stat.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

fn check_order(train: &[Quadruple], valid: &[Quadruple], test: &[Quadruple]) -> Result<(), DataError> {
    let range = |facts: &[Quadruple]| {
        let min = facts.iter().map(|q| q.timestamp).min()?;
        let max = facts.iter().map(|q| q.timestamp).max()?;
        Some((min, max))
    };
    let ranges: Vec<(Split, (usize, usize))> = [(Split::Train, train), (Split::Valid, valid), (Split::Test, test)]
        .into_iter()
        .filter_map(|(s, f)| range(f).map(|r| (s, r)))
        .collect();
    for pair in ranges.windows(2) {
        let ((a, (_, a_max)), (b, (b_min, _))) = (pair[0], pair[1]);
        if a_max >= b_min {
            return Err(DataError::SplitOrder(format!(
                "{a} ends at {a_max} but {b} starts at {b_min}"
            )));
        }
    }
    Ok(())
}

/// Groups every fact by timestamp. Timestamps without facts get empty
/// graphs so the result is indexable by snapshot index.
pub fn build_snapshots(dataset: &TkgDataset) -> Vec<SnapshotGraph> {
    let count = dataset.all_facts().map(|q| q.timestamp + 1).max().unwrap_or(0);
    let mut edges: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); count];
    for q in dataset.all_facts() {
        edges[q.timestamp].push((q.subject, q.relation, q.object));
    }
    edges
        .into_iter()
        .enumerate()
        .map(|(t, e)| SnapshotGraph::new(t, e))
        .collect()
}

struct RawFact {
    line: usize,
    quad: [i64; 4],
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_facts(path: &Path) -> Result<Vec<RawFact>, DataError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                detail: format!("expected 4 columns, found {}", fields.len()),
            });
        }
        let mut quad = [0i64; 4];
        for (slot, field) in quad.iter_mut().zip(&fields[..4]) {
            *slot = field.parse().map_err(|_| DataError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                detail: format!("`{field}` is not an integer"),
            })?;
        }
        out.push(RawFact { line: line_no, quad });
    }
    Ok(out)
}

fn parse_stat(path: &Path) -> Result<(usize, usize), DataError> {
    let text = read_text(path)?;
    let nums: Vec<usize> = text
        .split_whitespace()
        .take(2)
        .map(|f| {
            f.parse().map_err(|_| DataError::Parse {
                path: path.to_path_buf(),
                line: 1,
                detail: format!("`{f}` is not a count"),
            })
        })
        .collect::<Result<_, _>>()?;
    match nums[..] {
        [e, r] if e > 0 && r > 0 => Ok((e, r)),
        _ => Err(DataError::Parse {
            path: path.to_path_buf(),
            line: 1,
            detail: "expected two positive counts".into(),
        }),
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// GCD of the gaps between consecutive distinct raw times (1 if there is
/// only one distinct time).
pub fn infer_granularity(raw_times: impl IntoIterator<Item = i64>) -> u64 {
    let mut times: Vec<i64> = raw_times.into_iter().collect();
    times.sort_unstable();
    times.dedup();
    let g = times
        .windows(2)
        .map(|w| (w[1] - w[0]) as u64)
        .fold(0, gcd);
    g.max(1)
}

/// Paths of the four files making up one dataset.
#[derive(Clone, Debug)]
pub struct DatasetFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub stat: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetFiles {
            train: dir.join("train.txt"),
            valid: dir.join("valid.txt"),
            test: dir.join("test.txt"),
            stat: dir.join("stat.txt"),
        }
    }

    /// First file that does not exist, if any.
    pub fn missing(&self) -> Option<&Path> {
        [&self.train, &self.valid, &self.test, &self.stat]
            .into_iter()
            .find(|p| !p.is_file())
            .map(PathBuf::as_path)
    }
}

/// Parses the three split files and the stat file. Raw times are shifted
/// so the earliest becomes 0 and divided by the granularity (inferred from
/// the data unless `granularity` is given).
pub fn parse_dataset(files: &DatasetFiles, granularity: Option<u64>) -> Result<TkgDataset, DataError> {
    let (num_entities, num_relations) = parse_stat(&files.stat)?;
    let raw: Vec<(Split, &PathBuf, Vec<RawFact>)> = [
        (Split::Train, &files.train),
        (Split::Valid, &files.valid),
        (Split::Test, &files.test),
    ]
    .into_iter()
    .map(|(s, p)| parse_facts(p).map(|f| (s, p, f)))
    .collect::<Result<_, _>>()?;

    for (split, path, facts) in &raw {
        if facts.is_empty() {
            return Err(DataError::EmptySplit(*split));
        }
        for f in facts {
            let [s, r, o, t] = f.quad;
            let bad = if s < 0 || s as usize >= num_entities {
                Some(format!("subject {s} outside [0, {num_entities})"))
            } else if o < 0 || o as usize >= num_entities {
                Some(format!("object {o} outside [0, {num_entities})"))
            } else if r < 0 || r as usize >= num_relations {
                Some(format!("relation {r} outside [0, {num_relations})"))
            } else if t < 0 {
                Some(format!("negative time {t}"))
            } else {
                None
            };
            if let Some(detail) = bad {
                return Err(DataError::Bounds {
                    path: (*path).clone(),
                    line: f.line,
                    detail,
                });
            }
        }
    }

    let all_times = || raw.iter().flat_map(|(_, _, f)| f.iter().map(|x| x.quad[3]));
    let origin = all_times().min().unwrap_or(0);
    let gran = match granularity {
        Some(0) => return Err(DataError::Invalid("granularity must be positive".into())),
        Some(g) => g,
        None => infer_granularity(all_times()),
    };
    let normalize = |facts: &[RawFact]| -> Vec<Quadruple> {
        facts
            .iter()
            .map(|f| {
                let [s, r, o, t] = f.quad;
                let idx = ((t - origin) as u64 / gran) as usize;
                Quadruple::new(s as usize, r as usize, o as usize, idx)
            })
            .collect()
    };
    let mut ds = TkgDataset::new(
        num_entities,
        num_relations,
        normalize(&raw[0].2),
        normalize(&raw[1].2),
        normalize(&raw[2].2),
    )?;
    ds.time_granularity = gran;
    ds.time_origin = origin;
    Ok(ds)
}

/// [`parse_dataset`] on `train.txt`, `valid.txt`, `test.txt` and
/// `stat.txt` inside `dir`.
pub fn load_dir(dir: &Path, granularity: Option<u64>) -> Result<TkgDataset, DataError> {
    let files = DatasetFiles::in_dir(dir);
    if let Some(missing) = files.missing() {
        return Err(DataError::Io {
            path: missing.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    parse_dataset(&files, granularity)
}
