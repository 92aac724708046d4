//! Synthetic temporal knowledge graphs with known generative rules.
//!
//! * [`cyclic`]: every entity alternates among fixed targets with a period,
//!   so the answer is a deterministic function of `t mod period`.
//! * [`parity`]: groups of four entities whose answer depends only on the
//!   parity of the gap since the group's previous firing.
//! * [`relay`]: the answer is whichever entity a hub pointed at in the
//!   previous snapshot, so it is visible only through the latest graph.
//! * [`random`]: uniformly random facts, for property tests.
//!
//! All generators are deterministic given their seed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Quadruple, TkgDataset};
use crate::Error;

/// File written next to the split files describing how they were made.
pub const DESCRIPTION_FILE: &str = "synth.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Cyclic,
    Parity,
    Relay,
    Random,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Cyclic => "cyclic",
            SynthKind::Parity => "parity",
            SynthKind::Relay => "relay",
            SynthKind::Random => "random",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cyclic" => Ok(SynthKind::Cyclic),
            "parity" => Ok(SynthKind::Parity),
            "relay" => Ok(SynthKind::Relay),
            "random" => Ok(SynthKind::Random),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

/// A generated dataset plus a human-readable account of its rule.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: TkgDataset,
    pub description: String,
}

impl Synthetic {
    /// Writes the split files, `stat.txt` and the description sidecar.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        self.dataset.write_tsv(dir)?;
        crate::run::write_atomic(&dir.join(DESCRIPTION_FILE), self.description.as_bytes())
    }
}

/// Chronological split: the last `test` timestamps are the test split and
/// the `valid` before them the validation split.
fn split_by_time(
    facts: Vec<Quadruple>,
    timestamps: usize,
    valid: usize,
    test: usize,
) -> (Vec<Quadruple>, Vec<Quadruple>, Vec<Quadruple>) {
    let test_from = timestamps - test;
    let valid_from = test_from - valid;
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for q in facts {
        if q.timestamp >= test_from {
            te.push(q);
        } else if q.timestamp >= valid_from {
            va.push(q);
        } else {
            tr.push(q);
        }
    }
    (tr, va, te)
}

fn check_split(timestamps: usize, valid: usize, test: usize) -> Result<(), Error> {
    if test == 0 || valid + test >= timestamps {
        return Err(Error::Config(format!(
            "need 0 < test and valid + test < timestamps (got {valid} + {test} of {timestamps})"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CyclicParams {
    pub entities: usize,
    pub period: usize,
    pub timestamps: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for CyclicParams {
    fn default() -> Self {
        CyclicParams {
            entities: 20,
            period: 2,
            timestamps: 30,
            valid: 5,
            test: 5,
        }
    }
}

/// Entity `π(i)` links to `π((i + 1 + t mod period) mod entities)` at every
/// timestamp `t` through relation 0, where `π` is a seeded relabelling.
pub fn cyclic(p: &CyclicParams, seed: u64) -> Result<Synthetic, Error> {
    if p.period == 0 || p.entities <= p.period {
        return Err(Error::Config(format!(
            "cyclic needs 0 < period < entities (got period {} with {} entities)",
            p.period, p.entities
        )));
    }
    check_split(p.timestamps, p.valid, p.test)?;
    let mut perm: Vec<usize> = (0..p.entities).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut facts = Vec::with_capacity(p.entities * p.timestamps);
    for t in 0..p.timestamps {
        for i in 0..p.entities {
            let j = (i + 1 + t % p.period) % p.entities;
            facts.push(Quadruple::new(perm[i], 0, perm[j], t));
        }
    }
    let (tr, va, te) = split_by_time(facts, p.timestamps, p.valid, p.test);
    let dataset = TkgDataset::new(p.entities, 1, tr, va, te)?;
    let description = format!(
        "kind=cyclic\nseed={seed}\nentities={}\nperiod={}\ntimestamps={}\nvalid={}\ntest={}\n\
         rule: with pi a seeded permutation of entity ids, pi(i) -r0-> pi((i + 1 + t mod period) mod entities) at every t\n\
         the object is a deterministic function of (subject, t mod period), so the best attainable MRR is 1\n",
        p.entities, p.period, p.timestamps, p.valid, p.test
    );
    Ok(Synthetic { dataset, description })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParityParams {
    pub groups: usize,
    pub timestamps: usize,
    /// Gaps between firings are drawn uniformly from `min_gap..=max_gap`.
    pub min_gap: usize,
    pub max_gap: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for ParityParams {
    fn default() -> Self {
        ParityParams {
            groups: 8,
            timestamps: 120,
            min_gap: 2,
            max_gap: 5,
            valid: 15,
            test: 15,
        }
    }
}

/// Group `g` owns entities `4g..4g+4` = `{s1, s2, a, b}`. It fires at
/// times separated by random gaps `d`; at a firing with even `d` it emits
/// `(s1, r0, a)` and `(s2, r0, b)`, with odd `d` the swapped pair. The first
/// firing of each group uses a gap measured from a virtual firing before
/// time 0. Group 0 always fires at time 0.
pub fn parity(p: &ParityParams, seed: u64) -> Result<Synthetic, Error> {
    if p.groups == 0 || p.min_gap < 2 || p.max_gap < p.min_gap + 1 {
        return Err(Error::Config(
            "parity needs groups > 0 and 2 <= min_gap < max_gap (both parities, never consecutive)".into(),
        ));
    }
    check_split(p.timestamps, p.valid, p.test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = Vec::new();
    for g in 0..p.groups {
        let (s1, s2, a, b) = (4 * g, 4 * g + 1, 4 * g + 2, 4 * g + 3);
        let mut d = rng.gen_range(p.min_gap..=p.max_gap);
        let mut t = if g == 0 { 0 } else { rng.gen_range(0..p.max_gap) };
        while t < p.timestamps {
            let (x, y) = if d % 2 == 0 { (a, b) } else { (b, a) };
            facts.push(Quadruple::new(s1, 0, x, t));
            facts.push(Quadruple::new(s2, 0, y, t));
            d = rng.gen_range(p.min_gap..=p.max_gap);
            t += d;
        }
    }
    facts.sort_by_key(|q| (q.timestamp, q.subject));
    let (tr, va, te) = split_by_time(facts, p.timestamps, p.valid, p.test);
    let dataset = TkgDataset::new(4 * p.groups, 1, tr, va, te)?;
    let description = format!(
        "kind=parity\nseed={seed}\ngroups={}\ntimestamps={}\nmin_gap={}\nmax_gap={}\nvalid={}\ntest={}\n\
         rule: group g = entities (4g, 4g+1, 4g+2, 4g+3) = (s1, s2, a, b) fires after a random gap d;\n\
         even d emits (s1 r0 a), (s2 r0 b); odd d emits (s1 r0 b), (s2 r0 a)\n\
         gaps are independent, so only the interval since the previous firing decides the answer\n",
        p.groups, p.timestamps, p.min_gap, p.max_gap, p.valid, p.test
    );
    Ok(Synthetic { dataset, description })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelayParams {
    pub senders: usize,
    /// Number of entities the hub may point at.
    pub pool: usize,
    pub timestamps: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for RelayParams {
    fn default() -> Self {
        RelayParams {
            senders: 4,
            pool: 10,
            timestamps: 40,
            valid: 5,
            test: 5,
        }
    }
}

/// Entity 0 is a hub, `1..=senders` are senders and the rest form the pool.
/// At every `t` the hub emits `(0, r1, x_t)` for a random pool member `x_t`,
/// and every sender emits `(s, r0, x_{t-1})`. Answers are independent of
/// anything before `t - 1`.
pub fn relay(p: &RelayParams, seed: u64) -> Result<Synthetic, Error> {
    if p.senders == 0 || p.pool < 2 {
        return Err(Error::Config("relay needs at least one sender and a pool of two".into()));
    }
    check_split(p.timestamps, p.valid, p.test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = Vec::new();
    let mut previous = None;
    for t in 0..p.timestamps {
        let x = 1 + p.senders + rng.gen_range(0..p.pool);
        facts.push(Quadruple::new(0, 1, x, t));
        if let Some(prev) = previous {
            facts.extend((1..=p.senders).map(|s| Quadruple::new(s, 0, prev, t)));
        }
        previous = Some(x);
    }
    let (tr, va, te) = split_by_time(facts, p.timestamps, p.valid, p.test);
    let dataset = TkgDataset::new(1 + p.senders + p.pool, 2, tr, va, te)?;
    let description = format!(
        "kind=relay\nseed={seed}\nsenders={}\npool={}\ntimestamps={}\nvalid={}\ntest={}\n\
         rule: entity 0 -r1-> x_t with x_t uniform over the pool; each sender s -r0-> x_(t-1)\n\
         the answer is readable only from the previous snapshot\n",
        p.senders, p.pool, p.timestamps, p.valid, p.test
    );
    Ok(Synthetic { dataset, description })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomParams {
    pub entities: usize,
    pub relations: usize,
    pub timestamps: usize,
    pub facts_per_timestamp: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for RandomParams {
    fn default() -> Self {
        RandomParams {
            entities: 30,
            relations: 4,
            timestamps: 20,
            facts_per_timestamp: 10,
            valid: 3,
            test: 3,
        }
    }
}

/// `facts_per_timestamp` uniformly random triples at every timestamp
/// (duplicates removed).
pub fn random(p: &RandomParams, seed: u64) -> Result<Synthetic, Error> {
    if p.entities < 2 || p.relations == 0 || p.facts_per_timestamp == 0 {
        return Err(Error::Config("random needs >= 2 entities, >= 1 relation and >= 1 fact per timestamp".into()));
    }
    check_split(p.timestamps, p.valid, p.test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = Vec::new();
    for t in 0..p.timestamps {
        let mut at_t: Vec<Quadruple> = (0..p.facts_per_timestamp)
            .map(|_| {
                Quadruple::new(
                    rng.gen_range(0..p.entities),
                    rng.gen_range(0..p.relations),
                    rng.gen_range(0..p.entities),
                    t,
                )
            })
            .collect();
        at_t.sort_by_key(|q| (q.subject, q.relation, q.object));
        at_t.dedup();
        facts.extend(at_t);
    }
    let (tr, va, te) = split_by_time(facts, p.timestamps, p.valid, p.test);
    let dataset = TkgDataset::new(p.entities, p.relations, tr, va, te)?;
    let description = format!(
        "kind=random\nseed={seed}\nentities={}\nrelations={}\ntimestamps={}\nfacts_per_timestamp={}\nvalid={}\ntest={}\n\
         rule: uniformly random (s, r, o) triples at every timestamp, duplicates dropped\n",
        p.entities, p.relations, p.timestamps, p.facts_per_timestamp, p.valid, p.test
    );
    Ok(Synthetic { dataset, description })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::data::{load_dir, Split};

    #[test]
    fn cyclic_answers_follow_period() {
        let s = cyclic(&CyclicParams::default(), 3).unwrap();
        let ds = &s.dataset;
        assert_eq!(ds.timestamps(Split::Test), (25..30).collect::<Vec<_>>());
        assert_eq!(ds.timestamps(Split::Valid), (20..25).collect::<Vec<_>>());
        let mut by_parity: HashMap<(usize, usize), usize> = HashMap::new();
        for q in ds.all_facts() {
            let prev = by_parity.insert((q.subject, q.timestamp % 2), q.object);
            assert!(prev.is_none_or(|o| o == q.object));
        }
        assert_eq!(by_parity.len(), 40);
    }

    #[test]
    fn parity_answer_is_gap_parity() {
        let s = parity(&ParityParams::default(), 11).unwrap();
        let mut last: HashMap<usize, usize> = HashMap::new();
        let mut facts: Vec<_> = s.dataset.all_facts().copied().collect();
        facts.sort_by_key(|q| (q.timestamp, q.subject));
        assert_eq!(facts[0].timestamp, 0);
        for q in facts.iter().filter(|q| q.subject % 4 == 0) {
            if let Some(prev) = last.insert(q.subject, q.timestamp) {
                let gap = q.timestamp - prev;
                assert!((2..=5).contains(&gap));
                let expect_a = gap % 2 == 0;
                assert_eq!(q.object == q.subject + 2, expect_a);
            }
        }
        for split in Split::ALL {
            assert!(!s.dataset.split(split).is_empty());
        }
    }

    #[test]
    fn relay_answer_is_previous_hub_target() {
        let s = relay(&RelayParams::default(), 4).unwrap();
        let facts: Vec<_> = s.dataset.all_facts().copied().collect();
        let hub_at = |t: usize| facts.iter().find(|q| q.subject == 0 && q.timestamp == t).unwrap().object;
        let sends: Vec<_> = facts.iter().filter(|q| q.relation == 0).collect();
        assert_eq!(sends.len(), 4 * 39);
        for q in sends {
            assert_eq!(q.object, hub_at(q.timestamp - 1));
        }
    }

    #[test]
    fn same_seed_same_files() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        parity(&ParityParams::default(), 5).unwrap().write(&a).unwrap();
        parity(&ParityParams::default(), 5).unwrap().write(&b).unwrap();
        parity(&ParityParams::default(), 6).unwrap().write(&c).unwrap();
        for f in ["train.txt", "valid.txt", "test.txt", "stat.txt", DESCRIPTION_FILE] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
        assert_ne!(std::fs::read(a.join("train.txt")).unwrap(), std::fs::read(c.join("train.txt")).unwrap());
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        for synth in [
            cyclic(&CyclicParams::default(), 1).unwrap(),
            parity(&ParityParams::default(), 1).unwrap(),
            relay(&RelayParams::default(), 1).unwrap(),
            random(&RandomParams::default(), 1).unwrap(),
        ] {
            synth.write(dir.path()).unwrap();
            let back = load_dir(dir.path(), Some(1)).unwrap();
            for split in Split::ALL {
                assert_eq!(back.split(split), synth.dataset.split(split));
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(cyclic(&CyclicParams { period: 0, ..Default::default() }, 0).is_err());
        assert!(cyclic(&CyclicParams { valid: 20, test: 10, ..Default::default() }, 0).is_err());
        assert!(parity(&ParityParams { min_gap: 1, ..Default::default() }, 0).is_err());
        assert!(relay(&RelayParams { pool: 1, ..Default::default() }, 0).is_err());
        assert!(random(&RandomParams { entities: 1, ..Default::default() }, 0).is_err());
        assert!("spiral".parse::<SynthKind>().is_err());
    }
}
