//! Domain types for events, sequences, users, and datasets, plus the JSONL
//! on-disk format. No model logic lives here.
//!
//! A dataset directory holds one `<split>.jsonl` file per split, one
//! sequence per line with schema `{"user","seq_id","T","events":[[t,k],..]}`,
//! and a sidecar `manifest.json` recording the mark vocabulary size and
//! per-split counts. Marks are 0-indexed integers; mapping string
//! vocabularies to indices happens upstream.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// A single `(time, mark)` observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    /// Nonnegative time in dataset units.
    pub time: f64,
    /// Mark index in `[0, K)`.
    pub mark: usize,
}

/// A time-ordered event list observed on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub events: Vec<Event>,
    pub horizon: f64,
    pub user_id: String,
    pub seq_id: String,
}

impl Sequence {
    pub fn new(
        user_id: impl Into<String>,
        seq_id: impl Into<String>,
        horizon: f64,
        events: Vec<Event>,
    ) -> Self {
        Sequence { events, horizon, user_id: user_id.into(), seq_id: seq_id.into() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Time of the last event, or 0 for an empty sequence.
    pub fn last_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time)
    }

    /// Checks every invariant: finite positive horizon, times strictly
    /// increasing in `[0, horizon]`, marks below `k`.
    pub fn validate(&self, k: usize) -> Result<(), DataError> {
        let fail = |msg: String| DataError::InvalidSequence {
            user_id: self.user_id.clone(),
            seq_id: self.seq_id.clone(),
            msg,
        };
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(fail(format!("horizon {} must be finite and positive", self.horizon)));
        }
        let mut prev = -f64::INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(fail(format!("event {i}: time {} must be finite and >= 0", e.time)));
            }
            if e.time <= prev {
                return Err(fail(format!(
                    "event {i}: time {} does not strictly increase over {prev}",
                    e.time
                )));
            }
            if e.time > self.horizon {
                return Err(fail(format!(
                    "event {i}: time {} exceeds horizon {}",
                    e.time, self.horizon
                )));
            }
            if e.mark >= k {
                return Err(fail(format!("event {i}: mark {} >= K={k}", e.mark)));
            }
            prev = e.time;
        }
        Ok(())
    }

    /// Splits off the first `n_events` events. Both halves keep the
    /// horizon and ids.
    pub fn split_prefix(&self, n_events: usize) -> Result<(Sequence, Sequence), DataError> {
        if n_events > self.len() {
            return Err(DataError::Invalid(format!(
                "split_prefix: n_events {n_events} out of range 0..={}",
                self.len()
            )));
        }
        let prefix = Sequence::new(
            self.user_id.clone(),
            self.seq_id.clone(),
            self.horizon,
            self.events[..n_events].to_vec(),
        );
        let suffix = Sequence::new(
            self.user_id.clone(),
            self.seq_id.clone(),
            self.horizon,
            self.events[n_events..].to_vec(),
        );
        Ok((prefix, suffix))
    }

    /// Splits off the first `ceil(rho * len)` events and returns the split
    /// time `pi` (time of the last prefix event; 0 if the prefix is empty).
    pub fn split_fraction(&self, rho: f64) -> Result<(Sequence, Sequence, f64), DataError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(DataError::Invalid(format!("split_fraction: rho {rho} outside [0, 1]")));
        }
        let n = (rho * self.len() as f64).ceil() as usize;
        let (prefix, suffix) = self.split_prefix(n.min(self.len()))?;
        let pi = prefix.last_time();
        Ok((prefix, suffix, pi))
    }
}

/// A user identifier with its reference set of sequences.
#[derive(Clone, Debug)]
pub struct UserRecord {
    pub user_id: String,
    pub sequences: Vec<Sequence>,
}

/// Which split a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl Split {
    pub fn file_name(&self) -> String {
        format!("{self}.jsonl")
    }
}

/// All users of one split, with the mark vocabulary size.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub users: Vec<UserRecord>,
    pub k: usize,
    pub split: Split,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_sequences(&self) -> usize {
        self.users.iter().map(|u| u.sequences.len()).sum()
    }

    pub fn n_events(&self) -> usize {
        self.users
            .iter()
            .flat_map(|u| &u.sequences)
            .map(Sequence::len)
            .sum()
    }

    pub fn sequences(&self) -> impl Iterator<Item = &Sequence> {
        self.users.iter().flat_map(|u| &u.sequences)
    }

    /// Mean gap between consecutive events, pooled over all sequences.
    pub fn mean_gap(&self) -> f64 {
        let (mut total, mut n) = (0.0, 0usize);
        for s in self.sequences() {
            for w in s.events.windows(2) {
                total += w[1].time - w[0].time;
                n += 1;
            }
        }
        if n == 0 {
            1.0
        } else {
            total / n as f64
        }
    }

    /// Largest gap between consecutive events over all sequences.
    pub fn max_consecutive_gap(&self) -> f64 {
        let mut max = 0.0f64;
        for s in self.sequences() {
            for w in s.events.windows(2) {
                max = max.max(w[1].time - w[0].time);
            }
        }
        max
    }
}

/// Loader configuration. The length window defaults to the 5..=200 filter;
/// `jitter` optionally perturbs times by `U[0, eps)` to break ties before
/// the strict-increase check (off by default).
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub min_events: usize,
    pub max_events: usize,
    pub jitter: Option<f64>,
    pub jitter_seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { min_events: 5, max_events: 200, jitter: None, jitter_seed: 0 }
    }
}

#[derive(Serialize, Deserialize)]
struct SeqRecord {
    user: String,
    seq_id: String,
    #[serde(rename = "T")]
    horizon: f64,
    events: Vec<(f64, usize)>,
}

/// Loads one split from a JSONL file, validating every invariant and
/// applying the length window. Sequences with fewer than 2 events are
/// always rejected.
pub fn load_dataset(
    path: impl AsRef<Path>,
    k: usize,
    split: Split,
    opts: &LoadOptions,
) -> Result<Dataset, DataError> {
    let file = fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let min_events = opts.min_events.max(2);

    let mut users: BTreeMap<String, Vec<Sequence>> = BTreeMap::new();
    let mut seen_seq_ids: HashSet<(String, String)> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SeqRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let mut events: Vec<Event> = rec
            .events
            .iter()
            .map(|&(time, mark)| Event { time, mark })
            .collect();
        if let Some(eps) = opts.jitter {
            let mut rng = crate::rng::substream(opts.jitter_seed, &[lineno as u64]);
            for e in events.iter_mut() {
                e.time = (e.time + rng.random_range(0.0..eps)).min(rec.horizon);
            }
            events.sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        let seq = Sequence::new(rec.user, rec.seq_id, rec.horizon, events);
        seq.validate(k).map_err(|e| DataError::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if seq.len() < min_events || seq.len() > opts.max_events {
            return Err(DataError::Parse {
                line: lineno + 1,
                msg: format!(
                    "sequence length {} outside allowed {min_events}..={}",
                    seq.len(),
                    opts.max_events
                ),
            });
        }
        if !seen_seq_ids.insert((seq.user_id.clone(), seq.seq_id.clone())) {
            return Err(DataError::Parse {
                line: lineno + 1,
                msg: format!("duplicate seq_id {} for user {}", seq.seq_id, seq.user_id),
            });
        }
        users.entry(seq.user_id.clone()).or_default().push(seq);
    }

    let users = users
        .into_iter()
        .map(|(user_id, mut sequences)| {
            sequences.sort_by(|a, b| a.seq_id.cmp(&b.seq_id));
            UserRecord { user_id, sequences }
        })
        .collect();
    Ok(Dataset { users, k, split })
}

/// Writes a dataset in canonical form: users sorted by id, sequences by
/// seq_id, one compact JSON object per line. Loading and re-saving a
/// canonical file is byte-identical.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut users: Vec<&UserRecord> = dataset.users.iter().collect();
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let mut out = fs::File::create(path.as_ref())?;
    for u in users {
        let mut seqs: Vec<&Sequence> = u.sequences.iter().collect();
        seqs.sort_by(|a, b| a.seq_id.cmp(&b.seq_id));
        for s in seqs {
            let rec = SeqRecord {
                user: s.user_id.clone(),
                seq_id: s.seq_id.clone(),
                horizon: s.horizon,
                events: s.events.iter().map(|e| (e.time, e.mark)).collect(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| DataError::Invalid(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Fails if any user id appears in more than one of the given datasets.
pub fn check_disjoint_users(datasets: &[&Dataset]) -> Result<(), DataError> {
    let mut seen: HashSet<&str> = HashSet::new();
    for d in datasets {
        for u in &d.users {
            if !seen.insert(&u.user_id) {
                return Err(DataError::SplitOverlap { user_id: u.user_id.clone() });
            }
        }
    }
    Ok(())
}

/// Sidecar manifest describing a dataset directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataManifest {
    pub k: usize,
    pub splits: BTreeMap<String, SplitCounts>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitCounts {
    pub n_users: usize,
    pub n_sequences: usize,
    pub n_events: usize,
}

impl DataManifest {
    pub fn describe(k: usize, datasets: &[&Dataset]) -> Self {
        let mut splits = BTreeMap::new();
        for d in datasets {
            splits.insert(
                d.split.to_string(),
                SplitCounts {
                    n_users: d.n_users(),
                    n_sequences: d.n_sequences(),
                    n_events: d.n_events(),
                },
            );
        }
        DataManifest { k, splits }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let s = serde_json::to_string_pretty(self).map_err(|e| DataError::Invalid(e.to_string()))?;
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let s = fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| DataError::Invalid(e.to_string()))
    }
}

/// A dataset directory: `train.jsonl`, `valid.jsonl`, `test.jsonl`, and
/// `manifest.json`.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl DatasetBundle {
    /// Loads all three splits, checking user disjointness across them.
    pub fn load_dir(dir: impl AsRef<Path>, opts: &LoadOptions) -> Result<Self, DataError> {
        let dir = dir.as_ref();
        let manifest = DataManifest::load(dir.join("manifest.json"))?;
        let load = |split: Split| load_dataset(dir.join(split.file_name()), manifest.k, split, opts);
        let train = load(Split::Train)?;
        let valid = load(Split::Valid)?;
        let test = load(Split::Test)?;
        check_disjoint_users(&[&train, &valid, &test])?;
        Ok(DatasetBundle { train, valid, test })
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), DataError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for d in [&self.train, &self.valid, &self.test] {
            save_dataset(d, dir.join(d.split.file_name()))?;
        }
        DataManifest::describe(self.train.k, &[&self.train, &self.valid, &self.test])
            .save(dir.join("manifest.json"))
    }

    pub fn k(&self) -> usize {
        self.train.k
    }
}
