use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::attrs::ItemAttributes;
use super::log::{Event, InteractionLog};
use super::transform::{binarize_feedback, k_core};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Recall,
    Ranking,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "recall" => Ok(Task::Recall),
            "ranking" => Ok(Task::Ranking),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected recall or ranking)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Recall => "recall",
            Task::Ranking => "ranking",
        })
    }
}

/// Fixed-length, left-padded chronological window of one user's events.
/// Pad positions carry item 0, behavior 0, timestamp 0 and label 0.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSequence {
    pub user: u32,
    pub items: Vec<u32>,
    pub behaviors: Vec<u32>,
    pub timestamps: Vec<i64>,
    pub labels: Vec<u8>,
    /// Channel-major attribute ids: `attrs[channel][position]`.
    pub attrs: Vec<Vec<u32>>,
    pub domains: Vec<u32>,
}

impl UserSequence {
    /// Left-pads `events` (most recent last) to length `n`, keeping the newest `n`.
    pub fn from_events(
        user: u32,
        events: &[Event],
        n: usize,
        labels: Option<&[u8]>,
        attrs: Option<&ItemAttributes>,
    ) -> Self {
        let skip = events.len().saturating_sub(n);
        let kept = &events[skip..];
        let pad = n - kept.len();
        let channels = attrs.map_or(0, ItemAttributes::num_channels);
        let mut s = Self {
            user,
            items: vec![0; n],
            behaviors: vec![0; n],
            timestamps: vec![0; n],
            labels: vec![0; n],
            attrs: vec![vec![0; n]; channels],
            domains: vec![0; n],
        };
        for (k, e) in kept.iter().enumerate() {
            let p = pad + k;
            s.items[p] = e.item;
            s.behaviors[p] = e.behavior;
            s.timestamps[p] = e.timestamp;
            s.domains[p] = e.domain;
            if let Some(l) = labels {
                s.labels[p] = l[skip + k];
            }
            if let Some(a) = attrs {
                for (c, &v) in a.of(e.item).iter().enumerate() {
                    s.attrs[c][p] = v;
                }
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Index of the first real event; equals `len()` for an all-pad sequence.
    pub fn start(&self) -> usize {
        self.items.iter().position(|&i| i != 0).unwrap_or(self.items.len())
    }

    /// Number of real events.
    pub fn num_valid(&self) -> usize {
        self.len() - self.start()
    }

    pub fn last_item(&self) -> Option<u32> {
        self.items.last().copied().filter(|&i| i != 0)
    }

    /// The first `keep` real events re-padded to the same length.
    pub fn prefix(&self, keep: usize) -> Self {
        let picked: Vec<usize> = (self.start()..self.len()).take(keep).collect();
        self.select(&picked)
    }

    /// Real events at the given positions (ascending), re-padded to the same length.
    pub fn select(&self, positions: &[usize]) -> Self {
        let n = self.len();
        let pad = n - positions.len();
        let mut s = Self {
            user: self.user,
            items: vec![0; n],
            behaviors: vec![0; n],
            timestamps: vec![0; n],
            labels: vec![0; n],
            attrs: vec![vec![0; n]; self.attrs.len()],
            domains: vec![0; n],
        };
        for (k, &p) in positions.iter().enumerate() {
            let q = pad + k;
            s.items[q] = self.items[p];
            s.behaviors[q] = self.behaviors[p];
            s.timestamps[q] = self.timestamps[p];
            s.labels[q] = self.labels[p];
            s.domains[q] = self.domains[p];
            for c in 0..self.attrs.len() {
                s.attrs[c][q] = self.attrs[c][p];
            }
        }
        s
    }

    /// The newest `n` real events, left-padded to length `n`.
    pub fn window(&self, n: usize) -> Self {
        let real = self.num_valid().min(n);
        let pad = n - real;
        let from = self.len() - real;
        let take = |v: &[u32]| [vec![0; pad], v[from..].to_vec()].concat();
        Self {
            user: self.user,
            items: take(&self.items),
            behaviors: take(&self.behaviors),
            timestamps: [vec![0; pad], self.timestamps[from..].to_vec()].concat(),
            labels: [vec![0; pad], self.labels[from..].to_vec()].concat(),
            attrs: self.attrs.iter().map(|a| take(a)).collect(),
            domains: take(&self.domains),
        }
    }

    /// Checks the layout invariants: equal channel lengths, contiguous pad
    /// prefix with zeroed channels, nondecreasing real timestamps.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.behaviors.len(),
            self.timestamps.len(),
            self.labels.len(),
            self.domains.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.attrs.iter().any(|a| a.len() != n) {
            return Err(Error::Data(format!("user {}: channel lengths differ", self.user)));
        }
        let start = self.start();
        if self.items[start..].contains(&0) {
            return Err(Error::Data(format!("user {}: pad inside the sequence", self.user)));
        }
        let pad_clean = (0..start).all(|p| {
            self.behaviors[p] == 0
                && self.timestamps[p] == 0
                && self.labels[p] == 0
                && self.attrs.iter().all(|a| a[p] == 0)
        });
        if !pad_clean {
            return Err(Error::Data(format!("user {}: non-zero pad channel", self.user)));
        }
        if self.timestamps[start..].windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Data(format!("user {}: timestamps out of order", self.user)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOptions {
    pub max_len: usize,
    pub task: Task,
    /// Users with fewer events are dropped.
    pub min_events: usize,
    /// Apply iterative 5-core filtering to users and items first.
    pub five_core: bool,
}

impl SequenceOptions {
    pub fn new(max_len: usize, task: Task) -> Self {
        Self {
            max_len,
            task,
            min_events: 3,
            five_core: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    pub sequences: Vec<UserSequence>,
    /// Users dropped for having fewer than `min_events` events.
    pub dropped_short: usize,
}

/// One padded window per user, ascending user id.
pub fn build_sequences(
    log: &InteractionLog,
    opts: &SequenceOptions,
    attrs: Option<&ItemAttributes>,
) -> Result<SequenceSet> {
    if opts.max_len < 3 {
        return Err(Error::Config(format!(
            "max_len must be at least 3 for a leave-last-two split, got {}",
            opts.max_len
        )));
    }
    let filtered;
    let log = if opts.five_core {
        filtered = k_core(log, 5);
        &filtered
    } else {
        log
    };
    let mut sequences = Vec::new();
    let mut dropped_short = 0;
    for run in log.by_user() {
        if run.len() < opts.min_events.max(3) {
            dropped_short += 1;
            continue;
        }
        let labels = match opts.task {
            Task::Ranking => Some(
                run.iter()
                    .map(|e| binarize_feedback(e.rating))
                    .collect::<Result<Vec<u8>>>()?,
            ),
            Task::Recall => None,
        };
        sequences.push(UserSequence::from_events(
            run[0].user,
            run,
            opts.max_len,
            labels.as_deref(),
            attrs,
        ));
    }
    Ok(SequenceSet {
        sequences,
        dropped_short,
    })
}

/// Train and test examples. Each example's last real position is its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Sequence without its last event; the target is the second-to-last event.
    pub train: Vec<UserSequence>,
    /// Full sequence; the target is the last event.
    pub test: Vec<UserSequence>,
}

pub fn split_leave_last(seqs: &[UserSequence]) -> Result<Split> {
    let mut train = Vec::with_capacity(seqs.len());
    let mut test = Vec::with_capacity(seqs.len());
    for s in seqs {
        let m = s.num_valid();
        if m < 3 {
            return Err(Error::Data(format!(
                "user {} has {m} events; leave-last-two needs at least 3",
                s.user
            )));
        }
        train.push(s.prefix(m - 1));
        test.push(s.clone());
    }
    Ok(Split { train, test })
}
