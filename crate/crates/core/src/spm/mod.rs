//! Frequent behavior-pattern mining and payment prediction.
//!
//! Support is sequence-level: a pattern's support is the number of
//! sequences containing it as a (not necessarily contiguous) subsequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::{self, Header};
use crate::ingest::BehaviorType;
use crate::seqdb::{parse_codes, push_codes, SequenceDatabase};

mod brute;
mod gsp;
mod predict;
mod prefixspan;

pub use brute::{brute_force_frequent, BRUTE_FORCE_EVENT_LIMIT};
pub use gsp::{gsp, gsp_with_stats};
pub use predict::{
    payment_confidence, payment_confidence_with, ConfidenceStrategy, PaymentPrediction,
    PaymentRules,
};
pub use prefixspan::{prefixspan, prefixspan_with_stats};

pub const STORE_FORMAT: &str = "hybrec-patterns-v1";

/// True when `pattern` occurs in `sequence` in order, gaps allowed.
pub fn contains(sequence: &[BehaviorType], pattern: &[BehaviorType]) -> bool {
    let mut it = sequence.iter();
    pattern.iter().all(|p| it.any(|s| s == p))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequentialPattern {
    pub events: Vec<BehaviorType>,
    pub support: usize,
}

/// Search-effort counters reported by the miners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MiningStats {
    /// PrefixSpan: prefixes whose projected database was scanned (root included).
    pub prefix_nodes: usize,
    /// GSP: candidate sequences whose support was counted.
    pub candidates: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Miner {
    #[default]
    PrefixSpan,
    Gsp,
}

impl Miner {
    pub fn mine(self, db: &SequenceDatabase, min_support: usize) -> PatternStore {
        match self {
            Miner::PrefixSpan => prefixspan(db, min_support),
            Miner::Gsp => gsp(db, min_support),
        }
    }
}

impl std::str::FromStr for Miner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prefixspan" => Ok(Miner::PrefixSpan),
            "gsp" => Ok(Miner::Gsp),
            other => Err(format!(
                "unknown miner {other:?} (expected prefixspan or gsp)"
            )),
        }
    }
}

impl std::fmt::Display for Miner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Miner::PrefixSpan => "prefixspan",
            Miner::Gsp => "gsp",
        })
    }
}

/// A set of mined patterns with their supports, keyed by event list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternStore {
    patterns: BTreeMap<Vec<BehaviorType>, usize>,
    min_support: usize,
    db_size: usize,
}

impl PatternStore {
    pub fn new(min_support: usize, db_size: usize) -> Self {
        PatternStore {
            patterns: BTreeMap::new(),
            min_support,
            db_size,
        }
    }

    /// Builds a store from a pattern list; repeated event lists collapse.
    pub fn from_patterns<I>(patterns: I, min_support: usize, db_size: usize) -> Self
    where
        I: IntoIterator<Item = SequentialPattern>,
    {
        let mut store = PatternStore::new(min_support, db_size);
        for p in patterns {
            store.insert(p.events, p.support);
        }
        store
    }

    pub(crate) fn insert(&mut self, events: Vec<BehaviorType>, support: usize) {
        self.patterns.insert(events, support);
    }

    pub fn support(&self, events: &[BehaviorType]) -> Option<usize> {
        self.patterns.get(events).copied()
    }

    pub fn min_support(&self) -> usize {
        self.min_support
    }

    pub fn db_size(&self) -> usize {
        self.db_size
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Patterns in file order: by length, then event list.
    pub fn iter(&self) -> impl Iterator<Item = SequentialPattern> + '_ {
        let mut keys: Vec<&Vec<BehaviorType>> = self.patterns.keys().collect();
        keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        keys.into_iter().map(|k| SequentialPattern {
            events: k.clone(),
            support: self.patterns[k],
        })
    }

    pub(crate) fn raw(&self) -> &BTreeMap<Vec<BehaviorType>, usize> {
        &self.patterns
    }

    /// Same patterns and supports, ignoring the recorded thresholds.
    pub fn same_patterns(&self, other: &PatternStore) -> bool {
        self.patterns == other.patterns
    }

    pub fn header(&self) -> Header {
        Header::new()
            .with("format", STORE_FORMAT)
            .with("min_support", self.min_support)
            .with("db_size", self.db_size)
    }

    /// Serializes with the store's own header followed by `extra` entries.
    pub fn to_text(&self, extra: &Header) -> String {
        let mut header = self.header();
        for (k, v) in extra.entries() {
            header.set(k, v);
        }
        let mut out = String::new();
        header.write_to(&mut out);
        for p in self.iter() {
            push_codes(&mut out, &p.events);
            let _ = writeln!(out, "\t{}", p.support);
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<(Header, Self)> {
        let (header, body, skipped) = Header::split(text).map_err(|r| Error::format(path, 1, r))?;
        let number = |key: &str| -> Result<usize> {
            header.get(key).map_or(Ok(0), |v| {
                v.parse()
                    .map_err(|_| Error::format(path, 1, format!("bad {key} {v:?}")))
            })
        };
        let mut store = PatternStore::new(number("min_support")?, number("db_size")?);
        for (i, line) in body.lines().enumerate() {
            let bad = |reason: String| Error::format(path, skipped + i + 1, reason);
            let (codes, support) = line
                .split_once('\t')
                .ok_or_else(|| bad("missing tab".into()))?;
            let events = parse_codes(codes).map_err(bad)?;
            if events.is_empty() {
                return Err(bad("empty pattern".into()));
            }
            let support: usize = support
                .parse()
                .map_err(|_| bad(format!("bad support {support:?}")))?;
            if store.patterns.insert(events, support).is_some() {
                return Err(bad("duplicate pattern".into()));
            }
        }
        Ok((header, store))
    }

    pub fn read(path: &Path) -> Result<(Header, Self)> {
        Self::from_text(&fsio::read_to_string(path)?, path)
    }

    pub fn write(&self, path: &Path, extra: &Header) -> Result<()> {
        fsio::write_atomic(path, self.to_text(extra).as_bytes())
    }
}

/// Mines each category's sequences separately.
pub fn mine_per_category(
    db: &SequenceDatabase,
    min_support: usize,
    miner: Miner,
) -> BTreeMap<String, PatternStore> {
    let mut by_category: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for s in db.iter() {
        by_category
            .entry(s.category_id.as_str())
            .or_default()
            .push(s.clone());
    }
    by_category
        .into_iter()
        .map(|(c, seqs)| {
            (
                c.to_string(),
                miner.mine(&SequenceDatabase::new(seqs), min_support),
            )
        })
        .collect()
}

/// Re-mines the sequence database at `db_path` and atomically replaces the
/// store at `out_path`.
pub fn refresh(
    db_path: &Path,
    min_support: usize,
    out_path: &Path,
    miner: Miner,
    extra: &Header,
) -> Result<PatternStore> {
    let (_, db) = SequenceDatabase::read(db_path)?;
    let store = miner.mine(&db, min_support.max(1));
    store.write(out_path, extra)?;
    Ok(store)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn codes(s: &str) -> Vec<BehaviorType> {
        s.bytes()
            .map(|b| BehaviorType::from_code(b - b'a' + 1).expect("a..d"))
            .collect()
    }

    /// {abcd, acd, abd, bc} with a..d mapped to codes 1..4.
    pub fn four_sequences() -> SequenceDatabase {
        SequenceDatabase::from_event_lists(["abcd", "acd", "abd", "bc"].map(codes))
    }

    /// Hand-checked frequent set of [`four_sequences`] at support 3.
    pub fn four_sequences_at_3() -> Vec<(Vec<BehaviorType>, usize)> {
        vec![
            (codes("a"), 3),
            (codes("b"), 3),
            (codes("c"), 3),
            (codes("d"), 3),
            (codes("ad"), 3),
        ]
    }

    pub fn as_pairs(store: &PatternStore) -> Vec<(Vec<BehaviorType>, usize)> {
        store.iter().map(|p| (p.events, p.support)).collect()
    }
}
