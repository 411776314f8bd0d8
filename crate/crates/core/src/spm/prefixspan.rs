//! PrefixSpan over pseudo-projected databases.
//!
//! A projected database is a list of `(sequence index, start offset)` pairs
//! into the original sequences; event data is never copied. Each sequence
//! appears at most once per projection (at its earliest match), which makes
//! the per-symbol counts sequence-level supports.

use rayon::prelude::*;

use super::{MiningStats, PatternStore};
use crate::ingest::BehaviorType;
use crate::seqdb::SequenceDatabase;

#[derive(Clone, Copy)]
struct Projection {
    seq: u32,
    start: u32,
}

struct Miner<'a> {
    seqs: Vec<&'a [BehaviorType]>,
    min_support: usize,
}

type Found = Vec<(Vec<BehaviorType>, usize)>;

impl Miner<'_> {
    fn suffix(&self, p: Projection) -> &[BehaviorType] {
        &self.seqs[p.seq as usize][p.start as usize..]
    }

    fn count(&self, projected: &[Projection]) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for &p in projected {
            let mut seen = [false; 4];
            for e in self.suffix(p) {
                seen[(e.code() - 1) as usize] = true;
            }
            for (c, s) in counts.iter_mut().zip(seen) {
                *c += usize::from(s);
            }
        }
        counts
    }

    fn project(&self, projected: &[Projection], symbol: BehaviorType) -> Vec<Projection> {
        projected
            .iter()
            .filter_map(|&p| {
                self.suffix(p)
                    .iter()
                    .position(|&e| e == symbol)
                    .map(|pos| Projection {
                        seq: p.seq,
                        start: p.start + pos as u32 + 1,
                    })
            })
            .collect()
    }

    fn frequent_symbols(
        &self,
        counts: [usize; 4],
    ) -> impl Iterator<Item = (BehaviorType, usize)> + '_ {
        BehaviorType::ALL
            .into_iter()
            .zip(counts)
            .filter(move |&(_, n)| n >= self.min_support)
    }

    fn grow(
        &self,
        prefix: &mut Vec<BehaviorType>,
        projected: &[Projection],
        found: &mut Found,
        stats: &mut MiningStats,
    ) {
        stats.prefix_nodes += 1;
        let counts = self.count(projected);
        for (symbol, support) in self.frequent_symbols(counts) {
            let next = self.project(projected, symbol);
            prefix.push(symbol);
            found.push((prefix.clone(), support));
            self.grow(prefix, &next, found, stats);
            prefix.pop();
        }
    }
}

pub fn prefixspan(db: &SequenceDatabase, min_support: usize) -> PatternStore {
    prefixspan_with_stats(db, min_support).0
}

/// PrefixSpan plus the number of prefix nodes visited. Sibling subtrees
/// under the empty prefix are mined in parallel.
pub fn prefixspan_with_stats(
    db: &SequenceDatabase,
    min_support: usize,
) -> (PatternStore, MiningStats) {
    let miner = Miner {
        seqs: db.iter().map(|s| s.events.as_slice()).collect(),
        min_support: min_support.max(1),
    };
    let root: Vec<Projection> = (0..miner.seqs.len() as u32)
        .map(|seq| Projection { seq, start: 0 })
        .collect();
    let counts = miner.count(&root);
    let branches: Vec<(BehaviorType, usize)> = miner.frequent_symbols(counts).collect();
    let results: Vec<(Found, MiningStats)> = branches
        .par_iter()
        .map(|&(symbol, support)| {
            let mut found = vec![(vec![symbol], support)];
            let mut stats = MiningStats::default();
            let next = miner.project(&root, symbol);
            miner.grow(&mut vec![symbol], &next, &mut found, &mut stats);
            (found, stats)
        })
        .collect();

    let mut store = PatternStore::new(min_support, db.len());
    let mut stats = MiningStats {
        prefix_nodes: 1,
        candidates: 0,
    };
    for (found, s) in results {
        stats.prefix_nodes += s.prefix_nodes;
        for (events, support) in found {
            store.insert(events, support);
        }
    }
    (store, stats)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn four_sequence_fixture() {
        let store = prefixspan(&four_sequences(), 3);
        assert_eq!(as_pairs(&store), four_sequences_at_3());
        assert_eq!(store.db_size(), 4);
    }

    #[test]
    fn one_sequence_all_subsequences() {
        let db = SequenceDatabase::from_event_lists([codes("ad")]);
        let store = prefixspan(&db, 1);
        assert_eq!(
            as_pairs(&store),
            vec![(codes("a"), 1), (codes("d"), 1), (codes("ad"), 1)]
        );
    }

    #[test]
    fn empty_and_out_of_reach() {
        assert!(prefixspan(&SequenceDatabase::default(), 1).is_empty());
        assert!(prefixspan(&four_sequences(), 5).is_empty());
    }

    #[test]
    fn repeated_symbols_count_once_per_sequence() {
        let db = SequenceDatabase::from_event_lists([codes("aaa"), codes("a")]);
        let store = prefixspan(&db, 1);
        assert_eq!(store.support(&codes("a")), Some(2));
        assert_eq!(store.support(&codes("aa")), Some(1));
        assert_eq!(store.support(&codes("aaa")), Some(1));
        assert_eq!(store.support(&codes("aaaa")), None);
    }

    #[test]
    fn visits_root_plus_one_node_per_pattern() {
        let (store, stats) = prefixspan_with_stats(&four_sequences(), 3);
        assert_eq!(stats.prefix_nodes, store.len() + 1);
    }
}
