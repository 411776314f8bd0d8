//! Level-wise GSP: join frequent k-sequences into (k+1)-candidates, prune
//! candidates with an infrequent k-subsequence, then count by database scan.

use std::collections::{BTreeMap, BTreeSet};

use super::{contains, MiningStats, PatternStore};
use crate::ingest::BehaviorType;
use crate::seqdb::SequenceDatabase;

pub fn gsp(db: &SequenceDatabase, min_support: usize) -> PatternStore {
    gsp_with_stats(db, min_support).0
}

pub fn gsp_with_stats(db: &SequenceDatabase, min_support: usize) -> (PatternStore, MiningStats) {
    let min = min_support.max(1);
    let seqs: Vec<&[BehaviorType]> = db.iter().map(|s| s.events.as_slice()).collect();
    let mut store = PatternStore::new(min_support, db.len());
    let mut stats = MiningStats::default();

    let mut candidates: BTreeSet<Vec<BehaviorType>> =
        BehaviorType::ALL.iter().map(|&b| vec![b]).collect();
    while !candidates.is_empty() {
        stats.candidates += candidates.len();
        let frequent: BTreeMap<Vec<BehaviorType>, usize> = candidates
            .into_iter()
            .filter_map(|c| {
                let support = seqs.iter().filter(|s| contains(s, &c)).count();
                (support >= min).then_some((c, support))
            })
            .collect();
        candidates = generate(&frequent);
        for (events, support) in frequent {
            store.insert(events, support);
        }
    }
    (store, stats)
}

/// Joins `s1` and `s2` when `s1` minus its first event equals `s2` minus its
/// last, yielding `s1 + last(s2)`, and keeps joins whose every one-deletion
/// subsequence is frequent.
fn generate(frequent: &BTreeMap<Vec<BehaviorType>, usize>) -> BTreeSet<Vec<BehaviorType>> {
    let mut by_prefix: BTreeMap<&[BehaviorType], Vec<BehaviorType>> = BTreeMap::new();
    for s in frequent.keys() {
        by_prefix
            .entry(&s[..s.len() - 1])
            .or_default()
            .push(s[s.len() - 1]);
    }
    let mut out = BTreeSet::new();
    for s1 in frequent.keys() {
        let Some(lasts) = by_prefix.get(&s1[1..]) else {
            continue;
        };
        for &last in lasts {
            let mut candidate = s1.clone();
            candidate.push(last);
            let all_frequent = (0..candidate.len()).all(|skip| {
                let sub: Vec<BehaviorType> = candidate
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != skip)
                    .map(|(_, &e)| e)
                    .collect();
                frequent.contains_key(&sub)
            });
            if all_frequent {
                out.insert(candidate);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::prefixspan_with_stats;
    use super::*;

    #[test]
    fn four_sequence_fixture() {
        assert_eq!(as_pairs(&gsp(&four_sequences(), 3)), four_sequences_at_3());
    }

    #[test]
    fn one_sequence_all_subsequences() {
        let db = SequenceDatabase::from_event_lists([codes("ad")]);
        assert_eq!(
            as_pairs(&gsp(&db, 1)),
            vec![(codes("a"), 1), (codes("d"), 1), (codes("ad"), 1)]
        );
    }

    #[test]
    fn empty_and_out_of_reach() {
        assert!(gsp(&SequenceDatabase::default(), 1).is_empty());
        assert!(gsp(&four_sequences(), 5).is_empty());
    }

    #[test]
    fn generates_more_candidates_than_prefixspan_visits() {
        let (g, gs) = gsp_with_stats(&four_sequences(), 3);
        let (p, ps) = prefixspan_with_stats(&four_sequences(), 3);
        assert!(g.same_patterns(&p));
        // 4 singletons + 16 pairs, versus root + 5 frequent prefixes.
        assert_eq!(gs.candidates, 20);
        assert_eq!(ps.prefix_nodes, 6);
        assert!(gs.candidates > ps.prefix_nodes);
    }

    #[test]
    fn self_join_builds_repeats() {
        let db = SequenceDatabase::from_event_lists([codes("aaa"), codes("aab")]);
        let store = gsp(&db, 2);
        assert_eq!(store.support(&codes("aa")), Some(2));
        assert_eq!(store.support(&codes("aaa")), None);
    }
}
