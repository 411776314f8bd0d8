//! Exhaustive enumeration oracle for the miners.

use super::{contains, PatternStore};
use crate::error::{Error, Result};
use crate::ingest::BehaviorType;
use crate::seqdb::SequenceDatabase;

/// Largest database (in total events) the oracle accepts.
pub const BRUTE_FORCE_EVENT_LIMIT: usize = 360;

/// Every sequence over the four behavior codes of length `1..=max_len`,
/// counted by naive containment against each database sequence. A string
/// with support below `min_support` is not extended, since no sequence can
/// contain an extension without containing the string itself.
pub fn brute_force_frequent(
    db: &SequenceDatabase,
    min_support: usize,
    max_len: usize,
) -> Result<PatternStore> {
    let events = db.total_events();
    if events > BRUTE_FORCE_EVENT_LIMIT {
        return Err(Error::InputTooLarge {
            events,
            limit: BRUTE_FORCE_EVENT_LIMIT,
        });
    }
    let min = min_support.max(1);
    let mut store = PatternStore::new(min_support, db.len());
    let mut stack: Vec<Vec<BehaviorType>> = BehaviorType::ALL.iter().map(|&b| vec![b]).collect();
    while let Some(candidate) = stack.pop() {
        let support = db
            .iter()
            .filter(|s| contains(&s.events, &candidate))
            .count();
        if support < min {
            continue;
        }
        if candidate.len() < max_len {
            for b in BehaviorType::ALL {
                let mut next = candidate.clone();
                next.push(b);
                stack.push(next);
            }
        }
        store.insert(candidate, support);
    }
    Ok(store)
}
