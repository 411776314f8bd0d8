//! Per-(user, category) behavior sequences cut from purchase-anchored
//! windows, and the open candidate sequences scanned for purchase intent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::{self, Header};
use crate::ingest::{BehaviorType, Hour, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorRule {
    PaymentDay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_days: u32,
    pub anchor: AnchorRule,
    /// Whether events earlier on the payment day belong to its window.
    pub include_anchor_day: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_days: 7,
            anchor: AnchorRule::PaymentDay,
            include_anchor_day: true,
        }
    }
}

impl WindowConfig {
    pub fn days(window_days: u32) -> Self {
        WindowConfig {
            window_days,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::InvalidConfig(
                "window_days must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSequence {
    pub user_id: String,
    pub category_id: String,
    /// Timestamp of the anchoring payment, or the scan instant for candidates.
    pub anchor: Hour,
    pub events: Vec<BehaviorType>,
}

impl BehaviorSequence {
    pub fn anchor_day(&self) -> chrono::NaiveDate {
        self.anchor.date()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDatabase {
    pub sequences: Vec<BehaviorSequence>,
}

impl SequenceDatabase {
    pub fn new(sequences: Vec<BehaviorSequence>) -> Self {
        SequenceDatabase { sequences }
    }

    /// Wraps bare event lists with placeholder ids (`s0`, `s1`, ...).
    pub fn from_event_lists<I>(lists: I) -> Self
    where
        I: IntoIterator<Item = Vec<BehaviorType>>,
    {
        let anchor =
            Hour::start_of(chrono::NaiveDate::from_ymd_opt(2014, 11, 18).expect("valid date"));
        SequenceDatabase::new(
            lists
                .into_iter()
                .enumerate()
                .map(|(k, events)| BehaviorSequence {
                    user_id: format!("s{k}"),
                    category_id: "c".into(),
                    anchor,
                    events,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BehaviorSequence> {
        self.sequences.iter()
    }

    pub fn total_events(&self) -> usize {
        self.sequences.iter().map(|s| s.events.len()).sum()
    }

    pub fn max_len(&self) -> usize {
        self.sequences
            .iter()
            .map(|s| s.events.len())
            .max()
            .unwrap_or(0)
    }

    pub fn to_text(&self, header: &Header) -> String {
        let mut out = String::new();
        header.write_to(&mut out);
        for s in &self.sequences {
            let _ = write!(out, "{}\t{}\t{}\t", s.user_id, s.category_id, s.anchor);
            push_codes(&mut out, &s.events);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<(Header, Self)> {
        let (header, body, skipped) = Header::split(text).map_err(|r| Error::format(path, 1, r))?;
        let mut sequences = Vec::new();
        for (i, line) in body.lines().enumerate() {
            let line_no = skipped + i + 1;
            let bad = |reason: String| Error::format(path, line_no, reason);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!(
                    "expected 4 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(bad("empty user or category id".into()));
            }
            let anchor: Hour = fields[2].parse().map_err(bad)?;
            let events = parse_codes(fields[3]).map_err(bad)?;
            if events.is_empty() {
                return Err(bad("empty sequence".into()));
            }
            sequences.push(BehaviorSequence {
                user_id: fields[0].to_string(),
                category_id: fields[1].to_string(),
                anchor,
                events,
            });
        }
        Ok((header, SequenceDatabase { sequences }))
    }

    pub fn read(path: &Path) -> Result<(Header, Self)> {
        Self::from_text(&fsio::read_to_string(path)?, path)
    }

    pub fn write(&self, path: &Path, header: &Header) -> Result<()> {
        fsio::write_atomic(path, self.to_text(header).as_bytes())
    }
}

pub(crate) fn push_codes(out: &mut String, events: &[BehaviorType]) {
    for (k, e) in events.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push(char::from(b'0' + e.code()));
    }
}

pub(crate) fn parse_codes(text: &str) -> Result<Vec<BehaviorType>, String> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|c| {
            c.parse::<u8>()
                .ok()
                .and_then(BehaviorType::from_code)
                .ok_or_else(|| format!("bad behavior code {c:?}"))
        })
        .collect()
}

/// Each (user, category) history ordered by timestamp, file order within an hour.
fn histories(transactions: &[Transaction]) -> BTreeMap<(&str, &str), Vec<&Transaction>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&Transaction>> = BTreeMap::new();
    for t in transactions {
        groups
            .entry((t.user_id.as_str(), t.category_id.as_str()))
            .or_default()
            .push(t);
    }
    for events in groups.values_mut() {
        events.sort_by_key(|t| t.timestamp);
    }
    groups
}

/// One sequence per payment: every event of that user and category from the
/// window start through the payment itself.
pub fn build_sequences(
    transactions: &[Transaction],
    config: &WindowConfig,
) -> Result<SequenceDatabase> {
    config.validate()?;
    let span = i64::from(config.window_days);
    let groups: Vec<_> = histories(transactions).into_iter().collect();
    let per_group: Vec<Vec<BehaviorSequence>> = groups
        .par_iter()
        .map(|((user, category), events)| {
            let mut out = Vec::new();
            for (pos, e) in events.iter().enumerate() {
                if !e.behavior.is_payment() {
                    continue;
                }
                let day_start = Hour::start_of(e.timestamp.date());
                let (start, end) = if config.include_anchor_day {
                    (day_start.minus_days(span - 1), None)
                } else {
                    (day_start.minus_days(span), Some(day_start))
                };
                let first = events.partition_point(|t| t.timestamp < start);
                let mut seq: Vec<BehaviorType> = events[first..pos]
                    .iter()
                    .filter(|t| end.is_none_or(|end| t.timestamp < end))
                    .map(|t| t.behavior)
                    .collect();
                seq.push(e.behavior);
                out.push(BehaviorSequence {
                    user_id: user.to_string(),
                    category_id: category.to_string(),
                    anchor: e.timestamp,
                    events: seq,
                });
            }
            out
        })
        .collect();
    Ok(SequenceDatabase::new(
        per_group.into_iter().flatten().collect(),
    ))
}

/// The open sequences at `as_of`: per (user, category), the events in
/// `[as_of - window_days, as_of)` that follow the last payment inside that
/// window. Pairs whose window ends in a payment yield no candidate.
pub fn build_candidate_sequences(
    transactions: &[Transaction],
    config: &WindowConfig,
    as_of: Hour,
) -> Result<SequenceDatabase> {
    config.validate()?;
    let start = as_of.minus_days(i64::from(config.window_days));
    let mut sequences = Vec::new();
    for ((user, category), events) in histories(transactions) {
        let lo = events.partition_point(|t| t.timestamp < start);
        let hi = events.partition_point(|t| t.timestamp < as_of);
        let window = &events[lo..hi];
        let open_from = window
            .iter()
            .rposition(|t| t.behavior.is_payment())
            .map_or(0, |p| p + 1);
        if open_from < window.len() {
            sequences.push(BehaviorSequence {
                user_id: user.to_string(),
                category_id: category.to_string(),
                anchor: as_of,
                events: window[open_from..].iter().map(|t| t.behavior).collect(),
            });
        }
    }
    Ok(SequenceDatabase::new(sequences))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
}

/// Sequence-length counts in contiguous buckets `[k*w, (k+1)*w - 1]` from 0
/// through the longest sequence's bucket.
pub fn length_histogram(
    db: &SequenceDatabase,
    bucket_width: usize,
) -> Result<Vec<(Bucket, usize)>> {
    if bucket_width == 0 {
        return Err(Error::InvalidConfig(
            "bucket_width must be at least 1".into(),
        ));
    }
    if db.is_empty() {
        return Ok(Vec::new());
    }
    let mut counts = vec![0usize; db.max_len() / bucket_width + 1];
    for s in db.iter() {
        counts[s.events.len() / bucket_width] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            (
                Bucket {
                    lo: k * bucket_width,
                    hi: (k + 1) * bucket_width - 1,
                },
                n,
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use BehaviorType::*;

    fn at(s: &str) -> Hour {
        s.parse().unwrap()
    }

    fn tx(user: &str, cat: &str, b: BehaviorType, ts: &str) -> Transaction {
        Transaction::new(user, "i", cat, b, at(ts))
    }

    #[test]
    fn windows_click_cart_pay() {
        let log = vec![
            tx("u", "c", Click, "2014-12-03 10"),
            tx("u", "c", Cart, "2014-12-05 10"),
            tx("u", "c", Payment, "2014-12-06 02"),
        ];
        let db = build_sequences(&log, &WindowConfig::default()).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.sequences[0].events, vec![Click, Cart, Payment]);
        assert_eq!(db.sequences[0].anchor_day(), at("2014-12-06 00").date());
    }

    #[test]
    fn click_outside_window_is_dropped() {
        let log = vec![
            tx("u", "c", Click, "2014-11-28 23"),
            tx("u", "c", Payment, "2014-12-06 02"),
        ];
        let db = build_sequences(&log, &WindowConfig::default()).unwrap();
        assert_eq!(db.sequences[0].events, vec![Payment]);
        // D-6 at midnight is the first hour inside.
        let log = vec![
            tx("u", "c", Click, "2014-11-30 00"),
            tx("u", "c", Payment, "2014-12-06 02"),
        ];
        let db = build_sequences(&log, &WindowConfig::default()).unwrap();
        assert_eq!(db.sequences[0].events, vec![Click, Payment]);
    }

    #[test]
    fn two_payments_two_days_apart() {
        // Hand-enumerated: window of the 12-06 payment is [11-30 00, 12-06 09],
        // window of the 12-08 payment is [12-02 00, 12-08 15].
        let log = vec![
            tx("u", "c", Click, "2014-12-01 08"),
            tx("u", "c", Cart, "2014-12-05 11"),
            tx("u", "c", Payment, "2014-12-06 09"),
            tx("u", "c", Collect, "2014-12-07 12"),
            tx("u", "c", Click, "2014-12-08 10"),
            tx("u", "c", Payment, "2014-12-08 15"),
        ];
        let db = build_sequences(&log, &WindowConfig::default()).unwrap();
        assert_eq!(db.len(), 2);
        assert_eq!(db.sequences[0].events, vec![Click, Cart, Payment]);
        assert_eq!(
            db.sequences[1].events,
            vec![Cart, Payment, Collect, Click, Payment]
        );
    }

    #[test]
    fn same_hour_uses_file_order() {
        let log = vec![
            tx("u", "c", Click, "2014-12-06 02"),
            tx("u", "c", Payment, "2014-12-06 02"),
            tx("u", "c", Cart, "2014-12-06 02"),
        ];
        let db = build_sequences(&log, &WindowConfig::default()).unwrap();
        assert_eq!(db.sequences[0].events, vec![Click, Payment]);
    }

    #[test]
    fn exclude_anchor_day_flag() {
        let log = vec![
            tx("u", "c", Click, "2014-11-29 05"),
            tx("u", "c", Cart, "2014-12-06 01"),
            tx("u", "c", Payment, "2014-12-06 02"),
        ];
        let cfg = WindowConfig {
            include_anchor_day: false,
            ..Default::default()
        };
        let db = build_sequences(&log, &cfg).unwrap();
        assert_eq!(db.sequences[0].events, vec![Click, Payment]);
    }

    #[test]
    fn no_payments_no_sequences() {
        let log = vec![tx("u", "c", Click, "2014-12-03 10")];
        assert!(build_sequences(&log, &WindowConfig::default())
            .unwrap()
            .is_empty());
        assert!(build_sequences(&log, &WindowConfig::days(0)).is_err());
    }

    #[test]
    fn candidates_are_open_prefixes() {
        let log = vec![
            tx("u", "c", Click, "2014-12-03 10"),
            tx("u", "c", Cart, "2014-12-05 10"),
            tx("v", "c", Click, "2014-11-20 10"),
            tx("w", "c", Click, "2014-12-04 10"),
            tx("w", "c", Payment, "2014-12-05 10"),
            tx("w", "d", Payment, "2014-12-01 10"),
            tx("w", "d", Collect, "2014-12-02 10"),
            tx("u", "c", Payment, "2014-12-06 00"),
        ];
        let db =
            build_candidate_sequences(&log, &WindowConfig::default(), at("2014-12-06 00")).unwrap();
        let got: Vec<(&str, &str, Vec<BehaviorType>)> = db
            .iter()
            .map(|s| (s.user_id.as_str(), s.category_id.as_str(), s.events.clone()))
            .collect();
        assert_eq!(
            got,
            vec![("u", "c", vec![Click, Cart]), ("w", "d", vec![Collect])]
        );
        assert!(db.iter().all(|s| s.anchor == at("2014-12-06 00")));
    }

    #[test]
    fn candidates_replay_planted_prefixes() {
        use crate::ingest::{generate_synthetic_with_truth, SyntheticConfig};
        let cfg = SyntheticConfig::new(200, 40, 4, 21, 11)
            .with_pattern_per_category(&[Click, Cart, Payment], 0.5);
        let out = generate_synthetic_with_truth(&cfg).unwrap();
        let as_of = Hour::start_of(cfg.start_date + chrono::Duration::days(20));
        let db =
            build_candidate_sequences(&out.transactions, &WindowConfig::default(), as_of).unwrap();
        let mut mid = 0;
        for inst in &out.instances {
            let seen = inst.timestamps.iter().filter(|&&t| t < as_of).count();
            if seen == 0 || seen == inst.timestamps.len() {
                continue;
            }
            mid += 1;
            let cat = &cfg.planted_patterns[inst.pattern].category;
            let cand = db
                .iter()
                .find(|s| s.user_id == inst.user_id && &s.category_id == cat)
                .expect("mid-pattern user has a candidate");
            assert_eq!(cand.events, [Click, Cart, Payment][..seen].to_vec());
        }
        assert!(mid > 10, "{mid}");
    }

    #[test]
    fn histogram_buckets() {
        let mk = |n: usize| BehaviorSequence {
            user_id: "u".into(),
            category_id: "c".into(),
            anchor: at("2014-12-06 02"),
            events: vec![Payment; n],
        };
        let db = SequenceDatabase::new(vec![mk(3), mk(3), mk(12)]);
        let h = length_histogram(&db, 10).unwrap();
        assert_eq!(
            h,
            vec![(Bucket { lo: 0, hi: 9 }, 2), (Bucket { lo: 10, hi: 19 }, 1)]
        );
        assert!(length_histogram(&SequenceDatabase::default(), 10)
            .unwrap()
            .is_empty());
        assert!(length_histogram(&db, 0).is_err());
    }

    #[test]
    fn file_format_is_bit_exact() {
        let text = "#config=abc\nu1\tc9\t2014-12-06 02\t1,3,4\nu2\tc1\t2014-12-07 13\t4\n";
        let (header, db) = SequenceDatabase::from_text(text, Path::new("db.tsv")).unwrap();
        assert_eq!(header.get("config"), Some("abc"));
        assert_eq!(db.sequences[0].events, vec![Click, Cart, Payment]);
        assert_eq!(db.to_text(&header), text);
        for bad in [
            "u1\tc9\t2014-12-06 02\n",
            "u1\tc9\t2014-12-06 02\t1,5\n",
            "u1\tc9\t2014-12-06 02\t\n",
        ] {
            let err = SequenceDatabase::from_text(bad, Path::new("db.tsv")).unwrap_err();
            assert!(err.to_string().starts_with("db.tsv:1:"), "{err}");
        }
    }

    fn arb_log() -> impl Strategy<Value = Vec<Transaction>> {
        proptest::collection::vec((0u8..3, 0u8..2, 1u8..=4, 0i64..24 * 20), 0..60).prop_map(
            |rows| {
                let base = at("2014-11-18 00");
                rows.into_iter()
                    .map(|(u, c, b, h)| {
                        Transaction::new(
                            format!("u{u}"),
                            "i",
                            format!("c{c}"),
                            BehaviorType::from_code(b).unwrap(),
                            base.plus_hours(h),
                        )
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn order_invariant_under_hour_preserving_permutation(log in arb_log(), salt in any::<u64>()) {
            // Reorder whole same-hour groups at random, keeping each group's file order.
            let key = |t: &Transaction| (t.timestamp.datetime().and_utc().timestamp() as u64).wrapping_mul(salt | 1);
            let mut permuted: Vec<(usize, &Transaction)> = log.iter().enumerate().collect();
            permuted.sort_by_key(|(i, t)| (key(t), *i));
            let permuted: Vec<Transaction> = permuted.into_iter().map(|(_, t)| t.clone()).collect();
            let a = build_sequences(&log, &WindowConfig::default()).unwrap();
            let b = build_sequences(&permuted, &WindowConfig::default()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn sequences_are_sub_multisets_of_window(log in arb_log()) {
            let db = build_sequences(&log, &WindowConfig::default()).unwrap();
            let payments = log.iter().filter(|t| t.behavior == Payment).count();
            prop_assert_eq!(db.len(), payments);
            for s in db.iter() {
                prop_assert_eq!(s.events.last(), Some(&Payment));
                let start = Hour::start_of(s.anchor.date()).minus_days(6);
                for code in BehaviorType::ALL {
                    let available = log.iter().filter(|t| {
                        t.user_id == s.user_id && t.category_id == s.category_id
                            && t.behavior == code && t.timestamp >= start && t.timestamp <= s.anchor
                    }).count();
                    let used = s.events.iter().filter(|&&e| e == code).count();
                    prop_assert!(used <= available);
                }
            }
        }

        #[test]
        fn candidates_never_pass_as_of(log in arb_log(), day in 1i64..20) {
            let as_of = at("2014-11-18 00").plus_hours(day * 24);
            let db = build_candidate_sequences(&log, &WindowConfig::default(), as_of).unwrap();
            for s in db.iter() {
                let window: Vec<&Transaction> = log.iter().filter(|t| {
                    t.user_id == s.user_id && t.category_id == s.category_id
                        && t.timestamp < as_of && t.timestamp >= as_of.minus_days(7)
                }).collect();
                prop_assert!(!window.is_empty());
                prop_assert!(!s.events.contains(&Payment));
            }
        }
    }
}
