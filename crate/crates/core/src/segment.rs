//! Exploration-to-purchase features and the fine-grained user/item groups
//! used to stratify evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BehaviorType, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    User,
    Item,
}

/// Which behavior codes count as exploration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exploration {
    /// Click, collect and cart.
    #[default]
    All,
    Clicks,
}

impl Exploration {
    fn counts(self, b: BehaviorType) -> bool {
        match self {
            Exploration::All => !b.is_payment(),
            Exploration::Clicks => b == BehaviorType::Click,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorFeatures {
    pub subject_id: String,
    pub payment_count: u64,
    pub exploration_count: u64,
}

impl BehaviorFeatures {
    /// Exploration count over payment count; `None` without payments.
    pub fn ratio(&self) -> Option<f64> {
        (self.payment_count > 0).then(|| self.exploration_count as f64 / self.payment_count as f64)
    }
}

pub fn compute_features(transactions: &[Transaction], axis: Axis) -> Vec<BehaviorFeatures> {
    compute_features_with(transactions, axis, Exploration::All)
}

/// Per-subject counts, ordered by subject id.
pub fn compute_features_with(
    transactions: &[Transaction],
    axis: Axis,
    exploration: Exploration,
) -> Vec<BehaviorFeatures> {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for t in transactions {
        let subject = match axis {
            Axis::User => t.user_id.as_str(),
            Axis::Item => t.item_id.as_str(),
        };
        let entry = counts.entry(subject).or_default();
        if t.behavior.is_payment() {
            entry.0 += 1;
        } else if exploration.counts(t.behavior) {
            entry.1 += 1;
        }
    }
    counts
        .into_iter()
        .map(
            |(id, (payment_count, exploration_count))| BehaviorFeatures {
                subject_id: id.to_string(),
                payment_count,
                exploration_count,
            },
        )
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Band(u8),
    /// Features fall outside every configured band.
    Reject,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Band(k) => write!(f, "{k}"),
            Group::Reject => f.write_str("reject"),
        }
    }
}

impl std::str::FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "reject" {
            return Ok(Group::Reject);
        }
        s.parse()
            .map(Group::Band)
            .map_err(|_| format!("bad group {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub subject_id: String,
    pub group: Group,
}

/// Half-open `[lo, hi)`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: Option<T>,
}

impl<T: PartialOrd + Copy> Interval<T> {
    pub fn new(lo: T, hi: Option<T>) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lo && self.hi.is_none_or(|hi| x < hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemBand {
    pub ratio: Interval<f64>,
    pub payments: Interval<u64>,
}

/// Item groups as (ratio, payment-count) rectangles; group `k` is the k-th band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBands {
    pub bands: Vec<ItemBand>,
}

impl ItemBands {
    /// The default four bands:
    ///
    /// | group | ratio    | payments  |
    /// |-------|----------|-----------|
    /// | 1     | [0, 15)  | [0, 50)   |
    /// | 2     | [15, 20) | [0, 50)   |
    /// | 3     | [20, 25) | [50, 150) |
    /// | 4     | [25, ∞)  | [150, ∞)  |
    pub fn four_band() -> Self {
        let band = |r_lo, r_hi, p_lo, p_hi| ItemBand {
            ratio: Interval::new(r_lo, r_hi),
            payments: Interval::new(p_lo, p_hi),
        };
        ItemBands {
            bands: vec![
                band(0.0, Some(15.0), 0, Some(50)),
                band(15.0, Some(20.0), 0, Some(50)),
                band(20.0, Some(25.0), 50, Some(150)),
                band(25.0, None, 150, None),
            ],
        }
    }
}

impl Default for ItemBands {
    fn default() -> Self {
        ItemBands::four_band()
    }
}

/// First band containing both the ratio and the payment count. Subjects with
/// no payments have no ratio and land in the reject bucket.
pub fn assign_item_group(features: &BehaviorFeatures, bands: &ItemBands) -> GroupAssignment {
    let group = features
        .ratio()
        .and_then(|r| {
            bands
                .bands
                .iter()
                .position(|b| b.ratio.contains(r) && b.payments.contains(features.payment_count))
        })
        .map_or(Group::Reject, |k| Group::Band(k as u8 + 1));
    GroupAssignment {
        subject_id: features.subject_id.clone(),
        group,
    }
}

/// How users split into three payment-count groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum UserBoundaries {
    /// Tercile cut points over users with at least one payment, compared on
    /// (payment count, ratio).
    #[default]
    Terciles,
    /// `payments >= high` is group 1, `payments >= low` group 2, else group 3.
    Fixed { low: u64, high: u64 },
}

/// Resolved cut points as (payments, ratio) keys; users without a ratio use 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserCuts {
    low: (u64, f64),
    high: (u64, f64),
}

impl UserCuts {
    pub fn resolve(population: &[BehaviorFeatures], boundaries: &UserBoundaries) -> Result<Self> {
        match *boundaries {
            UserBoundaries::Fixed { low, high } => {
                if low > high {
                    return Err(Error::InvalidConfig(format!(
                        "user boundaries {low} > {high}"
                    )));
                }
                Ok(UserCuts {
                    low: (low, f64::NEG_INFINITY),
                    high: (high, f64::NEG_INFINITY),
                })
            }
            UserBoundaries::Terciles => {
                let mut keys: Vec<(u64, f64)> = population
                    .iter()
                    .filter(|f| f.ratio().is_some())
                    .map(user_key)
                    .collect();
                if keys.is_empty() {
                    let floor = (1, f64::NEG_INFINITY);
                    return Ok(UserCuts {
                        low: floor,
                        high: floor,
                    });
                }
                keys.sort_by(cmp_key);
                let n = keys.len();
                Ok(UserCuts {
                    low: keys[n / 3],
                    high: keys[2 * n / 3],
                })
            }
        }
    }
}

fn user_key(f: &BehaviorFeatures) -> (u64, f64) {
    (f.payment_count, f.ratio().unwrap_or(0.0))
}

fn cmp_key(a: &(u64, f64), b: &(u64, f64)) -> std::cmp::Ordering {
    a.0.cmp(&b.0).then_with(|| a.1.total_cmp(&b.1))
}

pub fn assign_user_group(features: &BehaviorFeatures, cuts: &UserCuts) -> GroupAssignment {
    let key = user_key(features);
    let group = if cmp_key(&key, &cuts.high).is_ge() {
        1
    } else if cmp_key(&key, &cuts.low).is_ge() {
        2
    } else {
        3
    };
    GroupAssignment {
        subject_id: features.subject_id.clone(),
        group: Group::Band(group),
    }
}

pub fn assign_user_groups(
    features: &[BehaviorFeatures],
    boundaries: &UserBoundaries,
) -> Result<Vec<GroupAssignment>> {
    let cuts = UserCuts::resolve(features, boundaries)?;
    Ok(features
        .iter()
        .map(|f| assign_user_group(f, &cuts))
        .collect())
}

pub fn assign_item_groups(
    features: &[BehaviorFeatures],
    bands: &ItemBands,
) -> Vec<GroupAssignment> {
    features
        .iter()
        .map(|f| assign_item_group(f, bands))
        .collect()
}

/// `subject_id,payment_count,exploration_count,R,group`; R is empty when undefined.
pub fn write_assignments<W: Write>(
    sink: W,
    features: &[BehaviorFeatures],
    groups: &[GroupAssignment],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::io("<csv output>", e.into());
    w.write_record([
        "subject_id",
        "payment_count",
        "exploration_count",
        "R",
        "group",
    ])
    .map_err(io)?;
    for (f, g) in features.iter().zip(groups) {
        debug_assert_eq!(f.subject_id, g.subject_id);
        w.write_record([
            f.subject_id.clone(),
            f.payment_count.to_string(),
            f.exploration_count.to_string(),
            f.ratio().map(|r| r.to_string()).unwrap_or_default(),
            g.group.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Hour;
    use BehaviorType::*;

    fn feat(id: &str, payments: u64, explorations: u64) -> BehaviorFeatures {
        BehaviorFeatures {
            subject_id: id.into(),
            payment_count: payments,
            exploration_count: explorations,
        }
    }

    #[test]
    fn ratio_and_guard() {
        assert_eq!(feat("u", 4, 40).ratio(), Some(10.0));
        assert_eq!(feat("u", 0, 40).ratio(), None);
    }

    #[test]
    fn counts_per_axis() {
        let h: Hour = "2014-12-01 00".parse().unwrap();
        let log = vec![
            Transaction::new("u1", "i1", "c", Click, h),
            Transaction::new("u1", "i1", "c", Payment, h),
            Transaction::new("u1", "i2", "c", Collect, h),
            Transaction::new("u2", "i1", "c", Cart, h),
        ];
        let users = compute_features(&log, Axis::User);
        assert_eq!(users, vec![feat("u1", 1, 2), feat("u2", 0, 1)]);
        let items = compute_features(&log, Axis::Item);
        assert_eq!(items, vec![feat("i1", 1, 2), feat("i2", 0, 1)]);
        let clicks = compute_features_with(&log, Axis::User, Exploration::Clicks);
        assert_eq!(clicks, vec![feat("u1", 1, 1), feat("u2", 0, 0)]);
    }

    #[test]
    fn four_band_examples() {
        let bands = ItemBands::four_band();
        // R = 10, payments = 30
        assert_eq!(
            assign_item_group(&feat("i", 30, 300), &bands).group,
            Group::Band(1)
        );
        // R = 30, payments = 200
        assert_eq!(
            assign_item_group(&feat("i", 200, 6000), &bands).group,
            Group::Band(4)
        );
        // R = 18, payments = 120: band 2 wants < 50 payments, band 3 wants R >= 20
        assert_eq!(
            assign_item_group(&feat("i", 120, 2160), &bands).group,
            Group::Reject
        );
        // Half-open edges.
        assert_eq!(
            assign_item_group(&feat("i", 10, 150), &bands).group,
            Group::Band(2)
        );
        assert_eq!(
            assign_item_group(&feat("i", 50, 1000), &bands).group,
            Group::Band(3)
        );
        assert_eq!(
            assign_item_group(&feat("i", 0, 5), &bands).group,
            Group::Reject
        );
    }

    #[test]
    fn fixed_user_boundaries() {
        let cuts = UserCuts::resolve(&[], &UserBoundaries::Fixed { low: 10, high: 50 }).unwrap();
        let g = |p| assign_user_group(&feat("u", p, 7), &cuts).group;
        assert_eq!(
            (g(60), g(20), g(3)),
            (Group::Band(1), Group::Band(2), Group::Band(3))
        );
        assert!(UserCuts::resolve(&[], &UserBoundaries::Fixed { low: 50, high: 10 }).is_err());
    }

    #[test]
    fn terciles_split_nine_users_evenly() {
        let users: Vec<BehaviorFeatures> =
            (1..=9).map(|p| feat(&format!("u{p}"), p * 3, 20)).collect();
        let groups = assign_user_groups(&users, &UserBoundaries::Terciles).unwrap();
        let sizes = [1, 2, 3].map(|k| groups.iter().filter(|g| g.group == Group::Band(k)).count());
        assert_eq!(sizes, [3, 3, 3]);
        // Highest payment counts land in group 1.
        assert_eq!(groups[8].group, Group::Band(1));
        assert_eq!(groups[0].group, Group::Band(3));
    }

    #[test]
    fn identical_users_share_one_group() {
        let users: Vec<BehaviorFeatures> = (0..7).map(|k| feat(&format!("u{k}"), 5, 20)).collect();
        let groups = assign_user_groups(&users, &UserBoundaries::Terciles).unwrap();
        assert!(groups.iter().all(|g| g.group == groups[0].group));
    }

    #[test]
    fn csv_output() {
        let features = vec![feat("u1", 4, 40), feat("u2", 0, 3)];
        let groups = vec![
            GroupAssignment {
                subject_id: "u1".into(),
                group: Group::Band(1),
            },
            GroupAssignment {
                subject_id: "u2".into(),
                group: Group::Reject,
            },
        ];
        let mut out = Vec::new();
        write_assignments(&mut out, &features, &groups).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "subject_id,payment_count,exploration_count,R,group\nu1,4,40,10,1\nu2,0,3,,reject\n"
        );
    }
}
