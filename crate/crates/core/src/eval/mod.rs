//! Single-target-day experiments: train on everything before the target
//! day, predict at its first hour, score against the day's payments.

mod metrics;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{f1, precision, recall};
pub use report::{CellMetrics, EvalReport, ModelReport, ReportFormat, OVERALL};

use crate::cf::{als_train, build_rating_matrix_with, Aggregation, AlsParams, FactorModel};
use crate::error::{Error, Result};
use crate::hybrid::{
    purchased_items, recommend_bm, recommend_cf_only, recommend_hybrid, HybridConfig,
    PaymentPredictor, Ranker, RankerKind, Recommendation,
};
use crate::ingest::{Hour, Transaction};
use crate::segment::{
    assign_item_groups, assign_user_groups, compute_features_with, Axis, Exploration, Group,
    ItemBands, UserBoundaries,
};
use crate::seqdb::{
    build_candidate_sequences, build_sequences, BehaviorSequence, SequenceDatabase, WindowConfig,
};
use crate::spm::{Miner, PatternStore};

/// Minimum support as a sequence count or as a fraction of the database.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinSupport {
    Absolute(usize),
    /// Resolved as `ceil(fraction * db_size)`, at least 1.
    Relative(f64),
}

impl Default for MinSupport {
    fn default() -> Self {
        MinSupport::Relative(0.01)
    }
}

impl MinSupport {
    pub fn resolve(self, db_size: usize) -> Result<usize> {
        match self {
            MinSupport::Absolute(0) => Err(Error::InvalidConfig(
                "min_support must be at least 1".into(),
            )),
            MinSupport::Absolute(n) => Ok(n),
            MinSupport::Relative(f) if f > 0.0 && f <= 1.0 => {
                Ok(((f * db_size as f64).ceil() as usize).max(1))
            }
            MinSupport::Relative(f) => Err(Error::InvalidConfig(format!(
                "relative min_support {f} outside (0,1]"
            ))),
        }
    }
}

/// Integers are absolute counts; anything with a decimal point is a fraction.
impl FromStr for MinSupport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Ok(n) = s.parse::<usize>() {
            return Ok(MinSupport::Absolute(n));
        }
        s.parse::<f64>()
            .map(MinSupport::Relative)
            .map_err(|_| format!("bad min support {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Cart/collect baseline over the sequence window.
    Bm {
        n: usize,
    },
    Hybrid(HybridConfig),
    /// The hybrid's ranker without the gate. Uses `n`, `ranker`, `nncf_k`
    /// and `allow_repurchase`.
    CfOnly(HybridConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub name: String,
    pub model: ModelKind,
}

impl RosterEntry {
    pub fn bm(name: &str, n: usize) -> Self {
        RosterEntry {
            name: name.into(),
            model: ModelKind::Bm { n },
        }
    }

    pub fn hybrid(name: &str, config: HybridConfig) -> Self {
        RosterEntry {
            name: name.into(),
            model: ModelKind::Hybrid(config),
        }
    }

    pub fn cf_only(name: &str, config: HybridConfig) -> Self {
        RosterEntry {
            name: name.into(),
            model: ModelKind::CfOnly(config),
        }
    }

    fn ranker_kind(&self) -> Option<RankerKind> {
        match &self.model {
            ModelKind::Bm { .. } => None,
            ModelKind::Hybrid(c) | ModelKind::CfOnly(c) => Some(c.ranker),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub user_boundaries: UserBoundaries,
    pub item_bands: ItemBands,
    pub exploration: Exploration,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            user_boundaries: UserBoundaries::Terciles,
            item_bands: ItemBands::four_band(),
            exploration: Exploration::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub target_day: NaiveDate,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub min_support: MinSupport,
    #[serde(default)]
    pub als: AlsParams,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    pub roster: Vec<RosterEntry>,
}

impl ExperimentSpec {
    pub fn new(target_day: NaiveDate, roster: Vec<RosterEntry>) -> Self {
        ExperimentSpec {
            target_day,
            window: WindowConfig::default(),
            min_support: MinSupport::default(),
            als: AlsParams::default(),
            aggregation: Aggregation::default(),
            segmentation: SegmentationConfig::default(),
            roster,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.min_support.resolve(1)?;
        let mut names = HashSet::new();
        for e in &self.roster {
            if !names.insert(e.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate roster name {:?}",
                    e.name
                )));
            }
            match &e.model {
                ModelKind::Bm { n: 0 } => {
                    return Err(Error::InvalidConfig("bm n must be at least 1".into()))
                }
                ModelKind::Bm { .. } => {}
                ModelKind::Hybrid(c) | ModelKind::CfOnly(c) => c.validate()?,
            }
        }
        Ok(())
    }
}

/// Where an experiment reads its log. Training only ever sees `before`.
pub trait LogSource: Sync {
    /// Every transaction with a timestamp strictly before `cutoff`.
    fn before(&self, cutoff: Hour) -> Vec<Transaction>;
    /// Payments on `day`.
    fn payments_on(&self, day: NaiveDate) -> Vec<Transaction>;
}

impl LogSource for [Transaction] {
    fn before(&self, cutoff: Hour) -> Vec<Transaction> {
        self.iter()
            .filter(|t| t.timestamp < cutoff)
            .cloned()
            .collect()
    }

    fn payments_on(&self, day: NaiveDate) -> Vec<Transaction> {
        self.iter()
            .filter(|t| t.behavior.is_payment() && t.timestamp.date() == day)
            .cloned()
            .collect()
    }
}

impl LogSource for Vec<Transaction> {
    fn before(&self, cutoff: Hour) -> Vec<Transaction> {
        self.as_slice().before(cutoff)
    }

    fn payments_on(&self, day: NaiveDate) -> Vec<Transaction> {
        self.as_slice().payments_on(day)
    }
}

pub type Pair = (String, String);

/// A report plus everything needed to audit it.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub reference: BTreeSet<Pair>,
    /// Per roster entry, one recommendation per training user.
    pub predictions: Vec<(String, Vec<Recommendation>)>,
    pub user_groups: BTreeMap<String, Group>,
    pub item_groups: BTreeMap<String, Group>,
    /// Mined stores keyed by miner name, with `/<category>` for per-category runs.
    pub stores: BTreeMap<String, PatternStore>,
    pub model: Option<FactorModel>,
}

pub fn run_experiment(transactions: &[Transaction], spec: &ExperimentSpec) -> Result<EvalReport> {
    run_experiment_detailed(transactions, spec).map(|o| o.report)
}

pub fn run_experiment_detailed<S: LogSource + ?Sized>(
    source: &S,
    spec: &ExperimentSpec,
) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let cutoff = Hour::start_of(spec.target_day);
    let reference: BTreeSet<Pair> = source
        .payments_on(spec.target_day)
        .into_iter()
        .map(|t| (t.user_id, t.item_id))
        .collect();
    if reference.is_empty() {
        return Err(Error::EmptyReference(spec.target_day));
    }
    let train = source.before(cutoff);

    let needs_mf = spec
        .roster
        .iter()
        .any(|e| e.ranker_kind() == Some(RankerKind::Mfcf));
    let needs_matrix = spec.roster.iter().any(|e| e.ranker_kind().is_some());
    let needs_patterns = spec
        .roster
        .iter()
        .any(|e| matches!(e.model, ModelKind::Hybrid(_)));

    let matrix = needs_matrix.then(|| build_rating_matrix_with(&train, spec.aggregation));
    let model = match (&matrix, needs_mf) {
        (Some(m), true) => Some(als_train(m, &spec.als)?),
        _ => None,
    };

    let mut stores = BTreeMap::new();
    let mut candidates_by_user: HashMap<String, Vec<BehaviorSequence>> = HashMap::new();
    let mut predictors: BTreeMap<String, PaymentPredictor> = BTreeMap::new();
    if needs_patterns {
        let db = build_sequences(&train, &spec.window)?;
        for s in build_candidate_sequences(&train, &spec.window, cutoff)?.sequences {
            candidates_by_user
                .entry(s.user_id.clone())
                .or_default()
                .push(s);
        }
        for e in &spec.roster {
            let ModelKind::Hybrid(c) = &e.model else {
                continue;
            };
            let key = predictor_key(c);
            if predictors.contains_key(&key) {
                continue;
            }
            let predictor = if c.per_category {
                let per = mine_by_category(&db, spec.min_support, c.miner)?;
                for (cat, s) in &per {
                    stores.insert(format!("{}/{cat}", c.miner), s.clone());
                }
                PaymentPredictor::per_category(&per, c.strategy)?
            } else {
                let store = c.miner.mine(&db, spec.min_support.resolve(db.len())?);
                let p = PaymentPredictor::global(&store, c.strategy)?;
                stores.insert(c.miner.to_string(), store);
                p
            };
            predictors.insert(key, predictor);
        }
    }

    let purchased = purchased_items(&train);
    let no_purchases = HashSet::new();
    let mut by_user: BTreeMap<&str, Vec<Transaction>> = BTreeMap::new();
    for t in &train {
        by_user
            .entry(t.user_id.as_str())
            .or_default()
            .push(t.clone());
    }
    let users: Vec<&str> = by_user.keys().copied().collect();

    let mut predictions = Vec::with_capacity(spec.roster.len());
    for e in &spec.roster {
        let ranker = |c: &HybridConfig| match c.ranker {
            RankerKind::Mfcf => Ranker::Mf(
                model
                    .as_ref()
                    .expect("trained when an mfcf ranker is listed"),
            ),
            RankerKind::Nncf => Ranker::Nn {
                matrix: matrix.as_ref().expect("built when a ranker is listed"),
                k: c.nncf_k,
            },
        };
        let recs: Vec<Recommendation> = users
            .par_iter()
            .map(|&u| {
                let bought = purchased.get(u).unwrap_or(&no_purchases);
                match &e.model {
                    ModelKind::Bm { n } => Ok(recommend_bm(
                        u,
                        &by_user[u],
                        spec.target_day,
                        spec.window.window_days,
                        *n,
                    )),
                    ModelKind::Hybrid(c) => {
                        let cands = candidates_by_user.get(u).map_or(&[][..], Vec::as_slice);
                        recommend_hybrid(
                            u,
                            cands,
                            &predictors[&predictor_key(c)],
                            ranker(c),
                            bought,
                            c,
                        )
                    }
                    ModelKind::CfOnly(c) => {
                        let excl = if c.allow_repurchase {
                            &no_purchases
                        } else {
                            bought
                        };
                        recommend_cf_only(u, ranker(c), c.n, excl)
                    }
                }
            })
            .collect::<Result<_>>()?;
        predictions.push((e.name.clone(), recs));
    }

    let explore = spec.segmentation.exploration;
    let user_groups: BTreeMap<String, Group> = assign_user_groups(
        &compute_features_with(&train, Axis::User, explore),
        &spec.segmentation.user_boundaries,
    )?
    .into_iter()
    .map(|a| (a.subject_id, a.group))
    .collect();
    let item_groups: BTreeMap<String, Group> = assign_item_groups(
        &compute_features_with(&train, Axis::Item, explore),
        &spec.segmentation.item_bands,
    )
    .into_iter()
    .map(|a| (a.subject_id, a.group))
    .collect();

    let models = predictions
        .iter()
        .map(|(name, recs)| {
            let pred: BTreeSet<Pair> = recs
                .iter()
                .flat_map(|r| r.items.iter().map(|i| (r.user_id.clone(), i.clone())))
                .collect();
            ModelReport {
                name: name.clone(),
                cells: score_cells(&pred, &reference, &user_groups, &item_groups),
            }
        })
        .collect();

    Ok(ExperimentOutcome {
        report: EvalReport { models },
        reference,
        predictions,
        user_groups,
        item_groups,
        stores,
        model,
    })
}

fn predictor_key(c: &HybridConfig) -> String {
    format!("{}/{}/{:?}", c.miner, c.per_category, c.strategy)
}

/// One store per category, each resolving a relative threshold against its own size.
fn mine_by_category(
    db: &SequenceDatabase,
    min_support: MinSupport,
    miner: Miner,
) -> Result<BTreeMap<String, PatternStore>> {
    let mut by_category: BTreeMap<&str, Vec<BehaviorSequence>> = BTreeMap::new();
    for s in db.iter() {
        by_category
            .entry(&s.category_id)
            .or_default()
            .push(s.clone());
    }
    by_category
        .into_iter()
        .map(|(c, seqs)| {
            let sub = SequenceDatabase::new(seqs);
            Ok((
                c.to_string(),
                miner.mine(&sub, min_support.resolve(sub.len())?),
            ))
        })
        .collect()
}

/// `(n_pred, n_ref, hits)` for one cell.
type Tally = (usize, usize, usize);

fn scope(g: Option<Group>) -> String {
    g.map_or_else(|| "all".to_string(), |g| g.to_string())
}

/// Metrics for every (user scope, item scope) cell. Subjects missing from
/// the group maps count as rejects.
pub fn score_cells(
    pred: &BTreeSet<Pair>,
    reference: &BTreeSet<Pair>,
    user_groups: &BTreeMap<String, Group>,
    item_groups: &BTreeMap<String, Group>,
) -> BTreeMap<String, CellMetrics> {
    let group_of = |(u, i): &Pair| {
        (
            user_groups.get(u).copied().unwrap_or(Group::Reject),
            item_groups.get(i).copied().unwrap_or(Group::Reject),
        )
    };
    let ug: BTreeSet<Group> = user_groups
        .values()
        .copied()
        .chain(pred.iter().chain(reference).map(|p| group_of(p).0))
        .collect();
    let ig: BTreeSet<Group> = item_groups
        .values()
        .copied()
        .chain(pred.iter().chain(reference).map(|p| group_of(p).1))
        .collect();

    let mut counts: BTreeMap<(Option<Group>, Option<Group>), Tally> = BTreeMap::new();
    for u in std::iter::once(None).chain(ug.iter().copied().map(Some)) {
        for i in std::iter::once(None).chain(ig.iter().copied().map(Some)) {
            counts.insert((u, i), (0, 0, 0));
        }
    }
    let mut bump = |pair: &Pair, f: &dyn Fn(&mut Tally)| {
        let (u, i) = group_of(pair);
        for key in [
            (None, None),
            (Some(u), None),
            (None, Some(i)),
            (Some(u), Some(i)),
        ] {
            f(counts.get_mut(&key).expect("every scope pre-registered"));
        }
    };
    for p in pred {
        let hit = reference.contains(p);
        bump(p, &|c| {
            c.0 += 1;
            c.2 += usize::from(hit);
        });
    }
    for r in reference {
        bump(r, &|c| c.1 += 1);
    }
    counts
        .into_iter()
        .map(|((u, i), (n_pred, n_ref, hits))| {
            let p = metrics::ratio(hits, n_pred);
            let r = metrics::ratio(hits, n_ref);
            (
                format!("{}/{}", scope(u), scope(i)),
                CellMetrics {
                    precision: p,
                    recall: r,
                    f1: f1(p, r),
                    n_pred,
                    n_ref,
                },
            )
        })
        .collect()
}
