//! The recommend phase: payment prediction gates collaborative-filtering
//! rankings, restricted to the predicted category. Also the naive baseline
//! and the ungated CF arm.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cf::{nncf_scores, FactorModel, RatingMatrix};
use crate::error::{Error, Result};
use crate::ingest::{BehaviorType, Hour, Transaction};
use crate::seqdb::BehaviorSequence;
use crate::spm::{ConfidenceStrategy, Miner, PatternStore, PaymentPrediction, PaymentRules};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    Mfcf,
    Nncf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub n: usize,
    pub p_min: f64,
    pub miner: Miner,
    pub ranker: RankerKind,
    /// Neighborhood size when `ranker` is NNCF.
    pub nncf_k: usize,
    pub strategy: ConfidenceStrategy,
    /// Mine one pattern store per category instead of one global store.
    pub per_category: bool,
    /// Recommend for every category that passes the gate, not just the strongest.
    pub multi_category: bool,
    /// Return plain top-N when the gate stays closed.
    pub fallback_topn: bool,
    /// Keep items the user already bought in the ranking.
    pub allow_repurchase: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            n: 10,
            p_min: 0.5,
            miner: Miner::PrefixSpan,
            ranker: RankerKind::Mfcf,
            nncf_k: 20,
            strategy: ConfidenceStrategy::Max,
            per_category: false,
            multi_category: false,
            fallback_topn: false,
            allow_repurchase: false,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_min) {
            return Err(Error::InvalidConfig(format!(
                "p_min {} outside [0,1]",
                self.p_min
            )));
        }
        if self.nncf_k == 0 {
            return Err(Error::InvalidConfig("nncf_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub user_id: String,
    pub items: Vec<String>,
    pub trigger: Option<PaymentPrediction>,
}

impl Recommendation {
    pub fn empty(user_id: &str) -> Self {
        Recommendation {
            user_id: user_id.to_string(),
            items: Vec::new(),
            trigger: None,
        }
    }
}

/// Payment rules over one global store or one store per category.
#[derive(Debug, Clone)]
pub enum PaymentPredictor {
    Global(PaymentRules),
    PerCategory(BTreeMap<String, PaymentRules>),
}

impl PaymentPredictor {
    pub fn global(store: &PatternStore, strategy: ConfidenceStrategy) -> Result<Self> {
        Ok(PaymentPredictor::Global(PaymentRules::from_store(
            store, strategy,
        )?))
    }

    pub fn per_category(
        stores: &BTreeMap<String, PatternStore>,
        strategy: ConfidenceStrategy,
    ) -> Result<Self> {
        stores
            .iter()
            .map(|(c, s)| Ok((c.clone(), PaymentRules::from_store(s, strategy)?)))
            .collect::<Result<_>>()
            .map(PaymentPredictor::PerCategory)
    }

    pub fn predict(&self, candidate: &BehaviorSequence) -> Option<PaymentPrediction> {
        match self {
            PaymentPredictor::Global(rules) => rules.predict(candidate),
            PaymentPredictor::PerCategory(map) => {
                map.get(&candidate.category_id)?.predict(candidate)
            }
        }
    }
}

/// A source of per-user item rankings.
#[derive(Debug, Clone, Copy)]
pub enum Ranker<'a> {
    Mf(&'a FactorModel),
    Nn { matrix: &'a RatingMatrix, k: usize },
}

impl Ranker<'_> {
    /// `(item id, category, score)` for every rankable item.
    fn scored(&self, user_id: &str) -> Result<Vec<(&str, &str, f64)>> {
        match *self {
            Ranker::Mf(model) => {
                let u = model
                    .user_index(user_id)
                    .ok_or_else(|| Error::UnknownUser(user_id.into()))?;
                Ok(model
                    .scores(u)
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| (model.items()[i].as_str(), model.item_category(i), s))
                    .collect())
            }
            Ranker::Nn { matrix, k } => {
                let scores = nncf_scores(matrix, user_id, k)?;
                Ok(scores
                    .into_iter()
                    .map(|(item, s)| {
                        let i = matrix
                            .item_index(&item)
                            .expect("scored items come from the matrix");
                        (
                            matrix.items()[i].as_str(),
                            matrix.item_categories()[i].as_str(),
                            s,
                        )
                    })
                    .collect())
            }
        }
    }

    /// Top `n` non-excluded items as `(item, category)`, score-descending with
    /// ties by ascending item id.
    pub fn top_n(
        &self,
        user_id: &str,
        n: usize,
        exclusions: &HashSet<String>,
    ) -> Result<Vec<(String, String)>> {
        let mut scored: Vec<(&str, &str, f64)> = self
            .scored(user_id)?
            .into_iter()
            .filter(|(item, _, _)| !exclusions.contains(*item))
            .collect();
        scored.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(b.0)));
        Ok(scored
            .into_iter()
            .take(n)
            .map(|(i, c, _)| (i.to_string(), c.to_string()))
            .collect())
    }
}

/// Scores the user's candidate sequences; if the strongest prediction clears
/// `p_min`, returns the user's top-N restricted to its category.
pub fn recommend_hybrid(
    user_id: &str,
    candidates: &[BehaviorSequence],
    predictor: &PaymentPredictor,
    ranker: Ranker<'_>,
    exclusions: &HashSet<String>,
    config: &HybridConfig,
) -> Result<Recommendation> {
    let mut passing: Vec<PaymentPrediction> = candidates
        .iter()
        .filter(|c| c.user_id == user_id)
        .filter_map(|c| predictor.predict(c))
        .filter(|p| p.probability >= config.p_min)
        .collect();
    passing.sort_by(|a, b| b.strength_cmp(a));

    let no_exclusions = HashSet::new();
    let exclusions = if config.allow_repurchase {
        &no_exclusions
    } else {
        exclusions
    };

    let Some(trigger) = passing.first().cloned() else {
        if config.fallback_topn {
            let items = ranker.top_n(user_id, config.n, exclusions)?;
            return Ok(Recommendation {
                user_id: user_id.to_string(),
                items: items.into_iter().map(|(i, _)| i).collect(),
                trigger: None,
            });
        }
        return Ok(Recommendation::empty(user_id));
    };
    let categories: HashSet<&str> = if config.multi_category {
        passing.iter().map(|p| p.category_id.as_str()).collect()
    } else {
        HashSet::from([trigger.category_id.as_str()])
    };
    let items = ranker
        .top_n(user_id, config.n, exclusions)?
        .into_iter()
        .filter(|(_, c)| categories.contains(c.as_str()))
        .map(|(i, _)| i)
        .collect();
    Ok(Recommendation {
        user_id: user_id.to_string(),
        items,
        trigger: Some(trigger),
    })
}

/// Baseline: items the user carted or collected during the `window_days`
/// before `target_day` and did not buy in that span. Carts rank above
/// collects, then most recent first, then ascending item id.
pub fn recommend_bm(
    user_id: &str,
    transactions: &[Transaction],
    target_day: NaiveDate,
    window_days: u32,
    n: usize,
) -> Recommendation {
    let end = Hour::start_of(target_day);
    let start = end.minus_days(i64::from(window_days));
    let mut best: HashMap<&str, (BehaviorType, Hour)> = HashMap::new();
    let mut bought: HashSet<&str> = HashSet::new();
    for t in transactions
        .iter()
        .filter(|t| t.user_id == user_id && t.timestamp >= start && t.timestamp < end)
    {
        match t.behavior {
            BehaviorType::Payment => {
                bought.insert(&t.item_id);
            }
            BehaviorType::Cart | BehaviorType::Collect => {
                let entry = best.entry(&t.item_id).or_insert((t.behavior, t.timestamp));
                *entry = (entry.0.max(t.behavior), entry.1.max(t.timestamp));
            }
            BehaviorType::Click => {}
        }
    }
    let mut ranked: Vec<(&str, BehaviorType, Hour)> = best
        .into_iter()
        .filter(|(item, _)| !bought.contains(item))
        .map(|(item, (b, h))| (item, b, h))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| b.2.cmp(&a.2))
            .then_with(|| a.0.cmp(b.0))
    });
    Recommendation {
        user_id: user_id.to_string(),
        items: ranked
            .into_iter()
            .take(n)
            .map(|(i, _, _)| i.to_string())
            .collect(),
        trigger: None,
    }
}

/// Plain top-N from the ranker, no gate.
pub fn recommend_cf_only(
    user_id: &str,
    ranker: Ranker<'_>,
    n: usize,
    exclusions: &HashSet<String>,
) -> Result<Recommendation> {
    Ok(Recommendation {
        user_id: user_id.to_string(),
        items: ranker
            .top_n(user_id, n, exclusions)?
            .into_iter()
            .map(|(i, _)| i)
            .collect(),
        trigger: None,
    })
}

/// Items each user has paid for.
pub fn purchased_items(transactions: &[Transaction]) -> HashMap<String, HashSet<String>> {
    let mut out: HashMap<String, HashSet<String>> = HashMap::new();
    for t in transactions.iter().filter(|t| t.behavior.is_payment()) {
        out.entry(t.user_id.clone())
            .or_default()
            .insert(t.item_id.clone());
    }
    out
}

#[derive(Serialize)]
struct RecommendationLine<'a> {
    user_id: &'a str,
    items: &'a [String],
    trigger_probability: Option<f64>,
    trigger_category: Option<&'a str>,
}

/// One JSON object per line.
pub fn write_recommendations_json<W: Write>(mut sink: W, recs: &[Recommendation]) -> Result<()> {
    for r in recs {
        let line = RecommendationLine {
            user_id: &r.user_id,
            items: &r.items,
            trigger_probability: r.trigger.as_ref().map(|t| t.probability),
            trigger_category: r.trigger.as_ref().map(|t| t.category_id.as_str()),
        };
        serde_json::to_writer(&mut sink, &line)?;
        sink.write_all(b"\n")
            .map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

/// Flat `user_id,item_id,rank` rows, rank starting at 1.
pub fn write_recommendations_csv<W: Write>(sink: W, recs: &[Recommendation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::io("<csv output>", e.into());
    w.write_record(["user_id", "item_id", "rank"]).map_err(io)?;
    for r in recs {
        for (k, item) in r.items.iter().enumerate() {
            w.write_record([r.user_id.as_str(), item.as_str(), &(k + 1).to_string()])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spm::SequentialPattern;
    use BehaviorType::*;

    fn store(entries: &[(&[BehaviorType], usize)]) -> PatternStore {
        PatternStore::from_patterns(
            entries.iter().map(|(e, s)| SequentialPattern {
                events: e.to_vec(),
                support: *s,
            }),
            1,
            100,
        )
    }

    fn cand(user: &str, cat: &str, events: &[BehaviorType]) -> BehaviorSequence {
        BehaviorSequence {
            user_id: user.into(),
            category_id: cat.into(),
            anchor: "2014-12-18 00".parse().unwrap(),
            events: events.to_vec(),
        }
    }

    /// One user, items i_c1 (0.9), i_d (0.8), i_c2 (0.7), i_c3 (0.1).
    fn model() -> FactorModel {
        FactorModel::from_factors(
            vec!["u".into()],
            ["i_c1", "i_d", "i_c2", "i_c3"].map(String::from).to_vec(),
            ["c", "d", "c", "c"].map(String::from).to_vec(),
            1,
            0.0,
            vec![1.0],
            vec![0.9, 0.8, 0.7, 0.1],
        )
    }

    fn cfg(n: usize, p_min: f64) -> HybridConfig {
        HybridConfig {
            n,
            p_min,
            ..Default::default()
        }
    }

    #[test]
    fn gate_open_filters_by_category() {
        // <1,3> -> 4 with confidence 0.8
        let s = store(&[
            (&[Click], 10),
            (&[Cart], 10),
            (&[Click, Cart], 10),
            (&[Click, Cart, Payment], 8),
        ]);
        let pred = PaymentPredictor::global(&s, ConfidenceStrategy::Max).unwrap();
        let m = model();
        let rec = recommend_hybrid(
            "u",
            &[cand("u", "c", &[Click, Cart])],
            &pred,
            Ranker::Mf(&m),
            &HashSet::new(),
            &cfg(3, 0.5),
        )
        .unwrap();
        assert_eq!(rec.items, vec!["i_c1", "i_c2"]);
        let trigger = rec.trigger.unwrap();
        assert_eq!(trigger.probability, 0.8);
        assert_eq!(trigger.category_id, "c");
    }

    #[test]
    fn gate_closed_is_empty() {
        let s = store(&[(&[Click], 10), (&[Click, Payment], 3)]);
        let pred = PaymentPredictor::global(&s, ConfidenceStrategy::Max).unwrap();
        let m = model();
        let rec = recommend_hybrid(
            "u",
            &[cand("u", "c", &[Click])],
            &pred,
            Ranker::Mf(&m),
            &HashSet::new(),
            &cfg(3, 0.5),
        )
        .unwrap();
        assert!(rec.items.is_empty());
        assert!(rec.trigger.is_none());

        let fallback = HybridConfig {
            fallback_topn: true,
            ..cfg(2, 0.5)
        };
        let rec = recommend_hybrid(
            "u",
            &[cand("u", "c", &[Click])],
            &pred,
            Ranker::Mf(&m),
            &HashSet::new(),
            &fallback,
        )
        .unwrap();
        assert_eq!(rec.items, vec!["i_c1", "i_d"]);
        assert!(rec.trigger.is_none());
    }

    #[test]
    fn strongest_category_wins_unless_multi() {
        let s = store(&[
            (&[Click], 10),
            (&[Cart], 10),
            (&[Click, Payment], 6),
            (&[Cart, Payment], 9),
        ]);
        let pred = PaymentPredictor::global(&s, ConfidenceStrategy::Max).unwrap();
        let m = model();
        let cands = [cand("u", "c", &[Click]), cand("u", "d", &[Cart])];
        let rec = recommend_hybrid(
            "u",
            &cands,
            &pred,
            Ranker::Mf(&m),
            &HashSet::new(),
            &cfg(4, 0.5),
        )
        .unwrap();
        assert_eq!(rec.items, vec!["i_d"]);
        let multi = HybridConfig {
            multi_category: true,
            ..cfg(4, 0.5)
        };
        let rec =
            recommend_hybrid("u", &cands, &pred, Ranker::Mf(&m), &HashSet::new(), &multi).unwrap();
        assert_eq!(rec.items, vec!["i_c1", "i_d", "i_c2", "i_c3"]);
    }

    #[test]
    fn exclusions_and_repurchase() {
        let s = store(&[(&[Click], 10), (&[Click, Payment], 10)]);
        let pred = PaymentPredictor::global(&s, ConfidenceStrategy::Max).unwrap();
        let m = model();
        let bought: HashSet<String> = ["i_c1".to_string()].into();
        let rec = recommend_hybrid(
            "u",
            &[cand("u", "c", &[Click])],
            &pred,
            Ranker::Mf(&m),
            &bought,
            &cfg(4, 0.5),
        )
        .unwrap();
        assert_eq!(rec.items, vec!["i_c2", "i_c3"]);
        let again = HybridConfig {
            allow_repurchase: true,
            ..cfg(4, 0.5)
        };
        let rec = recommend_hybrid(
            "u",
            &[cand("u", "c", &[Click])],
            &pred,
            Ranker::Mf(&m),
            &bought,
            &again,
        )
        .unwrap();
        assert_eq!(rec.items, vec!["i_c1", "i_c2", "i_c3"]);
    }

    #[test]
    fn unknown_user_propagates() {
        let s = store(&[(&[Click], 10), (&[Click, Payment], 10)]);
        let pred = PaymentPredictor::global(&s, ConfidenceStrategy::Max).unwrap();
        let m = model();
        let r = recommend_hybrid(
            "zz",
            &[cand("zz", "c", &[Click])],
            &pred,
            Ranker::Mf(&m),
            &HashSet::new(),
            &cfg(2, 0.0),
        );
        assert!(matches!(r, Err(Error::UnknownUser(_))));
        assert!(matches!(
            recommend_cf_only("zz", Ranker::Mf(&m), 2, &HashSet::new()),
            Err(Error::UnknownUser(_))
        ));
    }

    #[test]
    fn cf_only_is_top_n() {
        let m = model();
        let rec = recommend_cf_only("u", Ranker::Mf(&m), 2, &HashSet::new()).unwrap();
        let direct = crate::cf::top_n(&m, "u", 2, &HashSet::new()).unwrap();
        assert_eq!(rec.items, direct);
        assert!(rec.trigger.is_none());
    }

    fn tx(item: &str, b: BehaviorType, ts: &str) -> Transaction {
        Transaction::new("u", item, "c", b, ts.parse().unwrap())
    }

    fn day(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn bm_ranks_carts_over_collects() {
        let log = vec![
            tx("i2", Collect, "2014-12-17 09"),
            tx("i1", Cart, "2014-12-17 08"),
        ];
        let rec = recommend_bm("u", &log, day("2014-12-18"), 7, 5);
        assert_eq!(rec.items, vec!["i1", "i2"]);
    }

    #[test]
    fn bm_excludes_purchases_and_breaks_ties_by_id() {
        let log = vec![
            tx("i1", Cart, "2014-12-16 08"),
            tx("i1", Payment, "2014-12-17 08"),
        ];
        assert!(recommend_bm("u", &log, day("2014-12-18"), 7, 5)
            .items
            .is_empty());
        let log = vec![
            tx("i9", Cart, "2014-12-17 08"),
            tx("i3", Cart, "2014-12-17 08"),
            tx("i5", Cart, "2014-12-16 08"),
            tx("i7", Cart, "2014-12-18 08"),
            tx("i8", Cart, "2014-12-01 08"),
        ];
        assert_eq!(
            recommend_bm("u", &log, day("2014-12-18"), 7, 5).items,
            vec!["i3", "i9", "i5"]
        );
        assert_eq!(
            recommend_bm("u", &log, day("2014-12-18"), 7, 2).items,
            vec!["i3", "i9"]
        );
    }

    #[test]
    fn nncf_ranker_ranks_neighbor_items() {
        let m = RatingMatrix::from_dense(&[
            vec![Some(4.0), None, Some(2.0)],
            vec![Some(4.0), Some(2.0), None],
            vec![None, Some(4.0), Some(2.0)],
        ]);
        let ranker = Ranker::Nn { matrix: &m, k: 2 };
        let bought: HashSet<String> = ["i0".to_string(), "i2".to_string()].into();
        let top = ranker.top_n("u0", 5, &bought).unwrap();
        assert_eq!(top, vec![("i1".to_string(), "c0".to_string())]);
    }

    #[test]
    fn output_formats() {
        let recs = vec![
            Recommendation {
                user_id: "u1".into(),
                items: vec!["i1".into(), "i2".into()],
                trigger: Some(PaymentPrediction {
                    probability: 0.75,
                    category_id: "c".into(),
                    matched_pattern: vec![Click, Payment],
                    pattern_support: 3,
                    prefix_support: 4,
                }),
            },
            Recommendation::empty("u2"),
        ];
        let mut json = Vec::new();
        write_recommendations_json(&mut json, &recs).unwrap();
        assert_eq!(
            String::from_utf8(json).unwrap(),
            "{\"user_id\":\"u1\",\"items\":[\"i1\",\"i2\"],\"trigger_probability\":0.75,\"trigger_category\":\"c\"}\n\
             {\"user_id\":\"u2\",\"items\":[],\"trigger_probability\":null,\"trigger_category\":null}\n"
        );
        let mut csv = Vec::new();
        write_recommendations_csv(&mut csv, &recs).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "user_id,item_id,rank\nu1,i1,1\nu1,i2,2\n"
        );
    }
}
