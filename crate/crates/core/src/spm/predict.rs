//! Payment probability for open candidate sequences.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{contains, PatternStore};
use crate::error::{Error, Result};
use crate::ingest::BehaviorType;
use crate::seqdb::BehaviorSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentPrediction {
    pub probability: f64,
    pub category_id: String,
    /// The payment-terminated pattern `prefix + [4]` behind the probability.
    pub matched_pattern: Vec<BehaviorType>,
    pub pattern_support: usize,
    pub prefix_support: usize,
}

impl PaymentPrediction {
    /// Higher probability first, then the longer pattern, then the smaller
    /// event list, then the smaller category id. `Greater` means stronger.
    pub fn strength_cmp(&self, other: &Self) -> Ordering {
        self.probability
            .total_cmp(&other.probability)
            .then_with(|| self.matched_pattern.len().cmp(&other.matched_pattern.len()))
            .then_with(|| other.matched_pattern.cmp(&self.matched_pattern))
            .then_with(|| other.category_id.cmp(&self.category_id))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceStrategy {
    /// The single highest-confidence matching rule.
    #[default]
    Max,
    /// Confidence-weighted mean over all matching rules (weights equal the
    /// confidences); the reported pattern is still the strongest match.
    Weighted,
}

/// A rule `prefix -> 4` taken from a store.
#[derive(Debug, Clone)]
struct Rule {
    prefix: Vec<BehaviorType>,
    pattern: Vec<BehaviorType>,
    pattern_support: usize,
    prefix_support: usize,
}

impl Rule {
    fn confidence(&self) -> f64 {
        self.pattern_support as f64 / self.prefix_support as f64
    }
}

/// The payment-terminated rules of a store, extracted once for repeated scoring.
#[derive(Debug, Clone)]
pub struct PaymentRules {
    rules: Vec<Rule>,
    strategy: ConfidenceStrategy,
}

impl PaymentRules {
    pub fn from_store(store: &PatternStore, strategy: ConfidenceStrategy) -> Result<Self> {
        let mut rules = Vec::new();
        for (pattern, &support) in store.raw() {
            if pattern.len() < 2 || pattern.last() != Some(&BehaviorType::Payment) {
                continue;
            }
            let prefix = &pattern[..pattern.len() - 1];
            let prefix_support = store.support(prefix).ok_or_else(|| {
                Error::InconsistentStore(format!(
                    "pattern {pattern:?} is stored but its prefix is not"
                ))
            })?;
            if prefix_support < support || prefix_support == 0 {
                return Err(Error::InconsistentStore(format!(
                    "prefix of {pattern:?} has support {prefix_support} below the pattern's {support}"
                )));
            }
            rules.push(Rule {
                prefix: prefix.to_vec(),
                pattern: pattern.clone(),
                pattern_support: support,
                prefix_support,
            });
        }
        Ok(PaymentRules { rules, strategy })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn predict(&self, candidate: &BehaviorSequence) -> Option<PaymentPrediction> {
        let mut best: Option<PaymentPrediction> = None;
        let mut weight_sum = 0.0;
        let mut weighted = 0.0;
        for rule in self
            .rules
            .iter()
            .filter(|r| contains(&candidate.events, &r.prefix))
        {
            let confidence = rule.confidence();
            weight_sum += confidence;
            weighted += confidence * confidence;
            let prediction = PaymentPrediction {
                probability: confidence,
                category_id: candidate.category_id.clone(),
                matched_pattern: rule.pattern.clone(),
                pattern_support: rule.pattern_support,
                prefix_support: rule.prefix_support,
            };
            if best
                .as_ref()
                .is_none_or(|b| prediction.strength_cmp(b) == Ordering::Greater)
            {
                best = Some(prediction);
            }
        }
        if self.strategy == ConfidenceStrategy::Weighted {
            if let Some(b) = best.as_mut() {
                b.probability = if weight_sum > 0.0 {
                    weighted / weight_sum
                } else {
                    0.0
                };
            }
        }
        best
    }
}

/// Maximum-confidence payment rule `α -> 4` whose prefix `α` occurs in the
/// candidate, or `None` if no rule matches.
pub fn payment_confidence(
    store: &PatternStore,
    candidate: &BehaviorSequence,
) -> Result<Option<PaymentPrediction>> {
    payment_confidence_with(store, candidate, ConfidenceStrategy::Max)
}

pub fn payment_confidence_with(
    store: &PatternStore,
    candidate: &BehaviorSequence,
    strategy: ConfidenceStrategy,
) -> Result<Option<PaymentPrediction>> {
    Ok(PaymentRules::from_store(store, strategy)?.predict(candidate))
}
