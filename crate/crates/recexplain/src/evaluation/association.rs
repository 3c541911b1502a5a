//! Length-2 association-rule baseline.
//!
//! Transactions are item sets (one per user: the input history plus the
//! model's recommendation). Every ordered pair (a -> b) co-occurring in some
//! transaction is a candidate rule; three rule sets are produced, one per
//! interestingness measure, each filtered by its own threshold and ranked by
//! its own measure. This mirrors reporting the baseline "with support,
//! confidence, and lift thresholds, respectively".

use std::collections::{BTreeMap, BTreeSet};

use crate::data::ItemId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AssociationRule {
    pub antecedent: ItemId,
    pub consequent: ItemId,
    /// |transactions containing both| / |transactions|
    pub support: f64,
    /// support(a,b) / support(a)
    pub confidence: f64,
    /// support(a,b) / (support(a) * support(b))
    pub lift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MiningThresholds {
    pub min_support: f64,
    pub min_confidence: f64,
    pub min_lift: f64,
}

impl Default for MiningThresholds {
    fn default() -> Self {
        MiningThresholds {
            min_support: 0.1,
            min_confidence: 0.1,
            min_lift: 0.1,
        }
    }
}

/// The three independently-thresholded rankings.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RuleSets {
    pub by_support: Vec<AssociationRule>,
    pub by_confidence: Vec<AssociationRule>,
    pub by_lift: Vec<AssociationRule>,
}

impl RuleSets {
    pub fn get(&self, measure: Measure) -> &[AssociationRule] {
        match measure {
            Measure::Support => &self.by_support,
            Measure::Confidence => &self.by_confidence,
            Measure::Lift => &self.by_lift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Support,
    Confidence,
    Lift,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Support, Measure::Confidence, Measure::Lift];

    pub fn name(&self) -> &'static str {
        match self {
            Measure::Support => "support",
            Measure::Confidence => "confidence",
            Measure::Lift => "lift",
        }
    }

    fn of(&self, rule: &AssociationRule) -> f64 {
        match self {
            Measure::Support => rule.support,
            Measure::Confidence => rule.confidence,
            Measure::Lift => rule.lift,
        }
    }
}

/// Enumerate all length-2 rules over the transactions and produce the three
/// per-measure rule sets. Deterministic: ranked by (measure desc, antecedent
/// asc, consequent asc).
pub fn mine_association_rules(
    transactions: &[BTreeSet<ItemId>],
    thresholds: &MiningThresholds,
) -> Result<RuleSets> {
    if transactions.is_empty() {
        return Err(Error::Data("no transactions to mine".into()));
    }
    for (name, value) in [
        ("min_support", thresholds.min_support),
        ("min_confidence", thresholds.min_confidence),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Config(format!("{name} must be in [0,1], got {value}")));
        }
    }
    if thresholds.min_lift < 0.0 {
        return Err(Error::Config(format!(
            "min_lift must be non-negative, got {}",
            thresholds.min_lift
        )));
    }

    let n = transactions.len() as f64;
    let mut single: BTreeMap<ItemId, u32> = BTreeMap::new();
    let mut pair: BTreeMap<(ItemId, ItemId), u32> = BTreeMap::new();
    for t in transactions {
        let items: Vec<ItemId> = t.iter().copied().collect();
        for &a in &items {
            *single.entry(a).or_default() += 1;
        }
        for (i, &a) in items.iter().enumerate() {
            for &b in &items[i + 1..] {
                *pair.entry((a, b)).or_default() += 1; // a < b by BTreeSet order
            }
        }
    }

    let mut rules = Vec::new();
    for (&(a, b), &both) in &pair {
        for (ant, cons) in [(a, b), (b, a)] {
            let support = both as f64 / n;
            let confidence = both as f64 / single[&ant] as f64;
            let lift = (both as f64 * n) / (single[&ant] as f64 * single[&cons] as f64);
            rules.push(AssociationRule {
                antecedent: ant,
                consequent: cons,
                support,
                confidence,
                lift,
            });
        }
    }

    let ranked = |measure: Measure, min: f64| -> Vec<AssociationRule> {
        let mut set: Vec<AssociationRule> = rules
            .iter()
            .filter(|r| measure.of(r) >= min)
            .cloned()
            .collect();
        set.sort_by(|x, y| {
            measure
                .of(y)
                .total_cmp(&measure.of(x))
                .then_with(|| x.antecedent.cmp(&y.antecedent))
                .then_with(|| x.consequent.cmp(&y.consequent))
        });
        set
    };

    Ok(RuleSets {
        by_support: ranked(Measure::Support, thresholds.min_support),
        by_confidence: ranked(Measure::Confidence, thresholds.min_confidence),
        by_lift: ranked(Measure::Lift, thresholds.min_lift),
    })
}

/// The highest-ranked rule whose antecedent is in the user's history and
/// whose consequent is the recommendation; `rules` must already be ranked by
/// the measure of interest (as produced by `mine_association_rules`).
pub fn association_explain<'a>(
    user_history: &[ItemId],
    recommendation: ItemId,
    rules: &'a [AssociationRule],
) -> Option<&'a AssociationRule> {
    rules
        .iter()
        .find(|r| r.consequent == recommendation && user_history.contains(&r.antecedent))
}
