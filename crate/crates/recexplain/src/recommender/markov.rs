//! First-order Markov recommender: transition counts between adjacent
//! training items, with a global-popularity fallback for last items that were
//! never observed as a transition source.

use std::collections::BTreeMap;

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::recommender::BlackBox;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MarkovModel {
    pub n_items: usize,
    /// transitions[last][next] = count over all adjacent training pairs.
    pub transitions: BTreeMap<ItemId, BTreeMap<ItemId, u32>>,
    /// Global item counts, used when `last` has no outgoing transitions.
    pub popularity: Vec<u32>,
}

pub fn train_markov(
    train_sequences: &[(UserId, Vec<ItemId>)],
    n_items: usize,
) -> Result<MarkovModel> {
    if n_items == 0 {
        return Err(Error::Config("empty item space".into()));
    }
    let mut transitions: BTreeMap<ItemId, BTreeMap<ItemId, u32>> = BTreeMap::new();
    let mut popularity = vec![0u32; n_items];
    for (_, items) in train_sequences {
        for &item in items {
            let idx = item as usize;
            if idx >= n_items {
                return Err(Error::Data(format!("item {item} outside dense id space")));
            }
            popularity[idx] += 1;
        }
        for w in items.windows(2) {
            *transitions
                .entry(w[0])
                .or_default()
                .entry(w[1])
                .or_default() += 1;
        }
    }
    Ok(MarkovModel {
        n_items,
        transitions,
        popularity,
    })
}

impl MarkovModel {
    /// P(next | last) as a dense vector; rows sum to 1 when `last` has
    /// outgoing transitions, otherwise the normalized popularity fallback.
    pub fn score_all(&self, last: ItemId) -> Vec<f64> {
        if let Some(row) = self.transitions.get(&last) {
            let total: u32 = row.values().sum();
            let mut scores = vec![0.0; self.n_items];
            for (&next, &count) in row {
                scores[next as usize] = count as f64 / total as f64;
            }
            return scores;
        }
        let total: u32 = self.popularity.iter().sum();
        self.popularity
            .iter()
            .map(|&c| {
                if total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64
                }
            })
            .collect()
    }
}

impl BlackBox for MarkovModel {
    fn recommend(&self, _user: UserId, history: &[ItemId]) -> Result<ItemId> {
        let &last = history
            .last()
            .ok_or_else(|| Error::Model("markov: empty history".into()))?;
        let scores = self.score_all(last);
        argmax(&scores)
            .map(|i| i as ItemId)
            .ok_or_else(|| Error::Model("markov: no items".into()))
    }

    fn name(&self) -> &'static str {
        "markov"
    }
}
