//! Black-box sequential recommenders.
//!
//! The explanation pipeline only ever calls `recommend` — it treats the
//! model as an opaque function from (user, input sequence) to one item.
//! Everything else on the concrete types exists for training and testing.

mod external;
mod fpmc;
mod markov;

pub use external::{external_model, ExternalModel};
pub use fpmc::{fpmc_objective_grad, train_fpmc, FpmcConfig, FpmcModel};
pub use markov::{train_markov, MarkovModel};

use std::fs;
use std::path::Path;

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::math::argmax;

/// An opaque next-item recommender. `history` is the chronological input
/// sequence (most recent last); the result is the single top item.
pub trait BlackBox: Send + Sync {
    fn recommend(&self, user: UserId, history: &[ItemId]) -> Result<ItemId>;
    fn name(&self) -> &'static str;
}

/// Non-personalized popularity baseline: always recommends the globally
/// most frequent training item, regardless of user or history.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PopularityModel {
    /// Training interaction count per item id.
    pub counts: Vec<u32>,
}

/// Count training interactions per item. Ties on the top item resolve to the
/// smallest item id at recommendation time.
pub fn popularity_model(
    train_sequences: &[(UserId, Vec<ItemId>)],
    n_items: usize,
) -> Result<PopularityModel> {
    if n_items == 0 {
        return Err(Error::Config("empty item space".into()));
    }
    let mut counts = vec![0u32; n_items];
    for (_, items) in train_sequences {
        for &item in items {
            let idx = item as usize;
            if idx >= n_items {
                return Err(Error::Data(format!("item {item} outside dense id space")));
            }
            counts[idx] += 1;
        }
    }
    Ok(PopularityModel { counts })
}

impl BlackBox for PopularityModel {
    fn recommend(&self, _user: UserId, _history: &[ItemId]) -> Result<ItemId> {
        let scores: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        argmax(&scores)
            .map(|i| i as ItemId)
            .ok_or_else(|| Error::Model("no items to rank".into()))
    }

    fn name(&self) -> &'static str {
        "popularity"
    }
}

/// A trained black box of any supported kind, with uniform save/load so the
/// pipeline can checkpoint whichever model the config selects.
pub enum TrainedBlackBox {
    Fpmc(FpmcModel),
    Markov(MarkovModel),
    Popularity(PopularityModel),
    External(ExternalModel),
}

impl BlackBox for TrainedBlackBox {
    fn recommend(&self, user: UserId, history: &[ItemId]) -> Result<ItemId> {
        match self {
            TrainedBlackBox::Fpmc(m) => m.recommend(user, history),
            TrainedBlackBox::Markov(m) => m.recommend(user, history),
            TrainedBlackBox::Popularity(m) => m.recommend(user, history),
            TrainedBlackBox::External(m) => m.recommend(user, history),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            TrainedBlackBox::Fpmc(m) => m.name(),
            TrainedBlackBox::Markov(m) => m.name(),
            TrainedBlackBox::Popularity(m) => m.name(),
            TrainedBlackBox::External(m) => m.name(),
        }
    }
}

impl TrainedBlackBox {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("kind"), self.name())?;
        match self {
            TrainedBlackBox::Fpmc(m) => m.save(dir),
            TrainedBlackBox::Markov(m) => {
                fs::write(dir.join("markov.json"), serde_json::to_string(m)?)?;
                Ok(())
            }
            TrainedBlackBox::Popularity(m) => {
                fs::write(dir.join("popularity.json"), serde_json::to_string(m)?)?;
                Ok(())
            }
            TrainedBlackBox::External(m) => {
                fs::write(dir.join("external.json"), serde_json::to_string(m)?)?;
                Ok(())
            }
        }
    }

    pub fn load(dir: &Path) -> Result<TrainedBlackBox> {
        let kind = fs::read_to_string(dir.join("kind"))?;
        match kind.trim() {
            "fpmc" => Ok(TrainedBlackBox::Fpmc(FpmcModel::load(dir)?)),
            "markov" => Ok(TrainedBlackBox::Markov(serde_json::from_str(
                &fs::read_to_string(dir.join("markov.json"))?,
            )?)),
            "popularity" => Ok(TrainedBlackBox::Popularity(serde_json::from_str(
                &fs::read_to_string(dir.join("popularity.json"))?,
            )?)),
            "external" => Ok(TrainedBlackBox::External(serde_json::from_str(
                &fs::read_to_string(dir.join("external.json"))?,
            )?)),
            other => Err(Error::Serde(format!("unknown black-box kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn popularity_ignores_user_and_history() {
        let seqs = vec![(0, vec![2, 2, 1]), (1, vec![2, 0])];
        let model = popularity_model(&seqs, 4).unwrap();
        assert_eq!(model.counts, vec![1, 1, 3, 0]);
        assert_eq!(model.recommend(0, &[1, 3]).unwrap(), 2);
        assert_eq!(model.recommend(9, &[0]).unwrap(), 2);
        assert_eq!(model.recommend(0, &[]).unwrap(), 2);
    }

    #[test]
    fn popularity_breaks_ties_toward_smallest_id() {
        let seqs = vec![(0, vec![3, 1, 3, 1])];
        let model = popularity_model(&seqs, 5).unwrap();
        assert_eq!(model.recommend(0, &[0]).unwrap(), 1);
    }

    #[test]
    fn trained_blackbox_round_trips_popularity() {
        let seqs = vec![(0, vec![2, 2, 1])];
        let model = popularity_model(&seqs, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bb = TrainedBlackBox::Popularity(model.clone());
        bb.save(dir.path()).unwrap();
        match TrainedBlackBox::load(dir.path()).unwrap() {
            TrainedBlackBox::Popularity(loaded) => assert_eq!(loaded, model),
            _ => panic!("wrong kind"),
        }
    }
}
