//! Factorized Personalized Markov Chains.
//!
//! score(u, i | last) = <W_u, V^IU_i> + <V^LI_last, V^IL_i>
//! trained with BPR over adjacent (last, next) pairs from each user's
//! chronological training sequence.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::math::{argmax, log_sigmoid, sigmoid};
use crate::recommender::BlackBox;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FpmcConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
}

impl Default for FpmcConfig {
    fn default() -> Self {
        FpmcConfig {
            dim: 16,
            epochs: 50,
            learning_rate: 0.05,
            l2_reg: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpmcModel {
    pub dim: usize,
    pub seed: u64,
    /// W: n_users x dim, user factors for the user-item term.
    pub user_factors: Array2<f64>,
    /// V^IU: n_items x dim, item factors against the user.
    pub item_user_factors: Array2<f64>,
    /// V^IL: n_items x dim, item factors against the previous item.
    pub item_last_factors: Array2<f64>,
    /// V^LI: n_items x dim, previous-item context factors.
    pub last_item_factors: Array2<f64>,
}

impl FpmcModel {
    pub fn score(&self, user: UserId, last: ItemId, item: ItemId) -> f64 {
        let u = user as usize;
        let l = last as usize;
        let i = item as usize;
        let mut s = 0.0;
        for k in 0..self.dim {
            s += self.user_factors[[u, k]] * self.item_user_factors[[i, k]]
                + self.last_item_factors[[l, k]] * self.item_last_factors[[i, k]];
        }
        s
    }

    pub fn score_all(&self, user: UserId, last: ItemId) -> Vec<f64> {
        (0..self.item_user_factors.nrows() as ItemId)
            .map(|i| self.score(user, last, i))
            .collect()
    }
}

impl BlackBox for FpmcModel {
    fn recommend(&self, user: UserId, history: &[ItemId]) -> Result<ItemId> {
        let &last = history
            .last()
            .ok_or_else(|| Error::Model("fpmc: empty history".into()))?;
        if user as usize >= self.user_factors.nrows() {
            return Err(Error::Model(format!("fpmc: unknown user {user}")));
        }
        if last as usize >= self.last_item_factors.nrows() {
            return Err(Error::Model(format!("fpmc: unknown item {last}")));
        }
        let scores = self.score_all(user, last);
        argmax(&scores)
            .map(|i| i as ItemId)
            .ok_or_else(|| Error::Model("fpmc: no items".into()))
    }

    fn name(&self) -> &'static str {
        "fpmc"
    }
}

/// BPR objective for one FPMC step and its analytic gradients (ascent
/// convention). `i` is the observed next item, `j` the sampled negative:
///
/// objective = log sigma(s_i - s_j) - l2 * sum of squared involved factors
#[allow(clippy::too_many_arguments)]
pub fn fpmc_objective_grad(
    w_u: &[f64],
    viu_i: &[f64],
    viu_j: &[f64],
    vli_l: &[f64],
    vil_i: &[f64],
    vil_j: &[f64],
    l2: f64,
) -> (f64, Vec<Vec<f64>>) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let d = dot(w_u, viu_i) + dot(vli_l, vil_i) - dot(w_u, viu_j) - dot(vli_l, vil_j);
    let objective = log_sigmoid(d)
        - l2 * (sq(w_u) + sq(viu_i) + sq(viu_j) + sq(vli_l) + sq(vil_i) + sq(vil_j));
    let e = sigmoid(-d);
    let dim = w_u.len();
    let mut grads = vec![vec![0.0; dim]; 6];
    for k in 0..dim {
        grads[0][k] = e * (viu_i[k] - viu_j[k]) - 2.0 * l2 * w_u[k]; // w_u
        grads[1][k] = e * w_u[k] - 2.0 * l2 * viu_i[k]; // viu_i
        grads[2][k] = -e * w_u[k] - 2.0 * l2 * viu_j[k]; // viu_j
        grads[3][k] = e * (vil_i[k] - vil_j[k]) - 2.0 * l2 * vli_l[k]; // vli_l
        grads[4][k] = e * vli_l[k] - 2.0 * l2 * vil_i[k]; // vil_i
        grads[5][k] = -e * vli_l[k] - 2.0 * l2 * vil_j[k]; // vil_j
    }
    (objective, grads)
}

/// Train FPMC with stochastic gradient ascent over adjacent pairs. For each
/// step a (user, last, next) transition is sampled uniformly, plus a uniform
/// negative item the user never interacted with in training. Deterministic
/// given `seed`.
pub fn train_fpmc(
    train_sequences: &[(UserId, Vec<ItemId>)],
    n_users: usize,
    n_items: usize,
    config: &FpmcConfig,
    seed: u64,
) -> Result<FpmcModel> {
    if config.dim == 0 {
        return Err(Error::Config("fpmc dim must be at least 1".into()));
    }
    if n_users == 0 || n_items == 0 {
        return Err(Error::Config("empty user or item space".into()));
    }

    let mut transitions: Vec<(UserId, ItemId, ItemId)> = Vec::new();
    let mut positives: Vec<HashSet<ItemId>> = vec![HashSet::new(); n_users];
    for (user, items) in train_sequences {
        if *user as usize >= n_users {
            return Err(Error::Data(format!("user {user} outside dense id space")));
        }
        for &item in items {
            if item as usize >= n_items {
                return Err(Error::Data(format!("item {item} outside dense id space")));
            }
            positives[*user as usize].insert(item);
        }
        for w in items.windows(2) {
            transitions.push((*user, w[0], w[1]));
        }
    }
    if transitions.is_empty() {
        return Err(Error::Data(
            "no adjacent training transitions; sequences too short".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = config.dim;
    let mut init = |rows: usize| {
        let mut arr = Array2::zeros((rows, dim));
        for r in 0..rows {
            for c in 0..dim {
                arr[[r, c]] = rng.random_range(-0.05..0.05);
            }
        }
        arr
    };
    let mut user_factors = init(n_users);
    let mut item_user_factors = init(n_items);
    let mut item_last_factors = init(n_items);
    let mut last_item_factors = init(n_items);

    let lr = config.learning_rate;
    let l2 = config.l2_reg;
    for _epoch in 0..config.epochs {
        for _step in 0..transitions.len() {
            let (u, last, i) = transitions[rng.random_range(0..transitions.len())];
            let pos = &positives[u as usize];
            if pos.len() >= n_items {
                continue;
            }
            let mut j = rng.random_range(0..n_items as u32);
            while pos.contains(&j) {
                j = rng.random_range(0..n_items as u32);
            }

            let (u, l, i, j) = (u as usize, last as usize, i as usize, j as usize);
            let mut d = 0.0;
            for k in 0..dim {
                d += user_factors[[u, k]]
                    * (item_user_factors[[i, k]] - item_user_factors[[j, k]])
                    + last_item_factors[[l, k]]
                        * (item_last_factors[[i, k]] - item_last_factors[[j, k]]);
            }
            let e = sigmoid(-d);
            for k in 0..dim {
                let wu = user_factors[[u, k]];
                let viu_i = item_user_factors[[i, k]];
                let viu_j = item_user_factors[[j, k]];
                let vli = last_item_factors[[l, k]];
                let vil_i = item_last_factors[[i, k]];
                let vil_j = item_last_factors[[j, k]];
                user_factors[[u, k]] += lr * (e * (viu_i - viu_j) - 2.0 * l2 * wu);
                item_user_factors[[i, k]] += lr * (e * wu - 2.0 * l2 * viu_i);
                item_user_factors[[j, k]] += lr * (-e * wu - 2.0 * l2 * viu_j);
                last_item_factors[[l, k]] += lr * (e * (vil_i - vil_j) - 2.0 * l2 * vli);
                item_last_factors[[i, k]] += lr * (e * vli - 2.0 * l2 * vil_i);
                item_last_factors[[j, k]] += lr * (-e * vli - 2.0 * l2 * vil_j);
            }
        }
    }

    Ok(FpmcModel {
        dim,
        seed,
        user_factors,
        item_user_factors,
        item_last_factors,
        last_item_factors,
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct FpmcHeader {
    dim: usize,
    n_items: usize,
    n_users: usize,
    seed: u64,
}

impl FpmcModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = FpmcHeader {
            dim: self.dim,
            n_items: self.item_user_factors.nrows(),
            n_users: self.user_factors.nrows(),
            seed: self.seed,
        };
        fs::write(
            dir.join("header.json"),
            serde_json::to_string_pretty(&header)?,
        )?;
        checkpoint::write_matrices(
            &dir.join("factors.bin"),
            &[
                &self.user_factors,
                &self.item_user_factors,
                &self.item_last_factors,
                &self.last_item_factors,
            ],
        )
    }

    pub fn load(dir: &Path) -> Result<FpmcModel> {
        let header: FpmcHeader =
            serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
        let (n_items, n_users, dim) = (header.n_items, header.n_users, header.dim);
        let mut mats = checkpoint::read_matrices(
            &dir.join("factors.bin"),
            &[
                (n_users, dim),
                (n_items, dim),
                (n_items, dim),
                (n_items, dim),
            ],
        )?;
        let last_item_factors = mats.pop().unwrap();
        let item_last_factors = mats.pop().unwrap();
        let item_user_factors = mats.pop().unwrap();
        let user_factors = mats.pop().unwrap();
        Ok(FpmcModel {
            dim,
            seed: header.seed,
            user_factors,
            item_user_factors,
            item_last_factors,
            last_item_factors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dim = 4;
        for _ in 0..10 {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let vecs: Vec<Vec<f64>> = (0..6).map(|_| draw(&mut rng)).collect();
            let l2 = 0.02;
            let eval = |vs: &[Vec<f64>]| {
                fpmc_objective_grad(&vs[0], &vs[1], &vs[2], &vs[3], &vs[4], &vs[5], l2)
            };
            let (_, grads) = eval(&vecs);
            let h = 1e-6;
            for v in 0..6 {
                for k in 0..dim {
                    let mut plus = vecs.clone();
                    let mut minus = vecs.clone();
                    plus[v][k] += h;
                    minus[v][k] -= h;
                    let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                    let denom = fd.abs().max(grads[v][k].abs()).max(1e-8);
                    assert!(
                        ((fd - grads[v][k]) / denom).abs() < 1e-6,
                        "factor {v} dim {k}"
                    );
                }
            }
        }
    }

    /// Each user alternates between a private item pair (2u, 2u+1). The
    /// user term makes both of the pair beat the 18 foreign items and the
    /// transition term picks the partner rather than the last item itself.
    #[test]
    fn learns_planted_transitions() {
        let n_users = 10;
        let n_items = 2 * n_users;
        let mut seqs = Vec::new();
        for u in 0..n_users as u32 {
            let items: Vec<ItemId> = (0..20).map(|t| 2 * u + (t % 2)).collect();
            seqs.push((u, items));
        }
        let cfg = FpmcConfig {
            dim: 8,
            epochs: 30,
            ..FpmcConfig::default()
        };
        let model = train_fpmc(&seqs, n_users, n_items, &cfg, 9).unwrap();
        let mut hits = 0;
        for u in 0..n_users as u32 {
            if model.recommend(u, &[2 * u]).unwrap() == 2 * u + 1 {
                hits += 1;
            }
        }
        assert!(
            hits >= n_users - 1,
            "only {hits}/{n_users} planted transitions recovered"
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let seqs = vec![(0, vec![0, 1, 2, 0, 1, 2]), (1, vec![2, 1, 0, 2, 1])];
        let cfg = FpmcConfig {
            epochs: 3,
            ..FpmcConfig::default()
        };
        let a = train_fpmc(&seqs, 2, 3, &cfg, 4).unwrap();
        let b = train_fpmc(&seqs, 2, 3, &cfg, 4).unwrap();
        assert_eq!(a, b);
        let c = train_fpmc(&seqs, 2, 3, &cfg, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn checkpoint_round_trips() {
        let seqs = vec![(0, vec![0, 1, 2, 0, 1, 2])];
        let cfg = FpmcConfig {
            epochs: 2,
            dim: 3,
            ..FpmcConfig::default()
        };
        let model = train_fpmc(&seqs, 1, 3, &cfg, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let loaded = FpmcModel::load(dir.path()).unwrap();
        assert_eq!(
            loaded.user_factors,
            checkpoint::quantize_f32(&model.user_factors)
        );
        assert_eq!(
            loaded.last_item_factors,
            checkpoint::quantize_f32(&model.last_item_factors)
        );
        assert_eq!(loaded.dim, 3);
    }

    #[test]
    fn rejects_empty_history_and_degenerate_input() {
        let seqs = vec![(0, vec![0, 1, 0, 1])];
        let model = train_fpmc(&seqs, 1, 2, &FpmcConfig::default(), 1).unwrap();
        assert!(model.recommend(0, &[]).is_err());
        let single = vec![(0u32, vec![3u32])];
        assert!(train_fpmc(&single, 1, 4, &FpmcConfig::default(), 1).is_err());
    }
}
