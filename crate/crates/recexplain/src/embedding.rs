//! Item/user embeddings trained with Bayesian Personalized Ranking.
//!
//! The embeddings serve two purposes downstream: the sequence VAE consumes
//! concatenated item vectors as its input space, and decoded vectors are
//! snapped back to items with `nearest_item`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BprConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            dim: 16,
            epochs: 50,
            learning_rate: 0.05,
            l2_reg: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub seed: u64,
    /// n_items x dim; every item id in the dataset has exactly one row.
    pub item_vectors: Array2<f64>,
    /// n_users x dim.
    pub user_vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn n_items(&self) -> usize {
        self.item_vectors.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.user_vectors.nrows()
    }

    pub fn item(&self, id: ItemId) -> ArrayView1<'_, f64> {
        self.item_vectors.row(id as usize)
    }
}

/// BPR objective for one (user, positive, negative) triple together with its
/// analytic gradient, in ascent convention: training moves parameters along
/// the returned gradients.
///
/// objective = log sigma(w_u . (h_i - h_j)) - l2 * (|w_u|^2 + |h_i|^2 + |h_j|^2)
pub fn bpr_objective_grad(
    w_u: &[f64],
    h_i: &[f64],
    h_j: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d: f64 = w_u
        .iter()
        .zip(h_i.iter().zip(h_j))
        .map(|(wu, (hi, hj))| wu * (hi - hj))
        .sum();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let objective = log_sigmoid(d) - l2 * (sq(w_u) + sq(h_i) + sq(h_j));
    let e = sigmoid(-d); // d/dx log sigma(x) = sigma(-x)
    let g_wu: Vec<f64> = w_u
        .iter()
        .zip(h_i.iter().zip(h_j))
        .map(|(wu, (hi, hj))| e * (hi - hj) - 2.0 * l2 * wu)
        .collect();
    let g_hi: Vec<f64> = h_i
        .iter()
        .zip(w_u)
        .map(|(hi, wu)| e * wu - 2.0 * l2 * hi)
        .collect();
    let g_hj: Vec<f64> = h_j
        .iter()
        .zip(w_u)
        .map(|(hj, wu)| -e * wu - 2.0 * l2 * hj)
        .collect();
    (objective, g_wu, g_hi, g_hj)
}

/// Train item/user embeddings with BPR-style stochastic gradient ascent:
/// sample an observed (user, item) interaction and a uniformly random
/// non-interacted item, then take one step on `bpr_objective_grad`.
/// Single-threaded and fully determined by `seed`.
pub fn train_bpr(
    train_sequences: &[(UserId, Vec<ItemId>)],
    n_users: usize,
    n_items: usize,
    config: &BprConfig,
    seed: u64,
) -> Result<EmbeddingTable> {
    if config.dim == 0 {
        return Err(Error::Config("embedding dim must be at least 1".into()));
    }
    if n_users == 0 || n_items == 0 {
        return Err(Error::Config("empty user or item space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut item_vectors = uniform_init(&mut rng, n_items, config.dim);
    let mut user_vectors = uniform_init(&mut rng, n_users, config.dim);

    let mut triples: Vec<(UserId, ItemId)> = Vec::new();
    let mut positives: Vec<HashSet<ItemId>> = vec![HashSet::new(); n_users];
    for (user, items) in train_sequences {
        for &item in items {
            if (*user as usize) >= n_users || (item as usize) >= n_items {
                return Err(Error::Data(format!(
                    "interaction ({user}, {item}) outside dense id space"
                )));
            }
            triples.push((*user, item));
            positives[*user as usize].insert(item);
        }
    }
    if triples.is_empty() {
        return Err(Error::Data("no training interactions".into()));
    }

    let lr = config.learning_rate;
    let l2 = config.l2_reg;
    let dim = config.dim;
    for _epoch in 0..config.epochs {
        for _step in 0..triples.len() {
            let (u, i) = triples[rng.random_range(0..triples.len())];
            let pos = &positives[u as usize];
            if pos.len() >= n_items {
                continue; // user has interacted with everything
            }
            let mut j = rng.random_range(0..n_items as u32);
            while pos.contains(&j) {
                j = rng.random_range(0..n_items as u32);
            }

            // inline sgd step; same math as bpr_objective_grad
            let (ui, ii, ji) = (u as usize, i as usize, j as usize);
            let mut d = 0.0;
            for k in 0..dim {
                d += user_vectors[[ui, k]] * (item_vectors[[ii, k]] - item_vectors[[ji, k]]);
            }
            let e = sigmoid(-d);
            for k in 0..dim {
                let wu = user_vectors[[ui, k]];
                let hi = item_vectors[[ii, k]];
                let hj = item_vectors[[ji, k]];
                user_vectors[[ui, k]] += lr * (e * (hi - hj) - 2.0 * l2 * wu);
                item_vectors[[ii, k]] += lr * (e * wu - 2.0 * l2 * hi);
                item_vectors[[ji, k]] += lr * (-e * wu - 2.0 * l2 * hj);
            }
        }
    }

    Ok(EmbeddingTable {
        dim,
        seed,
        item_vectors,
        user_vectors,
    })
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut arr = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            arr[[r, c]] = rng.random_range(-0.05..0.05);
        }
    }
    arr
}

/// Item whose embedding has the largest dot product with `query`; ties
/// resolve to the smallest item id. Items in `exclude` are skipped; returns
/// None when every item is excluded.
pub fn nearest_item(
    query: &[f64],
    table: &EmbeddingTable,
    exclude: Option<&HashSet<ItemId>>,
) -> Option<ItemId> {
    let mut best: Option<(ItemId, f64)> = None;
    for id in 0..table.n_items() as ItemId {
        if exclude.is_some_and(|ex| ex.contains(&id)) {
            continue;
        }
        let score: f64 = table
            .item(id)
            .iter()
            .zip(query)
            .map(|(a, b)| a * b)
            .sum();
        match best {
            None => best = Some((id, score)),
            Some((_, bs)) if score > bs => best = Some((id, score)),
            _ => {}
        }
    }
    best.map(|(id, _)| id)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EmbeddingHeader {
    dim: usize,
    n_items: usize,
    n_users: usize,
    seed: u64,
}

impl EmbeddingTable {
    /// Write header.json + vectors.bin (item rows then user rows, row-major
    /// little-endian f32).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = EmbeddingHeader {
            dim: self.dim,
            n_items: self.n_items(),
            n_users: self.n_users(),
            seed: self.seed,
        };
        fs::write(
            dir.join("header.json"),
            serde_json::to_string_pretty(&header)?,
        )?;
        checkpoint::write_matrices(
            &dir.join("vectors.bin"),
            &[&self.item_vectors, &self.user_vectors],
        )
    }

    pub fn load(dir: &Path) -> Result<EmbeddingTable> {
        let header: EmbeddingHeader =
            serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
        let mut mats = checkpoint::read_matrices(
            &dir.join("vectors.bin"),
            &[
                (header.n_items, header.dim),
                (header.n_users, header.dim),
            ],
        )?;
        let user_vectors = mats.pop().unwrap();
        let item_vectors = mats.pop().unwrap();
        Ok(EmbeddingTable {
            dim: header.dim,
            seed: header.seed,
            item_vectors,
            user_vectors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sequences() -> Vec<(UserId, Vec<ItemId>)> {
        // two user cliques with disjoint tastes: users 0-2 consume items 0-3,
        // users 3-5 consume items 4-7
        let mut seqs = Vec::new();
        for u in 0..3 {
            seqs.push((u as UserId, vec![0, 1, 2, 3, 0, 1, 2, 3]));
        }
        for u in 3..6 {
            seqs.push((u as UserId, vec![4, 5, 6, 7, 4, 5, 6, 7]));
        }
        seqs
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dim = 5;
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let (w, hi, hj) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let l2 = 0.01;
            let (_, gw, gi, gj) = bpr_objective_grad(&w, &hi, &hj, l2);
            let h = 1e-6;
            for k in 0..dim {
                for (vec_idx, analytic) in [(0, &gw), (1, &gi), (2, &gj)] {
                    let mut plus = [w.clone(), hi.clone(), hj.clone()];
                    let mut minus = plus.clone();
                    plus[vec_idx][k] += h;
                    minus[vec_idx][k] -= h;
                    let (op, ..) = bpr_objective_grad(&plus[0], &plus[1], &plus[2], l2);
                    let (om, ..) = bpr_objective_grad(&minus[0], &minus[1], &minus[2], l2);
                    let fd = (op - om) / (2.0 * h);
                    let denom = fd.abs().max(analytic[k].abs()).max(1e-8);
                    assert!(
                        ((fd - analytic[k]) / denom).abs() < 1e-6,
                        "vec {vec_idx} dim {k}: fd {fd} vs analytic {}",
                        analytic[k]
                    );
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let seqs = toy_sequences();
        let cfg = BprConfig {
            epochs: 3,
            ..BprConfig::default()
        };
        let a = train_bpr(&seqs, 6, 8, &cfg, 11).unwrap();
        let b = train_bpr(&seqs, 6, 8, &cfg, 11).unwrap();
        assert_eq!(a.item_vectors, b.item_vectors);
        assert_eq!(a.user_vectors, b.user_vectors);
        let c = train_bpr(&seqs, 6, 8, &cfg, 12).unwrap();
        assert_ne!(a.item_vectors, c.item_vectors);
    }

    #[test]
    fn training_raises_the_ranking_objective() {
        let seqs = toy_sequences();
        let cfg = BprConfig {
            dim: 8,
            epochs: 40,
            ..BprConfig::default()
        };
        let table = train_bpr(&seqs, 6, 8, &cfg, 3).unwrap();
        // user 0 likes items 0-3; items 4-7 are negatives
        let mut correct = 0;
        let mut total = 0;
        for u in 0..3usize {
            for pos in 0..4 {
                for neg in 4..8 {
                    let xu = table.user_vectors.row(u);
                    let s_pos: f64 = xu.iter().zip(table.item(pos)).map(|(a, b)| a * b).sum();
                    let s_neg: f64 = xu
                        .iter()
                        .zip(table.item(neg))
                        .map(|(a, b)| a * b)
                        .sum();
                    if s_pos > s_neg {
                        correct += 1;
                    }
                    total += 1;
                }
            }
        }
        assert!(
            correct as f64 >= 0.9 * total as f64,
            "only {correct}/{total} positive/negative pairs ranked correctly"
        );
    }

    #[test]
    fn every_entity_gets_exactly_one_row() {
        // user 7 and item 9 never appear in training data
        let seqs = vec![(0, vec![0, 1]), (1, vec![1, 2])];
        let table = train_bpr(&seqs, 8, 10, &BprConfig::default(), 5).unwrap();
        assert_eq!(table.item_vectors.nrows(), 10);
        assert_eq!(table.user_vectors.nrows(), 8);
    }

    #[test]
    fn nearest_item_uses_dot_product_with_smallest_id_ties() {
        let mut table = EmbeddingTable {
            dim: 2,
            seed: 0,
            item_vectors: Array2::zeros((4, 2)),
            user_vectors: Array2::zeros((1, 2)),
        };
        table.item_vectors[[0, 0]] = 1.0;
        table.item_vectors[[1, 0]] = 2.0;
        table.item_vectors[[2, 0]] = 2.0; // tie with item 1
        table.item_vectors[[3, 1]] = 5.0; // orthogonal to the query
        let q = [1.0, 0.0];
        assert_eq!(nearest_item(&q, &table, None), Some(1));
        let ex: HashSet<ItemId> = [1].into();
        assert_eq!(nearest_item(&q, &table, Some(&ex)), Some(2));
        let all: HashSet<ItemId> = (0..4).collect();
        assert_eq!(nearest_item(&q, &table, Some(&all)), None);
    }

    #[test]
    fn checkpoint_round_trips_at_f32_precision() {
        let seqs = toy_sequences();
        let cfg = BprConfig {
            epochs: 2,
            ..BprConfig::default()
        };
        let table = train_bpr(&seqs, 6, 8, &cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        table.save(dir.path()).unwrap();
        let loaded = EmbeddingTable::load(dir.path()).unwrap();
        assert_eq!(loaded.dim, table.dim);
        assert_eq!(loaded.seed, table.seed);
        assert_eq!(
            loaded.item_vectors,
            crate::checkpoint::quantize_f32(&table.item_vectors)
        );
        assert_eq!(
            loaded.user_vectors,
            crate::checkpoint::quantize_f32(&table.user_vectors)
        );
    }
}
