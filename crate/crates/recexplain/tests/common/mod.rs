//! Shared helpers for the integration tests: synthetic interaction logs and
//! small-but-real pipeline configs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recexplain::config::{BlackBoxKind, PipelineConfig};

/// Write a TSV interaction log: `n_users` users, `per_user` interactions
/// each, items drawn uniformly from `0..n_items`, strictly increasing
/// timestamps per user. Deterministic in `seed`.
pub fn write_synthetic_tsv(
    path: &Path,
    n_users: usize,
    n_items: u32,
    per_user: usize,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for user in 0..n_users {
        for step in 0..per_user {
            let item = rng.random_range(0..n_items);
            text.push_str(&format!("{user}\t{item}\t{}\n", 1000 + step));
        }
    }
    fs::write(path, text).unwrap();
}

/// A config sized for test runs: tiny embedding/VAE, markov black box,
/// m=15 perturbations, k=3.
pub fn small_config(dataset: PathBuf, out_dir: PathBuf) -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.dataset.path = dataset;
    config.out_dir = out_dir;
    config.seed = 7;
    config.blackbox.kind = BlackBoxKind::Markov;
    config.embedding.dim = 8;
    config.embedding.epochs = 15;
    config.vae.latent_dim = 4;
    config.vae.hidden_dim = 32;
    config.vae.epochs = 60;
    config.vae.batch_size = 16;
    config.explanation.m = 15;
    config.explanation.k = 3;
    config.fit.max_iters = 300;
    config
}
