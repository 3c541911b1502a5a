//! History perturbation: sample VAE latents around a user's input sequence,
//! decode them back to item sequences, and query the black box on each to
//! build the per-user pair set the causal module fits on.

pub mod vae;

pub use vae::{
    decode_rows_to_items, embed_histories, reconstruction_accuracy, train_vae, VaeConfig,
    VaeGrads, VaeModel,
};

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ItemId, UserId};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::recommender::BlackBox;

/// One (history, black-box output) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedPair {
    pub history: Vec<ItemId>,
    pub output: ItemId,
}

/// All pairs for one user: the original (H^u, Y^u) plus m perturbed pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedPairSet {
    pub user: UserId,
    pub original: PerturbedPair,
    pub perturbed: Vec<PerturbedPair>,
}

impl PerturbedPairSet {
    /// Original pair first, then perturbed pairs in generation order.
    pub fn all_pairs(&self) -> impl Iterator<Item = &PerturbedPair> {
        std::iter::once(&self.original).chain(self.perturbed.iter())
    }

    /// m + 1.
    pub fn len(&self) -> usize {
        self.perturbed.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false // the original pair is always present
    }

    /// Same set restricted to the first `m` perturbed pairs (the original is
    /// always kept); used by the m-sweep.
    pub fn truncated(&self, m: usize) -> PerturbedPairSet {
        PerturbedPairSet {
            user: self.user,
            original: self.original.clone(),
            perturbed: self.perturbed.iter().take(m).cloned().collect(),
        }
    }
}

/// Sample up to `m` distinct perturbed histories around `history`:
/// encode once, then draw z = mu + temperature * std (*) eps and decode.
/// Duplicates and the original history are discarded; sampling stops after
/// `max_attempts` draws even if fewer than m distinct histories were found
/// (with a warning).
pub fn perturb_history(
    model: &VaeModel,
    history: &[ItemId],
    table: &EmbeddingTable,
    m: usize,
    temperature: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<Vec<Vec<ItemId>>> {
    if temperature < 0.0 {
        return Err(Error::Config("temperature must be non-negative".into()));
    }
    if model.embed_dim != table.dim {
        return Err(Error::Model(format!(
            "vae embed_dim {} != embedding table dim {}",
            model.embed_dim, table.dim
        )));
    }
    if history.len() != model.n {
        return Err(Error::Data(format!(
            "history length {} != vae n {}",
            history.len(),
            model.n
        )));
    }

    let x = embed_histories(std::slice::from_ref(&history.to_vec()), table, model.n)?;
    let (mu, lv) = model.encode(x.view());
    let std = lv.mapv(|v| (0.5 * v).exp());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<ItemId>> = HashSet::new();
    let mut out: Vec<Vec<ItemId>> = Vec::with_capacity(m);
    let mut attempts = 0usize;
    const CHUNK: usize = 64;
    while out.len() < m && attempts < max_attempts {
        let batch = CHUNK.min(max_attempts - attempts);
        // eps rows are drawn in row-major order, so the draw sequence does
        // not depend on the chunk size
        let eps = Array2::from_shape_fn((batch, model.latent_dim), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let z = &mu.broadcast((batch, model.latent_dim)).unwrap()
            + &(temperature * &std.broadcast((batch, model.latent_dim)).unwrap() * &eps);
        let decoded = model.decode(z.view());
        for candidate in decode_rows_to_items(&decoded, table, model.n) {
            attempts += 1;
            if out.len() >= m {
                break;
            }
            if candidate.as_slice() == history {
                continue;
            }
            if seen.insert(candidate.clone()) {
                out.push(candidate);
            }
        }
    }
    if out.len() < m {
        log::warn!(
            "perturb_history: only {} of {m} distinct histories after {attempts} draws",
            out.len()
        );
    }
    Ok(out)
}

/// Algorithm core: perturb the user's input sequence and label every history
/// (perturbed and original) with the black box's recommendation.
#[allow(clippy::too_many_arguments)]
pub fn build_pairs(
    user: UserId,
    history: &[ItemId],
    blackbox: &dyn BlackBox,
    model: &VaeModel,
    table: &EmbeddingTable,
    m: usize,
    temperature: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<PerturbedPairSet> {
    let original_output = blackbox.recommend(user, history)?;
    let histories = perturb_history(model, history, table, m, temperature, seed, max_attempts)?;
    let mut perturbed = Vec::with_capacity(histories.len());
    for h in histories {
        let output = blackbox.recommend(user, &h)?;
        perturbed.push(PerturbedPair { history: h, output });
    }
    Ok(PerturbedPairSet {
        user,
        original: PerturbedPair {
            history: history.to_vec(),
            output: original_output,
        },
        perturbed,
    })
}

impl PerturbedPairSet {
    /// One row per pair: comma-joined history, output item, is_original flag.
    /// The original pair is always the first row.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (idx, pair) in self.all_pairs().enumerate() {
            let history = pair
                .history
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(
                out,
                "{history}\t{}\t{}",
                pair.output,
                u8::from(idx == 0)
            )
            .unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, user: UserId) -> Result<PerturbedPairSet> {
        let text = fs::read_to_string(path)?;
        let path_str = path.display().to_string();
        let mut original: Option<PerturbedPair> = None;
        let mut perturbed = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path_str.clone(),
                line: idx + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err("expected 3 columns".into()));
            }
            let history = fields[0]
                .split(',')
                .map(|p| p.trim().parse::<ItemId>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| parse_err(format!("bad history {:?}", fields[0])))?;
            let output: ItemId = fields[1]
                .parse()
                .map_err(|_| parse_err(format!("bad output {:?}", fields[1])))?;
            let pair = PerturbedPair { history, output };
            match fields[2] {
                "1" => original = Some(pair),
                "0" => perturbed.push(pair),
                other => return Err(parse_err(format!("bad is_original flag {other:?}"))),
            }
        }
        let original =
            original.ok_or_else(|| Error::Data(format!("{path_str}: no original pair row")))?;
        Ok(PerturbedPairSet {
            user,
            original,
            perturbed,
        })
    }
}
