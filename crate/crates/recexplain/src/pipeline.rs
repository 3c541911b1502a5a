//! End-to-end orchestration: load → split → embed → train black box →
//! train VAE → perturb → fit θ → select → verify → report.
//!
//! Every training stage persists its artifacts under the output directory
//! together with a content fingerprint (a hash of the stage's own
//! configuration chained with its upstream fingerprints). A rerun with the
//! same config reuses cached artifacts; changing a parameter invalidates
//! exactly the stages downstream of it — notably, changing the decay γ or
//! the candidate count k re-fits from the cached pair sets without
//! re-perturbing, while changing m or the temperature rebuilds the pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::causal::{CausalExplanation, FitConfig};
use crate::config::{BlackBoxKind, PipelineConfig};
use crate::data::{
    chronological_split, filter_kcore, load_interactions, ItemId, SplitDataset, UserId,
};
use crate::embedding::{train_bpr, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluation::{
    association_explain, chebyshev_note, explain_and_verify_user, fidelity,
    mine_association_rules, sweep, verified_percentage, SweepParameter, SweepRow,
    VerificationResult,
};
use crate::math::derive_seed;
use crate::perturbation::{
    build_pairs, reconstruction_accuracy, train_vae, PerturbedPairSet, VaeModel,
};
use crate::recommender::{
    external_model, popularity_model, train_fpmc, train_markov, BlackBox, TrainedBlackBox,
};

/// Distinct seed streams per randomized stage, so e.g. changing the embedding
/// dimension never shifts the perturbation draws.
const SEED_EMBEDDING: u64 = 1;
const SEED_BLACKBOX: u64 = 2;
const SEED_VAE: u64 = 3;
const SEED_PERTURB: u64 = 4;

/// Per-user result of the explanation stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UserOutcome {
    pub user: UserId,
    pub explanation: Option<CausalExplanation>,
    pub verification: Option<VerificationResult>,
}

/// The final evaluation summary; every field is always present.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub model: String,
    pub dataset: String,
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub m: usize,
    pub gamma: f64,
    pub temperature: f64,
    pub seed: u64,
    pub explained_users: usize,
    pub fidelity: f64,
    pub verified_percentage: f64,
    /// Association-rule baseline fidelity, one entry per interestingness
    /// measure ("support", "confidence", "lift").
    pub association_fidelity: BTreeMap<String, f64>,
    pub vae_reconstruction: f64,
    pub sampling_note: String,
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

/// Wrap a stage result so failures name the stage that aborted the run.
/// Already-named failures keep the innermost (actually failing) stage.
fn in_stage<T>(stage: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    })
}

/// Hex SHA-256 over the null-separated parts.
fn fingerprint(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

/// Load-or-rebuild around one stage directory. The fingerprint file is
/// written only after the artifacts, so an interrupted build is rebuilt on
/// the next run; an unreadable cache is rebuilt with a warning.
fn cached<T>(
    dir: &Path,
    fp: &str,
    load: impl FnOnce(&Path) -> Result<T>,
    build: impl FnOnce() -> Result<T>,
    save: impl FnOnce(&T, &Path) -> Result<()>,
) -> Result<T> {
    let fp_path = dir.join("fingerprint");
    if let Ok(existing) = fs::read_to_string(&fp_path) {
        if existing == fp {
            match load(dir) {
                Ok(value) => {
                    log::info!("reusing cached artifacts in {}", dir.display());
                    return Ok(value);
                }
                Err(e) => {
                    log::warn!("cache in {} unreadable ({e}); rebuilding", dir.display())
                }
            }
        }
    }
    let value = build()?;
    let _ = fs::remove_dir_all(dir);
    fs::create_dir_all(dir)?;
    save(&value, dir)?;
    fs::write(&fp_path, fp)?;
    Ok(value)
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Pipeline> {
        config.validate()?;
        Ok(Pipeline { config })
    }

    fn out(&self) -> &Path {
        &self.config.out_dir
    }

    // ---- fingerprints (content-addressed stage cache keys) ----

    fn split_fp(&self) -> Result<String> {
        Ok(fingerprint(&["split/v1", &json(&self.config.dataset)?]))
    }

    fn embedding_fp(&self) -> Result<String> {
        Ok(fingerprint(&[
            "embedding/v1",
            &self.split_fp()?,
            &json(&self.config.embedding)?,
            &self.config.seed.to_string(),
        ]))
    }

    fn blackbox_fp(&self) -> Result<String> {
        let mut parts = vec![
            "blackbox/v1".to_string(),
            self.split_fp()?,
            json(&self.config.blackbox)?,
            self.config.seed.to_string(),
        ];
        match self.config.blackbox.kind {
            BlackBoxKind::Fpmc => parts.push(json(&self.config.fpmc)?),
            // an external table is whatever the file says it is
            BlackBoxKind::External => {
                let path = self.config.blackbox.external_path.as_ref().unwrap();
                parts.push(fingerprint(&[&crate::error::read_file(path)?]));
            }
            BlackBoxKind::Markov | BlackBoxKind::Popularity => {}
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        Ok(fingerprint(&refs))
    }

    fn vae_fp(&self) -> Result<String> {
        Ok(fingerprint(&[
            "vae/v1",
            &self.embedding_fp()?,
            &json(&self.config.vae)?,
            &self.config.seed.to_string(),
        ]))
    }

    /// Depends on m, temperature, and the attempt budget — but deliberately
    /// not on γ or k, which only affect fitting/selection.
    fn pairs_fp(&self) -> Result<String> {
        Ok(fingerprint(&[
            "pairs/v1",
            &self.vae_fp()?,
            &self.blackbox_fp()?,
            &self.config.explanation.m.to_string(),
            &self.config.explanation.temperature.to_string(),
            &self.config.max_attempts().to_string(),
            &self.config.seed.to_string(),
        ]))
    }

    // ---- stages ----

    /// Load, filter, and split the dataset.
    pub fn prepare(&self) -> Result<SplitDataset> {
        in_stage("prepare", self.prepare_inner())
    }

    fn prepare_inner(&self) -> Result<SplitDataset> {
        let d = &self.config.dataset;
        cached(
            &self.out().join("split"),
            &self.split_fp()?,
            SplitDataset::load,
            || {
                let raw = load_interactions(&d.path, d.format)?;
                let filtered =
                    filter_kcore(&raw, d.min_user_interactions, d.min_item_interactions)?;
                let split = chronological_split(&filtered, d.test_len, d.n)?;
                log::info!(
                    "split: {} retained users, {} dropped, {} items",
                    split.retained_users(),
                    split.dropped_users.len(),
                    split.n_items
                );
                Ok(split)
            },
            |split, dir| split.save(dir),
        )
    }

    /// Item/user embeddings for the perturbation model.
    pub fn train_embeddings(&self) -> Result<EmbeddingTable> {
        let split = self.prepare()?;
        in_stage("train-embeddings", self.embeddings_for(&split))
    }

    fn embeddings_for(&self, split: &SplitDataset) -> Result<EmbeddingTable> {
        cached(
            &self.out().join("embeddings"),
            &self.embedding_fp()?,
            EmbeddingTable::load,
            || {
                train_bpr(
                    &split.train_sequences(),
                    split.n_users,
                    split.n_items,
                    &self.config.embedding,
                    derive_seed(self.config.seed, SEED_EMBEDDING),
                )
            },
            |table, dir| table.save(dir),
        )
    }

    /// The recommender under explanation.
    pub fn train_blackbox(&self) -> Result<TrainedBlackBox> {
        let split = self.prepare()?;
        in_stage("train-blackbox", self.blackbox_for(&split))
    }

    fn blackbox_for(&self, split: &SplitDataset) -> Result<TrainedBlackBox> {
        cached(
            &self.out().join("blackbox"),
            &self.blackbox_fp()?,
            TrainedBlackBox::load,
            || {
                let sequences = split.train_sequences();
                Ok(match self.config.blackbox.kind {
                    BlackBoxKind::Fpmc => TrainedBlackBox::Fpmc(train_fpmc(
                        &sequences,
                        split.n_users,
                        split.n_items,
                        &self.config.fpmc,
                        derive_seed(self.config.seed, SEED_BLACKBOX),
                    )?),
                    BlackBoxKind::Markov => {
                        TrainedBlackBox::Markov(train_markov(&sequences, split.n_items)?)
                    }
                    BlackBoxKind::Popularity => {
                        TrainedBlackBox::Popularity(popularity_model(&sequences, split.n_items)?)
                    }
                    BlackBoxKind::External => TrainedBlackBox::External(external_model(
                        self.config.blackbox.external_path.as_ref().unwrap(),
                    )?),
                })
            },
            |blackbox, dir| blackbox.save(dir),
        )
    }

    /// The perturbation model, trained to reconstruct the test-input
    /// histories it will later perturb.
    pub fn train_vae(&self) -> Result<VaeModel> {
        let split = self.prepare()?;
        let table = in_stage("train-embeddings", self.embeddings_for(&split))?;
        in_stage("train-vae", self.vae_for(&split, &table))
    }

    fn vae_for(&self, split: &SplitDataset, table: &EmbeddingTable) -> Result<VaeModel> {
        cached(
            &self.out().join("vae"),
            &self.vae_fp()?,
            VaeModel::load,
            || {
                let histories: Vec<Vec<ItemId>> =
                    split.splits.values().map(|s| s.input.clone()).collect();
                train_vae(
                    &histories,
                    table,
                    &self.config.vae,
                    derive_seed(self.config.seed, SEED_VAE),
                )
            },
            |model, dir| model.save(dir),
        )
    }

    /// Perturb every user's input history and label everything with the
    /// black box — the expensive, γ-independent part of the run.
    pub fn build_pair_cache(&self) -> Result<BTreeMap<UserId, PerturbedPairSet>> {
        let split = self.prepare()?;
        let table = in_stage("train-embeddings", self.embeddings_for(&split))?;
        let blackbox = in_stage("train-blackbox", self.blackbox_for(&split))?;
        let vae = in_stage("train-vae", self.vae_for(&split, &table))?;
        in_stage("perturb", self.pairs_for(&split, &blackbox, &vae, &table))
    }

    fn pairs_for(
        &self,
        split: &SplitDataset,
        blackbox: &TrainedBlackBox,
        vae: &VaeModel,
        table: &EmbeddingTable,
    ) -> Result<BTreeMap<UserId, PerturbedPairSet>> {
        let users: Vec<UserId> = split.splits.keys().copied().collect();
        cached(
            &self.out().join("pairs"),
            &self.pairs_fp()?,
            |dir| load_pair_files(dir, &users),
            || {
                log::info!("{}", chebyshev_note(self.config.explanation.m));
                let inputs: Vec<(UserId, Vec<ItemId>)> = split
                    .splits
                    .iter()
                    .map(|(&u, s)| (u, s.input.clone()))
                    .collect();
                self.with_pool(|| {
                    build_all_pairs(
                        &inputs,
                        blackbox,
                        vae,
                        table,
                        self.config.explanation.m,
                        self.config.explanation.temperature,
                        self.config.max_attempts(),
                        derive_seed(self.config.seed, SEED_PERTURB),
                    )
                })
            },
            save_pair_files,
        )
    }

    /// Fit θ, select, and verify for every user; persists explanations.tsv
    /// and verification.tsv.
    pub fn explain(&self) -> Result<Vec<UserOutcome>> {
        let pairs = self.build_pair_cache()?;
        in_stage("explain", self.explain_for(&pairs))
    }

    fn explain_for(
        &self,
        pairs: &BTreeMap<UserId, PerturbedPairSet>,
    ) -> Result<Vec<UserOutcome>> {
        let outcomes = self.with_pool(|| {
            explain_all(pairs, &self.config.fit, self.config.explanation.k)
        })?;
        fs::create_dir_all(self.out())?;
        fs::write(
            self.out().join("explanations.tsv"),
            explanations_tsv(&outcomes),
        )?;
        fs::write(
            self.out().join("verification.tsv"),
            verification_tsv(&outcomes),
        )?;
        Ok(outcomes)
    }

    /// Full evaluation: metrics plus the association-rule baseline; writes
    /// report.json and returns the report.
    pub fn evaluate(&self) -> Result<RunReport> {
        let split = self.prepare()?;
        let table = in_stage("train-embeddings", self.embeddings_for(&split))?;
        let blackbox = in_stage("train-blackbox", self.blackbox_for(&split))?;
        let vae = in_stage("train-vae", self.vae_for(&split, &table))?;
        let pairs = in_stage("perturb", self.pairs_for(&split, &blackbox, &vae, &table))?;
        let outcomes = in_stage("explain", self.explain_for(&pairs))?;
        in_stage(
            "evaluate",
            self.evaluate_for(&split, &table, &vae, &blackbox, &pairs, &outcomes),
        )
    }

    fn evaluate_for(
        &self,
        split: &SplitDataset,
        table: &EmbeddingTable,
        vae: &VaeModel,
        blackbox: &TrainedBlackBox,
        pairs: &BTreeMap<UserId, PerturbedPairSet>,
        outcomes: &[UserOutcome],
    ) -> Result<RunReport> {
        let n_users = pairs.len();
        let explanations: Vec<Option<CausalExplanation>> =
            outcomes.iter().map(|o| o.explanation.clone()).collect();
        let verifications: Vec<VerificationResult> = outcomes
            .iter()
            .filter_map(|o| o.verification.clone())
            .collect();

        // Association baseline: one transaction per user, the input history
        // plus the model's recommendation for it.
        let transactions: Vec<BTreeSet<ItemId>> = pairs
            .values()
            .map(|set| {
                let mut t: BTreeSet<ItemId> = set.original.history.iter().copied().collect();
                t.insert(set.original.output);
                t
            })
            .collect();
        let rules = mine_association_rules(&transactions, &self.config.association)?;
        let mut association_fidelity = BTreeMap::new();
        for (name, ranked) in [
            ("support", &rules.by_support),
            ("confidence", &rules.by_confidence),
            ("lift", &rules.by_lift),
        ] {
            let explained = pairs
                .values()
                .filter(|set| {
                    association_explain(&set.original.history, set.original.output, ranked)
                        .is_some()
                })
                .count();
            association_fidelity.insert(name.to_string(), explained as f64 / n_users as f64);
        }

        let inputs: Vec<Vec<ItemId>> = split.splits.values().map(|s| s.input.clone()).collect();
        let report = RunReport {
            model: blackbox.name().to_string(),
            dataset: self.config.dataset.path.display().to_string(),
            n_users,
            n_items: split.n_items,
            k: self.config.explanation.k,
            m: self.config.explanation.m,
            gamma: self.config.fit.gamma,
            temperature: self.config.explanation.temperature,
            seed: self.config.seed,
            explained_users: explanations.iter().filter(|e| e.is_some()).count(),
            fidelity: fidelity(&explanations, n_users)?,
            verified_percentage: verified_percentage(&verifications),
            association_fidelity,
            vae_reconstruction: reconstruction_accuracy(vae, &inputs, table)?,
            sampling_note: chebyshev_note(self.config.explanation.m),
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(self.out().join("report.json"), text)?;
        Ok(report)
    }

    /// The whole of the algorithm, end to end.
    pub fn run_all(&self) -> Result<RunReport> {
        self.evaluate()
    }

    /// Parameter study over γ or m, reusing the cached pair sets (the γ
    /// sweep refits only; the m sweep truncates the cached perturbations).
    pub fn run_sweep(
        &self,
        parameter: SweepParameter,
        values: &[f64],
    ) -> Result<Vec<SweepRow>> {
        let pairs = self.build_pair_cache()?;
        in_stage("sweep", self.sweep_for(parameter, values, &pairs))
    }

    fn sweep_for(
        &self,
        parameter: SweepParameter,
        values: &[f64],
        pairs: &BTreeMap<UserId, PerturbedPairSet>,
    ) -> Result<Vec<SweepRow>> {
        let rows = self.with_pool(|| {
            sweep(
                parameter,
                values,
                pairs,
                &self.config.fit,
                self.config.explanation.k,
            )
        })?;
        let name = match parameter {
            SweepParameter::Gamma => "sweep_gamma.tsv",
            SweepParameter::M => "sweep_m.tsv",
        };
        fs::create_dir_all(self.out())?;
        fs::write(self.out().join(name), sweep_tsv(&rows))?;
        Ok(rows)
    }

    /// Run `f` on a dedicated pool when a thread count is configured.
    fn with_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        if self.config.threads == 0 {
            return f();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        pool.install(f)
    }
}

/// Perturb + label every user, in parallel, with per-user seeds derived from
/// the stage seed so the schedule cannot affect the draws. Results come back
/// in input order.
#[allow(clippy::too_many_arguments)]
pub fn build_all_pairs(
    inputs: &[(UserId, Vec<ItemId>)],
    blackbox: &dyn BlackBox,
    vae: &VaeModel,
    table: &EmbeddingTable,
    m: usize,
    temperature: f64,
    max_attempts: usize,
    stage_seed: u64,
) -> Result<BTreeMap<UserId, PerturbedPairSet>> {
    let sets: Vec<(UserId, PerturbedPairSet)> = inputs
        .par_iter()
        .map(|(user, history)| {
            let set = build_pairs(
                *user,
                history,
                blackbox,
                vae,
                table,
                m,
                temperature,
                derive_seed(stage_seed, u64::from(*user)),
                max_attempts,
            )?;
            Ok((*user, set))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sets.into_iter().collect())
}

/// Fit, select, and verify every user (parallel, user-id order preserved).
pub fn explain_all(
    pairs_by_user: &BTreeMap<UserId, PerturbedPairSet>,
    fit: &FitConfig,
    k: usize,
) -> Result<Vec<UserOutcome>> {
    pairs_by_user
        .par_iter()
        .map(|(&user, pairs)| {
            let (explanation, verification) = explain_and_verify_user(pairs, fit, k)?;
            Ok(UserOutcome {
                user,
                explanation,
                verification,
            })
        })
        .collect()
}

fn pair_file(dir: &Path, user: UserId) -> PathBuf {
    dir.join(format!("user_{user}.tsv"))
}

fn save_pair_files(pairs: &BTreeMap<UserId, PerturbedPairSet>, dir: &Path) -> Result<()> {
    for (&user, set) in pairs {
        set.save(&pair_file(dir, user))?;
    }
    Ok(())
}

fn load_pair_files(dir: &Path, users: &[UserId]) -> Result<BTreeMap<UserId, PerturbedPairSet>> {
    users
        .iter()
        .map(|&user| Ok((user, PerturbedPairSet::load(&pair_file(dir, user), user)?)))
        .collect()
}

/// One row per user: user, explained flag, cause, effect, θ, rank.
/// Unexplained users keep the row with `-` placeholders so the file always
/// has exactly one line per user.
fn explanations_tsv(outcomes: &[UserOutcome]) -> String {
    let mut text = String::from("user\texplained\tcause\teffect\tdependency\trank\n");
    for o in outcomes {
        match &o.explanation {
            Some(e) => text.push_str(&format!(
                "{}\t1\t{}\t{}\t{}\t{}\n",
                o.user, e.cause, e.effect, e.dependency, e.rank
            )),
            None => text.push_str(&format!("{}\t0\t-\t-\t-\t-\n", o.user)),
        }
    }
    text
}

/// One row per verified rule, with the exact counts behind both
/// do-probability estimates.
fn verification_tsv(outcomes: &[UserOutcome]) -> String {
    let mut text = String::from(
        "user\tcause\teffect\tp_do_num\tp_do_den\tp_not_num\tp_not_den\tverified\tundefined\n",
    );
    for o in outcomes {
        if let Some(v) = &o.verification {
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                v.user,
                v.cause,
                v.effect,
                v.p_do_cause.numerator,
                v.p_do_cause.denominator,
                v.p_do_not_cause.numerator,
                v.p_do_not_cause.denominator,
                u8::from(v.verified),
                u8::from(v.undefined_counterfactual),
            ));
        }
    }
    text
}

fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut text = String::from("value\tfidelity\tverified_percentage\n");
    for row in rows {
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            row.value, row.fidelity, row.verified_percentage
        ));
    }
    text
}
