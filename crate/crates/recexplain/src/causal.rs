//! Per-user causal dependency fitting and explanation selection.
//!
//! For each user the perturbed pair set D^u is treated as i.i.d. evidence
//! for item-level dependencies theta[(cause, effect)] >= 0. A pair
//! (H, Y) has likelihood
//!
//!   P(Y | H) = sigma( sum_{j=1..n} theta[H[j], Y] * gamma^(n-j) )
//!
//! i.e. each history position votes for its (item, output) dependency with
//! a recency weight gamma^(n-j). Fitting maximizes the L2-penalized
//! log-likelihood over D^u by projected full-batch gradient ascent from an
//! all-zero start; the explanation is then read off the fitted weights with
//! a three-step selection.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};
use crate::perturbation::PerturbedPairSet;

/// Fitted dependency weights for one user, with fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalDependencies {
    pub user: UserId,
    /// Sparse (cause item, effect item) -> weight; keys are exactly the
    /// (input item, output item) combinations co-occurring in some pair.
    pub theta: BTreeMap<(ItemId, ItemId), f64>,
    pub gamma: f64,
    /// Final penalized log-likelihood.
    pub objective: f64,
    pub iterations: usize,
}

/// "Because you interacted with `cause`, the model recommends `effect`."
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CausalExplanation {
    pub user: UserId,
    /// Always a member of the original history.
    pub cause: ItemId,
    /// Always the original recommendation Y^u.
    pub effect: ItemId,
    /// Fitted theta value for (cause, effect).
    pub dependency: f64,
    /// 1-based position within the top-k of step 2.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Time-decay factor in (0, 1].
    pub gamma: f64,
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once an accepted step improves the objective by less than this.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            gamma: 0.7,
            l2_lambda: 0.01,
            learning_rate: 0.1,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

/// Eq.-(1)-style likelihood that `output` follows `history` under the given
/// dependency weights. Missing theta entries read as 0; with an all-zero
/// table this is exactly 0.5.
pub fn predict_prob(
    history: &[ItemId],
    output: ItemId,
    theta: &BTreeMap<(ItemId, ItemId), f64>,
    gamma: f64,
) -> f64 {
    let n = history.len();
    let mut s = 0.0;
    for (idx, &h) in history.iter().enumerate() {
        let weight = gamma.powi((n - 1 - idx) as i32);
        if let Some(&t) = theta.get(&(h, output)) {
            s += t * weight;
        }
    }
    sigmoid(s)
}

/// The penalized log-likelihood  sum log predict_prob - l2_lambda ||theta||^2
/// and its gradient at `theta`, over the pair set's co-occurrence keys
/// (missing entries read as 0). This is exactly the quantity driving
/// `fit_dependencies`, exposed so the gradient can be validated externally
/// against finite differences.
pub fn objective_and_gradient(
    pairs: &PerturbedPairSet,
    theta: &BTreeMap<(ItemId, ItemId), f64>,
    gamma: f64,
    l2_lambda: f64,
) -> (f64, BTreeMap<(ItemId, ItemId), f64>) {
    let mut objective = 0.0;
    let mut grad: BTreeMap<(ItemId, ItemId), f64> = BTreeMap::new();
    for pair in pairs.all_pairs() {
        let n = pair.history.len();
        let mut s = 0.0;
        for (idx, &h) in pair.history.iter().enumerate() {
            let weight = gamma.powi((n - 1 - idx) as i32);
            s += theta.get(&(h, pair.output)).copied().unwrap_or(0.0) * weight;
        }
        objective += log_sigmoid(s);
        let e = sigmoid(-s); // 1 - sigma(s)
        for (idx, &h) in pair.history.iter().enumerate() {
            let weight = gamma.powi((n - 1 - idx) as i32);
            *grad.entry((h, pair.output)).or_insert(0.0) += e * weight;
        }
    }
    for (key, g) in &mut grad {
        let t = theta.get(key).copied().unwrap_or(0.0);
        *g -= 2.0 * l2_lambda * t;
    }
    objective -= l2_lambda * theta.values().map(|t| t * t).sum::<f64>();
    (objective, grad)
}

/// Maximize  sum over pairs of log predict_prob  -  l2_lambda * ||theta||^2
/// by full-batch gradient ascent with backtracking (the step size halves
/// whenever a step would decrease the objective, so the objective is
/// non-decreasing across accepted steps) and non-negativity projection.
/// theta starts at exactly zero.
pub fn fit_dependencies(pairs: &PerturbedPairSet, config: &FitConfig) -> Result<CausalDependencies> {
    if !(config.gamma > 0.0 && config.gamma <= 1.0) {
        return Err(Error::Config(format!(
            "gamma must be in (0, 1], got {}",
            config.gamma
        )));
    }

    // index the (cause, effect) combinations present in the pair set
    let mut key_set: BTreeSet<(ItemId, ItemId)> = BTreeSet::new();
    for pair in pairs.all_pairs() {
        for &h in &pair.history {
            key_set.insert((h, pair.output));
        }
    }
    let keys: Vec<(ItemId, ItemId)> = key_set.into_iter().collect();
    let key_index: BTreeMap<(ItemId, ItemId), usize> = keys
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, i))
        .collect();

    // per record: (key index, recency weight) for each history position
    let records: Vec<Vec<(usize, f64)>> = pairs
        .all_pairs()
        .map(|pair| {
            let n = pair.history.len();
            pair.history
                .iter()
                .enumerate()
                .map(|(idx, &h)| {
                    let weight = config.gamma.powi((n - 1 - idx) as i32);
                    (key_index[&(h, pair.output)], weight)
                })
                .collect()
        })
        .collect();

    let objective = |theta: &[f64]| -> f64 {
        let mut obj = 0.0;
        for rec in &records {
            let s: f64 = rec.iter().map(|&(k, w)| theta[k] * w).sum();
            obj += log_sigmoid(s);
        }
        obj - config.l2_lambda * theta.iter().map(|t| t * t).sum::<f64>()
    };

    let mut theta = vec![0.0f64; keys.len()];
    let mut obj = objective(&theta);
    let mut lr = config.learning_rate;
    let mut iterations = 0;

    for iter in 0..config.max_iters {
        iterations = iter + 1;

        let mut grad = vec![0.0f64; keys.len()];
        for rec in &records {
            let s: f64 = rec.iter().map(|&(k, w)| theta[k] * w).sum();
            let e = sigmoid(-s); // 1 - sigma(s)
            for &(k, w) in rec {
                grad[k] += e * w;
            }
        }
        for (g, t) in grad.iter_mut().zip(&theta) {
            *g -= 2.0 * config.l2_lambda * t;
        }

        let candidate: Vec<f64> = theta
            .iter()
            .zip(&grad)
            .map(|(t, g)| (t + lr * g).max(0.0))
            .collect();
        let cand_obj = objective(&candidate);
        if !cand_obj.is_finite() {
            return Err(Error::Model(format!(
                "causal fit diverged for user {} at iteration {}: objective = {cand_obj}",
                pairs.user, iterations
            )));
        }
        if cand_obj < obj {
            lr *= 0.5;
            if lr < 1e-15 {
                break;
            }
            continue;
        }
        let delta = cand_obj - obj;
        theta = candidate;
        obj = cand_obj;
        if delta < config.tol {
            break;
        }
    }

    Ok(CausalDependencies {
        user: pairs.user,
        theta: keys.into_iter().zip(theta).collect(),
        gamma: config.gamma,
        objective: obj,
        iterations,
    })
}

/// Three-step explanation selection:
/// 1. keep theta entries whose effect is the original recommendation Y^u
///    (causes may come from perturbed sequences, not just the history);
/// 2. sort descending by theta — ties broken by later original-history
///    position first (causes absent from the history sort last), then by
///    smaller item id — and take the top k;
/// 3. return the highest-ranked entry whose cause is in the original
///    history, or none.
pub fn select_explanation(
    deps: &CausalDependencies,
    original_history: &[ItemId],
    original_output: ItemId,
    k: usize,
) -> Option<CausalExplanation> {
    let mut candidates: Vec<(ItemId, f64)> = deps
        .theta
        .iter()
        .filter(|&(&(_, effect), _)| effect == original_output)
        .map(|(&(cause, _), &theta)| (cause, theta))
        .collect();

    // most recent occurrence wins for repeated items; absent items get -1
    let position = |item: ItemId| -> i64 {
        original_history
            .iter()
            .rposition(|&h| h == item)
            .map_or(-1, |p| p as i64)
    };
    candidates.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| position(b.0).cmp(&position(a.0)))
            .then_with(|| a.0.cmp(&b.0))
    });

    let history_set: HashSet<ItemId> = original_history.iter().copied().collect();
    for (rank0, &(cause, theta)) in candidates.iter().take(k).enumerate() {
        if history_set.contains(&cause) {
            return Some(CausalExplanation {
                user: deps.user,
                cause,
                effect: original_output,
                dependency: theta,
                rank: rank0 + 1,
            });
        }
    }
    None
}
