//! Exact value functions, the closed-form optimal policy and consistency checks.

mod policies;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::reward::RewardFn;
use crate::scorer::{Gradient, ParamId, PrefixScorer, TrainableScorer};
use crate::seqmodel::{BaseModel, Context, PromptSet, Token};

pub use policies::{
    base_distribution, best_of_k_distribution, blockwise_distribution, enumerate_blocks,
    selection_probabilities, sequence_kl, sequence_reward, tokenwise_distribution,
    SequenceDistribution,
};

/// `V*(ctx)` for every reachable context of a set of prompts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueTable {
    values: BTreeMap<Context, f64>,
}

impl ValueTable {
    /// Backward induction over the decoding tree of each prompt.
    pub fn build(model: &BaseModel, reward: &RewardFn, prompts: &PromptSet) -> Result<Self> {
        let mut values = BTreeMap::new();
        let eos = model.eos();
        for (prompt, _) in prompts.iter() {
            let levels = model.enumerate_contexts(prompt)?;
            for level in levels.iter().rev() {
                for ctx in level {
                    let v = if ctx.is_terminated(eos) {
                        reward.terminal_reward(&ctx.prompt, &ctx.prefix)?
                    } else {
                        let dist = model.next_token_dist(ctx)?;
                        dist.probs()
                            .iter()
                            .enumerate()
                            .filter(|(_, p)| **p > 0.0)
                            .map(|(z, p)| p * values[&ctx.child(z)])
                            .sum()
                    };
                    values.insert(ctx.clone(), v);
                }
            }
        }
        Ok(ValueTable { values })
    }

    pub fn get(&self, ctx: &Context) -> Option<f64> {
        self.values.get(ctx).copied()
    }

    pub fn insert(&mut self, ctx: Context, value: f64) {
        self.values.insert(ctx, value);
    }

    pub fn remove(&mut self, ctx: &Context) -> Option<f64> {
        self.values.remove(ctx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Context, f64)> {
        self.values.iter().map(|(c, v)| (c, *v))
    }

    /// JSON object from context keys to values.
    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<String, f64> = self.values.iter().map(|(c, v)| (c.key(), *v)).collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
        let values = map
            .into_iter()
            .map(|(k, v)| Ok((Context::from_key(&k)?, v)))
            .collect::<Result<_>>()?;
        Ok(ValueTable { values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}

/// `V*(ctx)` by direct recursion over the subtree.
pub fn exact_value(model: &BaseModel, reward: &RewardFn, ctx: &Context) -> Result<f64> {
    if ctx.is_terminated(model.eos()) {
        return reward.terminal_reward(&ctx.prompt, &ctx.prefix);
    }
    let dist = model.next_token_dist(ctx)?;
    let mut v = 0.0;
    for (z, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            v += p * exact_value(model, reward, &ctx.child(z))?;
        }
    }
    Ok(v)
}

fn check_policy(policy: &Distribution, model: &BaseModel) -> Result<()> {
    if policy.len() != model.vocab().len() {
        return Err(Error::VocabMismatch {
            expected: format!("{} tokens", model.vocab().len()),
            found: format!("{} tokens", policy.len()),
        });
    }
    Ok(())
}

/// `A(ctx; π) = Σ_z π(z) V*([ctx, z]) - V*(ctx)`.
pub fn advantage(
    model: &BaseModel,
    reward: &RewardFn,
    ctx: &Context,
    policy: &Distribution,
) -> Result<f64> {
    check_policy(policy, model)?;
    let mut next = 0.0;
    for (z, &q) in policy.probs().iter().enumerate() {
        if q > 0.0 {
            next += q * exact_value(model, reward, &ctx.child(z))?;
        }
    }
    Ok(next - exact_value(model, reward, ctx)?)
}

/// `KL(π(· | ctx) ‖ π_ref(· | ctx))`; `+inf` when π puts mass where π_ref has none.
pub fn kl_next(policy: &Distribution, model: &BaseModel, ctx: &Context) -> Result<f64> {
    check_policy(policy, model)?;
    let base = model.next_token_dist(ctx)?;
    Ok(kl_between(policy, &base))
}

pub(crate) fn kl_between(policy: &Distribution, base: &Distribution) -> f64 {
    let mut kl = 0.0;
    for (z, &q) in policy.probs().iter().enumerate() {
        if q > 0.0 {
            let lp = base.log_prob(z);
            if lp == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            kl += q * (policy.log_prob(z) - lp);
        }
    }
    kl.max(0.0)
}

/// `J_λ(ctx; π) = λ A(ctx; π) - KL(π ‖ π_ref)`.
pub fn objective_j(
    lambda: f64,
    model: &BaseModel,
    reward: &RewardFn,
    ctx: &Context,
    policy: &Distribution,
) -> Result<f64> {
    let kl = kl_next(policy, model, ctx)?;
    if kl.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(lambda * advantage(model, reward, ctx, policy)? - kl)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// `π*(z | ctx) ∝ π_ref(z | ctx) · exp(λ V([ctx, z]))`.
pub fn optimal_policy_closed_form(
    lambda: f64,
    model: &BaseModel,
    scorer: &dyn PrefixScorer,
    ctx: &Context,
) -> Result<Distribution> {
    check_lambda(lambda)?;
    let base = model.next_token_dist(ctx)?;
    let logits = (0..base.len())
        .map(|z| {
            let lp = base.log_prob(z);
            if lp == f64::NEG_INFINITY {
                return Ok(lp);
            }
            let v = scorer.score(&ctx.child(z));
            if !v.is_finite() {
                return Err(Error::Precondition(format!(
                    "scorer returned {v} at {}",
                    ctx.child(z)
                )));
            }
            Ok(lp + lambda * v)
        })
        .collect::<Result<Vec<f64>>>()?;
    Distribution::from_logits(&logits)
}

/// Settings of the numeric maximizer of `J_λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericConfig {
    pub step: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for NumericConfig {
    fn default() -> Self {
        NumericConfig {
            step: 0.5,
            max_iterations: 100_000,
            tolerance: 1e-9,
        }
    }
}

/// Maximizes `J_λ(ctx; ·)` over the simplex by exponentiated gradient, without using
/// the closed form. Fails with [`Error::NonConvergence`] carrying the best iterate.
pub fn optimal_policy_numeric(
    lambda: f64,
    model: &BaseModel,
    reward: &RewardFn,
    ctx: &Context,
    cfg: &NumericConfig,
) -> Result<Distribution> {
    check_lambda(lambda)?;
    let base = model.next_token_dist(ctx)?;
    let support: Vec<Token> = (0..base.len()).filter(|&z| base.prob(z) > 0.0).collect();
    let values = support
        .iter()
        .map(|&z| exact_value(model, reward, &ctx.child(z)))
        .collect::<Result<Vec<f64>>>()?;
    let n = base.len();
    let mut logits = vec![f64::NEG_INFINITY; n];
    for &z in &support {
        logits[z] = 0.0;
    }
    let mut current = Distribution::from_logits(&logits)?;
    let mut best = (f64::INFINITY, current.clone());
    for _ in 0..cfg.max_iterations {
        let grad: Vec<f64> = support
            .iter()
            .zip(&values)
            .map(|(&z, v)| lambda * v - (current.log_prob(z) - base.log_prob(z)) - 1.0)
            .collect();
        let mean: f64 = support
            .iter()
            .zip(&grad)
            .map(|(&z, g)| current.prob(z) * g)
            .sum();
        let norm = grad.iter().map(|g| (g - mean).powi(2)).sum::<f64>().sqrt();
        if norm < best.0 {
            best = (norm, current.clone());
        }
        if norm <= cfg.tolerance {
            return Ok(current);
        }
        for (&z, g) in support.iter().zip(&grad) {
            logits[z] = current.log_prob(z) + cfg.step * g;
        }
        current = Distribution::from_logits(&logits)?;
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iterations,
        grad_norm: best.0,
        best: Box::new(best.1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellmanReport {
    pub max_residual: f64,
    /// Context with the largest residual; the deepest one on ties.
    pub worst: Option<Context>,
    pub checked: usize,
}

/// Checks `V(ctx) = Σ_z π_ref(z | ctx) V([ctx, z])` on non-terminal contexts and
/// `V(ctx) = r` on terminal ones, for every reachable context of the prompts found
/// in `table`.
pub fn check_bellman(
    model: &BaseModel,
    reward: &RewardFn,
    table: &ValueTable,
) -> Result<BellmanReport> {
    let eos = model.eos();
    let prompts: BTreeSet<Vec<Token>> = table.iter().map(|(c, _)| c.prompt.clone()).collect();
    let mut levels_by_prompt = Vec::new();
    let mut missing = Vec::new();
    for prompt in &prompts {
        let levels = model.enumerate_contexts(prompt)?;
        for ctx in levels.iter().flatten() {
            if table.get(ctx).is_none() {
                missing.push(ctx.key());
            }
        }
        levels_by_prompt.push(levels);
    }
    if !missing.is_empty() {
        return Err(Error::MissingEntries(missing));
    }
    let mut report = BellmanReport {
        max_residual: 0.0,
        worst: None,
        checked: 0,
    };
    for levels in &levels_by_prompt {
        for ctx in levels.iter().rev().flatten() {
            let v = table.get(ctx).unwrap();
            let target = if ctx.is_terminated(eos) {
                reward.terminal_reward(&ctx.prompt, &ctx.prefix)?
            } else {
                let dist = model.next_token_dist(ctx)?;
                dist.probs()
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(z, p)| p * table.get(&ctx.child(z)).unwrap())
                    .sum()
            };
            let residual = (v - target).abs();
            report.checked += 1;
            if residual > report.max_residual || report.worst.is_none() {
                report.max_residual = residual;
                report.worst = Some(ctx.clone());
            }
        }
    }
    Ok(report)
}

/// The expected CD-FUDGE gradient next to the gradient of the exact value-regression
/// loss `½ Σ_t (V_θ(y^t) - V*(y^t))²`, both computed by enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub expected_fudge: Gradient,
    pub exact: Gradient,
    /// Largest absolute coordinate difference.
    pub gap: f64,
}

pub fn fudge_gradient_check<S: TrainableScorer>(
    scorer: &S,
    model: &BaseModel,
    reward: &RewardFn,
    prompts: &PromptSet,
) -> Result<GradientCheck> {
    let mut fudge = Gradient::new();
    let mut exact = Gradient::new();
    for (prompt, mu) in prompts.iter() {
        let single = PromptSet::new(vec![prompt.to_vec()], None)?;
        let table = ValueTable::build(model, reward, &single)?;
        for (response, p) in model.enumerate_responses(prompt)? {
            let r = reward.terminal_reward(prompt, &response)?;
            for ctx in Context::prefixes(prompt, &response) {
                let v = scorer.score(&ctx);
                let weight = mu * p;
                scorer.add_gradient(&ctx, weight * (v - r), &mut fudge);
                scorer.add_gradient(&ctx, weight * (v - table.get(&ctx).unwrap()), &mut exact);
            }
        }
    }
    let keys: BTreeSet<&ParamId> = fudge.keys().chain(exact.keys()).collect();
    let gap = keys
        .into_iter()
        .map(|k| (fudge.get(k).unwrap_or(&0.0) - exact.get(k).unwrap_or(&0.0)).abs())
        .fold(0.0, f64::max);
    Ok(GradientCheck {
        expected_fudge: fudge,
        exact,
        gap,
    })
}
