//! Tokenwise and blockwise controlled decoding, best-of-K and plain sampling.

use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::oracle::kl_between;
use crate::reward::RewardFn;
use crate::scorer::{check_vocab, PrefixScorer};
use crate::seqmodel::{BaseModel, Context, Token};
use crate::stream::RandomStream;

/// A decoding procedure and the objects it borrows.
#[derive(Clone, Copy)]
pub enum Strategy<'a> {
    Base,
    Tokenwise {
        lambda: f64,
        scorer: &'a dyn PrefixScorer,
    },
    Blockwise {
        k: usize,
        m: usize,
        scorer: &'a dyn PrefixScorer,
    },
    BestOfK {
        k: usize,
        reward: &'a RewardFn,
    },
}

impl std::fmt::Debug for Strategy<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Base => write!(f, "Base"),
            Strategy::Tokenwise { lambda, .. } => write!(f, "Tokenwise {{ lambda: {lambda} }}"),
            Strategy::Blockwise { k, m, .. } => write!(f, "Blockwise {{ k: {k}, m: {m} }}"),
            Strategy::BestOfK { k, .. } => write!(f, "BestOfK {{ k: {k} }}"),
        }
    }
}

impl Strategy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Base => "base",
            Strategy::Tokenwise { .. } => "tokenwise",
            Strategy::Blockwise { .. } => "blockwise",
            Strategy::BestOfK { .. } => "best_of_k",
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Strategy::Tokenwise { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            Strategy::Blockwise { k, .. } | Strategy::BestOfK { k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn m(&self) -> Option<usize> {
        match self {
            Strategy::Blockwise { m, .. } => Some(*m),
            _ => None,
        }
    }

    pub fn validate(&self, model: &BaseModel) -> Result<()> {
        match self {
            Strategy::Base => Ok(()),
            Strategy::Tokenwise { lambda, scorer } => {
                check_lambda(*lambda)?;
                check_vocab(*scorer, model.vocab())
            }
            Strategy::Blockwise { k, m, scorer } => {
                if *k == 0 || *m == 0 {
                    return Err(Error::InvalidConfig(
                        "blockwise decoding needs K >= 1 and M >= 1".into(),
                    ));
                }
                check_vocab(*scorer, model.vocab())
            }
            Strategy::BestOfK { k, reward } => {
                if *k == 0 {
                    return Err(Error::InvalidConfig("best-of-K needs K >= 1".into()));
                }
                if reward.eos() != model.eos() {
                    return Err(Error::InvalidConfig(
                        "reward and model disagree on EOS".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecodePolicySpec<'a> {
    pub strategy: Strategy<'a>,
    pub seed: u64,
}

/// One decision of a decode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepRecord {
    /// A single token drawn from `probs`.
    Token {
        position: usize,
        probs: Vec<f64>,
        token: Token,
    },
    /// A block chosen among sampled candidates.
    Block {
        position: usize,
        candidates: Vec<Vec<Token>>,
        scores: Vec<f64>,
        selected: usize,
    },
    /// EOS appended at the horizon without selection.
    Forced { position: usize },
    /// A complete response chosen by reward.
    Rollouts {
        candidates: Vec<Vec<Token>>,
        rewards: Vec<f64>,
        selected: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub strategy: String,
    pub seed: u64,
    pub prompt: Vec<Token>,
    /// The response, ending in EOS.
    pub sequence: Vec<Token>,
    pub steps: Vec<StepRecord>,
    /// Log-probability of the response under the decoding policy, when it has a
    /// tractable per-token form.
    pub aligned_logprob: Option<f64>,
    pub base_logprob: f64,
    /// Mean per-step `KL(π(· | ctx) ‖ π_ref(· | ctx))`, tokenwise decoding only.
    pub mean_token_kl: Option<f64>,
}

impl DecodeTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(())
}

fn check_score(v: f64, ctx: &Context) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Precondition(format!("scorer returned {v} at {ctx}")))
    }
}

/// `π(z | ctx) ∝ π_ref(z | ctx) · exp(λ V_θ([ctx, z]))`.
pub fn tokenwise_policy(
    model: &BaseModel,
    scorer: &dyn PrefixScorer,
    lambda: f64,
    ctx: &Context,
) -> Result<Distribution> {
    check_lambda(lambda)?;
    let base = model.next_token_dist(ctx)?;
    let next = scorer.score_all_next(ctx);
    if next.len() != base.len() {
        return Err(Error::VocabMismatch {
            expected: format!("{} tokens", base.len()),
            found: format!("{} scores", next.len()),
        });
    }
    let mut logits = Vec::with_capacity(base.len());
    for (z, v) in next.into_iter().enumerate() {
        let lp = base.log_prob(z);
        if lp == f64::NEG_INFINITY {
            logits.push(lp);
        } else {
            logits.push(lp + lambda * check_score(v, &ctx.child(z))?);
        }
    }
    if lambda == 0.0 {
        return Ok(base);
    }
    Distribution::from_logits(&logits)
}

fn check_prompt(model: &BaseModel, prompt: &[Token]) -> Result<()> {
    for &t in prompt {
        model.vocab().check(t)?;
    }
    if prompt.contains(&model.eos()) {
        return Err(Error::Precondition("prompt contains EOS".into()));
    }
    Ok(())
}

/// Sequence, steps, and summed aligned log-prob, base log-prob and tokenwise KL.
type TokenLoop = (Vec<Token>, Vec<StepRecord>, f64, f64, f64);

fn token_loop(
    model: &BaseModel,
    prompt: &[Token],
    stream: &RandomStream,
    mut policy: impl FnMut(&Context, &Distribution) -> Result<Distribution>,
) -> Result<TokenLoop> {
    check_prompt(model, prompt)?;
    let mut ctx = Context::root(prompt);
    let mut steps = Vec::new();
    let (mut aligned, mut base_lp, mut kl) = (0.0, 0.0, 0.0);
    while !ctx.is_terminated(model.eos()) {
        let base = model.next_token_dist(&ctx)?;
        let pi = policy(&ctx, &base)?;
        let z = pi.sample_with(stream.uniform(0, ctx.len()));
        aligned += pi.log_prob(z);
        base_lp += base.log_prob(z);
        kl += kl_between(&pi, &base);
        steps.push(StepRecord::Token {
            position: ctx.len(),
            probs: pi.probs().to_vec(),
            token: z,
        });
        ctx.prefix.push(z);
    }
    Ok((ctx.prefix, steps, aligned, base_lp, kl))
}

/// Plain ancestral sampling from the base model.
pub fn decode_base(
    model: &BaseModel,
    prompt: &[Token],
    stream: &RandomStream,
) -> Result<DecodeTrace> {
    let (sequence, steps, aligned, base_lp, _) =
        token_loop(model, prompt, stream, |_, base| Ok(base.clone()))?;
    Ok(DecodeTrace {
        strategy: "base".into(),
        seed: stream.seed(),
        prompt: prompt.to_vec(),
        sequence,
        steps,
        aligned_logprob: Some(aligned),
        base_logprob: base_lp,
        mean_token_kl: None,
    })
}

/// Samples each token from [`tokenwise_policy`].
pub fn decode_tokenwise(
    model: &BaseModel,
    scorer: &dyn PrefixScorer,
    lambda: f64,
    prompt: &[Token],
    stream: &RandomStream,
) -> Result<DecodeTrace> {
    check_lambda(lambda)?;
    check_vocab(scorer, model.vocab())?;
    let (sequence, steps, aligned, base_lp, kl) = token_loop(model, prompt, stream, |ctx, _| {
        tokenwise_policy(model, scorer, lambda, ctx)
    })?;
    let n = steps.len() as f64;
    Ok(DecodeTrace {
        strategy: "tokenwise".into(),
        seed: stream.seed(),
        prompt: prompt.to_vec(),
        sequence,
        steps,
        aligned_logprob: Some(aligned),
        base_logprob: base_lp,
        mean_token_kl: Some(kl / n),
    })
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// At each block boundary draws `k` base continuations of up to `m` tokens and keeps
/// the one whose extended context scores highest (lowest index on ties). Candidate
/// `c` draws from lane `c` of the stream.
pub fn decode_blockwise(
    model: &BaseModel,
    scorer: &dyn PrefixScorer,
    k: usize,
    m: usize,
    prompt: &[Token],
    stream: &RandomStream,
) -> Result<DecodeTrace> {
    Strategy::Blockwise { k, m, scorer }.validate(model)?;
    check_prompt(model, prompt)?;
    let eos = model.eos();
    let mut ctx = Context::root(prompt);
    let mut steps = Vec::new();
    while !ctx.is_terminated(eos) {
        if ctx.len() + 1 == model.t_max() {
            steps.push(StepRecord::Forced {
                position: ctx.len(),
            });
            ctx.prefix.push(eos);
            continue;
        }
        let candidates = (0..k as u64)
            .map(|c| model.sample_continuation(&ctx, stream, c, m))
            .collect::<Result<Vec<_>>>()?;
        let scores = candidates
            .iter()
            .map(|b| {
                let next = ctx.extended(b);
                check_score(scorer.score(&next), &next)
            })
            .collect::<Result<Vec<_>>>()?;
        let selected = first_argmax(&scores);
        let position = ctx.len();
        ctx.prefix.extend_from_slice(&candidates[selected]);
        steps.push(StepRecord::Block {
            position,
            candidates,
            scores,
            selected,
        });
    }
    let base_logprob = model.sequence_logprob(prompt, &ctx.prefix)?;
    Ok(DecodeTrace {
        strategy: "blockwise".into(),
        seed: stream.seed(),
        prompt: prompt.to_vec(),
        sequence: ctx.prefix,
        steps,
        aligned_logprob: None,
        base_logprob,
        mean_token_kl: None,
    })
}

/// Draws `k` complete base responses (candidate `c` on lane `c`) and returns the one
/// with the highest reward, lowest index on ties.
pub fn best_of_k(
    model: &BaseModel,
    reward: &RewardFn,
    k: usize,
    prompt: &[Token],
    stream: &RandomStream,
) -> Result<DecodeTrace> {
    Strategy::BestOfK { k, reward }.validate(model)?;
    check_prompt(model, prompt)?;
    let root = Context::root(prompt);
    let candidates = (0..k as u64)
        .map(|c| model.sample_continuation(&root, stream, c, usize::MAX))
        .collect::<Result<Vec<_>>>()?;
    let rewards = candidates
        .iter()
        .map(|y| reward.terminal_reward(prompt, y))
        .collect::<Result<Vec<_>>>()?;
    let selected = first_argmax(&rewards);
    let sequence = candidates[selected].clone();
    let base_logprob = model.sequence_logprob(prompt, &sequence)?;
    Ok(DecodeTrace {
        strategy: "best_of_k".into(),
        seed: stream.seed(),
        prompt: prompt.to_vec(),
        sequence,
        steps: vec![StepRecord::Rollouts {
            candidates,
            rewards,
            selected,
        }],
        aligned_logprob: None,
        base_logprob,
        mean_token_kl: None,
    })
}

/// Runs `strategy` on `prompt` with randomness from `stream`.
pub fn decode_with(
    strategy: &Strategy<'_>,
    model: &BaseModel,
    prompt: &[Token],
    stream: &RandomStream,
) -> Result<DecodeTrace> {
    match *strategy {
        Strategy::Base => decode_base(model, prompt, stream),
        Strategy::Tokenwise { lambda, scorer } => {
            decode_tokenwise(model, scorer, lambda, prompt, stream)
        }
        Strategy::Blockwise { k, m, scorer } => {
            decode_blockwise(model, scorer, k, m, prompt, stream)
        }
        Strategy::BestOfK { k, reward } => best_of_k(model, reward, k, prompt, stream),
    }
}

/// Runs the spec with the stream seeded by `spec.seed`.
pub fn decode(
    spec: &DecodePolicySpec<'_>,
    model: &BaseModel,
    prompt: &[Token],
) -> Result<DecodeTrace> {
    decode_with(&spec.strategy, model, prompt, &RandomStream::new(spec.seed))
}
