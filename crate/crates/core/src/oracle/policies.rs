//! Exact output distributions of the decoding procedures, by enumeration.

use std::collections::BTreeMap;

use crate::decode::tokenwise_policy;
use crate::error::{Error, Result};
use crate::reward::RewardFn;
use crate::scorer::PrefixScorer;
use crate::seqmodel::{BaseModel, Context, Token, ENUMERATION_LIMIT};

/// Complete responses with their probabilities, sorted by response.
pub type SequenceDistribution = Vec<(Vec<Token>, f64)>;

fn collect(map: BTreeMap<Vec<Token>, f64>) -> SequenceDistribution {
    map.into_iter().filter(|(_, p)| *p > 0.0).collect()
}

pub fn base_distribution(model: &BaseModel, prompt: &[Token]) -> Result<SequenceDistribution> {
    let mut map = BTreeMap::new();
    for (y, p) in model.enumerate_responses(prompt)? {
        *map.entry(y).or_insert(0.0) += p;
    }
    Ok(collect(map))
}

pub fn tokenwise_distribution(
    model: &BaseModel,
    scorer: &dyn PrefixScorer,
    lambda: f64,
    prompt: &[Token],
) -> Result<SequenceDistribution> {
    let mut map = BTreeMap::new();
    let mut stack = vec![(Context::root(prompt), 1.0)];
    let mut visited = 0usize;
    while let Some((ctx, prob)) = stack.pop() {
        visited += 1;
        if visited > ENUMERATION_LIMIT {
            return Err(Error::TooLarge {
                limit: ENUMERATION_LIMIT,
            });
        }
        if ctx.is_terminated(model.eos()) {
            *map.entry(ctx.prefix).or_insert(0.0) += prob;
            continue;
        }
        let pi = tokenwise_policy(model, scorer, lambda, &ctx)?;
        for (z, &q) in pi.probs().iter().enumerate() {
            if q > 0.0 {
                stack.push((ctx.child(z), prob * q));
            }
        }
    }
    Ok(collect(map))
}

/// Every block of up to `m` tokens continuing `ctx` (stopping at EOS) with its
/// probability under the base model.
pub fn enumerate_blocks(
    model: &BaseModel,
    ctx: &Context,
    m: usize,
) -> Result<Vec<(Vec<Token>, f64)>> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 1.0)];
    while let Some((block, prob)) = stack.pop() {
        let here = ctx.extended(&block);
        if block.len() == m || here.is_terminated(model.eos()) {
            out.push((block, prob));
            if out.len() > ENUMERATION_LIMIT {
                return Err(Error::TooLarge {
                    limit: ENUMERATION_LIMIT,
                });
            }
            continue;
        }
        let dist = model.next_token_dist(&here)?;
        for (z, &p) in dist.probs().iter().enumerate().rev() {
            if p > 0.0 {
                let mut next = block.clone();
                next.push(z);
                stack.push((next, prob * p));
            }
        }
    }
    Ok(out)
}

/// Probability that each item wins a best-of-`k` draw: `k` i.i.d. draws from
/// `probs`, highest score wins, ties go to the earliest draw.
///
/// Items with equal scores form a group `s` with mass `q_s`; the group wins with
/// probability `F(s)^k - F(s⁻)^k` and splits that in proportion to `p_b / q_s`.
pub fn selection_probabilities(scores: &[f64], probs: &[f64], k: usize) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut group_prob = vec![0.0; distinct.len()];
    for (s, p) in scores.iter().zip(probs) {
        let g = distinct.partition_point(|d| d.total_cmp(s).is_lt());
        group_prob[g] += p;
    }
    let mut below = 0.0;
    let mut win = Vec::with_capacity(distinct.len());
    for q in &group_prob {
        let upto: f64 = below + q;
        win.push(upto.min(1.0).powi(k as i32) - below.min(1.0).powi(k as i32));
        below = upto;
    }
    scores
        .iter()
        .zip(probs)
        .map(|(s, p)| {
            let g = distinct.partition_point(|d| d.total_cmp(s).is_lt());
            if group_prob[g] > 0.0 {
                win[g] * p / group_prob[g]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn blockwise_distribution(
    model: &BaseModel,
    scorer: &dyn PrefixScorer,
    k: usize,
    m: usize,
    prompt: &[Token],
) -> Result<SequenceDistribution> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidConfig(
            "blockwise decoding needs K >= 1 and M >= 1".into(),
        ));
    }
    let eos = model.eos();
    let mut map = BTreeMap::new();
    let mut stack = vec![(Context::root(prompt), 1.0)];
    while let Some((ctx, prob)) = stack.pop() {
        if ctx.is_terminated(eos) {
            *map.entry(ctx.prefix).or_insert(0.0) += prob;
            continue;
        }
        if ctx.len() + 1 == model.t_max() {
            stack.push((ctx.child(eos), prob));
            continue;
        }
        let blocks = enumerate_blocks(model, &ctx, m)?;
        let scores: Vec<f64> = blocks
            .iter()
            .map(|(b, _)| scorer.score(&ctx.extended(b)))
            .collect();
        let probs: Vec<f64> = blocks.iter().map(|(_, p)| *p).collect();
        for ((block, _), w) in blocks
            .iter()
            .zip(selection_probabilities(&scores, &probs, k))
        {
            if w > 0.0 {
                stack.push((ctx.extended(block), prob * w));
            }
        }
    }
    Ok(collect(map))
}

pub fn best_of_k_distribution(
    model: &BaseModel,
    reward: &RewardFn,
    k: usize,
    prompt: &[Token],
) -> Result<SequenceDistribution> {
    if k == 0 {
        return Err(Error::InvalidConfig("best-of-K needs K >= 1".into()));
    }
    let responses = model.enumerate_responses(prompt)?;
    let scores = responses
        .iter()
        .map(|(y, _)| reward.terminal_reward(prompt, y))
        .collect::<Result<Vec<f64>>>()?;
    let probs: Vec<f64> = responses.iter().map(|(_, p)| *p).collect();
    let mut map = BTreeMap::new();
    for ((y, _), w) in responses
        .into_iter()
        .zip(selection_probabilities(&scores, &probs, k))
    {
        *map.entry(y).or_insert(0.0) += w;
    }
    Ok(collect(map))
}

/// `KL(q ‖ π_ref(· | prompt))` over complete responses.
pub fn sequence_kl(q: &SequenceDistribution, model: &BaseModel, prompt: &[Token]) -> Result<f64> {
    let mut kl = 0.0;
    for (y, p) in q {
        if *p > 0.0 {
            let lp = model.sequence_logprob(prompt, y)?;
            if lp == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            kl += p * (p.ln() - lp);
        }
    }
    Ok(kl.max(0.0))
}

/// `E_q[r(prompt, y)]`.
pub fn sequence_reward(
    q: &SequenceDistribution,
    reward: &RewardFn,
    prompt: &[Token],
) -> Result<f64> {
    q.iter()
        .map(|(y, p)| Ok(p * reward.terminal_reward(prompt, y)?))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ValueTable;
    use crate::scorer::TabularScorer;
    use crate::seqmodel::PromptSet;

    fn brute_force(scores: &[f64], probs: &[f64], k: usize) -> Vec<f64> {
        let n = scores.len();
        let mut out = vec![0.0; n];
        let mut idx = vec![0usize; k];
        loop {
            let p: f64 = idx.iter().map(|&i| probs[i]).product();
            let mut best = 0;
            for j in 1..k {
                if scores[idx[j]] > scores[idx[best]] {
                    best = j;
                }
            }
            out[idx[best]] += p;
            let mut pos = 0;
            loop {
                if pos == k {
                    return out;
                }
                idx[pos] += 1;
                if idx[pos] < n {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn selection_matches_brute_force() {
        let scores = [0.3, 0.1, 0.3, 0.7, 0.1];
        let probs = [0.1, 0.25, 0.3, 0.05, 0.3];
        for k in 1..=4 {
            let exact = selection_probabilities(&scores, &probs, k);
            let bf = brute_force(&scores, &probs, k);
            for (a, b) in exact.iter().zip(&bf) {
                assert!((a - b).abs() < 1e-12, "k={k}: {exact:?} vs {bf:?}");
            }
            assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k1_and_lambda0_are_base() {
        let m = BaseModel::tiny2();
        let r = RewardFn::length(m.vocab(), 3).unwrap();
        let s = TabularScorer::from_value_table(
            m.vocab(),
            &ValueTable::build(&m, &r, &PromptSet::empty_prompt()).unwrap(),
        );
        let base = base_distribution(&m, &[]).unwrap();
        for q in [
            blockwise_distribution(&m, &s, 1, 2, &[]).unwrap(),
            tokenwise_distribution(&m, &s, 0.0, &[]).unwrap(),
            best_of_k_distribution(&m, &r, 1, &[]).unwrap(),
        ] {
            assert_eq!(q.len(), base.len());
            for ((y1, p1), (y2, p2)) in q.iter().zip(&base) {
                assert_eq!(y1, y2);
                assert!((p1 - p2).abs() < 1e-12);
            }
            assert!(sequence_kl(&q, &m, &[]).unwrap() < 1e-12);
        }
    }

    #[test]
    fn best_of_k_kl_within_bound() {
        let m = BaseModel::tiny2();
        let r = RewardFn::lexicon(m.vocab(), &[(0, 1.0)], 3).unwrap();
        for k in [2, 4, 8] {
            let q = best_of_k_distribution(&m, &r, k, &[]).unwrap();
            let bound = (k as f64).ln() - (k as f64 - 1.0) / k as f64;
            assert!(sequence_kl(&q, &m, &[]).unwrap() <= bound + 1e-12);
        }
    }
}
