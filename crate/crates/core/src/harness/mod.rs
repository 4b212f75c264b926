//! Reward/KL tradeoff metrics and sweep drivers.

mod sweep;

use serde::{Deserialize, Serialize};

use crate::decode::{decode_base, decode_with, DecodePolicySpec, DecodeTrace, Strategy};
use crate::error::{Error, Result};
use crate::oracle::{
    base_distribution, best_of_k_distribution, blockwise_distribution, sequence_kl,
    sequence_reward, tokenwise_distribution, SequenceDistribution,
};
use crate::reward::RewardFn;
use crate::seqmodel::{BaseModel, PromptSet, Token};
use crate::stream::{derive_seed, RandomStream};

pub use sweep::{
    frontier_area, run_sweep, transfer_eval, EvalMode, Grid, PromptSpec, RewardSource, ScorerRef,
    SweepConfig, SweepOutput,
};

/// Seed index of the independent base draws that win-rates compare against.
const OPPONENT_INDEX: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlKind {
    Exact,
    Mc,
    Bound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlMode {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KlEstimate {
    pub value: f64,
    /// Standard error for Monte Carlo estimates.
    pub stderr: Option<f64>,
    pub kind: KlKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RewardEstimate {
    pub raw: f64,
    pub stderr: f64,
    /// `raw / base_mean`; `None` when the base mean is zero.
    pub normalized: Option<f64>,
    pub base_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WinRate {
    /// Fraction of pairs with `r(y) > r(z)`; ties count as losses.
    pub rate: f64,
    pub stderr: f64,
    pub ties: usize,
    pub n: usize,
}

/// One row of a tradeoff sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub strategy: String,
    pub lambda: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub kl: f64,
    pub kl_kind: KlKind,
    pub kl_stderr: Option<f64>,
    pub reward_raw: f64,
    pub reward_norm: Option<f64>,
    pub win_rate: f64,
    pub n: usize,
    pub seed: u64,
    pub wall_ms: u64,
}

/// A [`TradeoffPoint`] with the statistics that do not fit the CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub point: TradeoffPoint,
    pub reward: RewardEstimate,
    pub win: WinRate,
    /// Mean over decodes of the per-decode mean tokenwise KL (tokenwise only).
    pub mean_token_kl: Option<f64>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    Ok(())
}

/// Draw `i` of an evaluation: the prompt, the policy's decode and the paired base decode.
fn paired_draw(
    strategy: &Strategy<'_>,
    model: &BaseModel,
    prompts: &PromptSet,
    master: &RandomStream,
    i: u64,
) -> Result<(Vec<Token>, DecodeTrace, DecodeTrace)> {
    let stream = master.child(i);
    let prompt = prompts.sample(&stream).to_vec();
    let aligned = decode_with(strategy, model, &prompt, &stream)?;
    let base = decode_base(model, &prompt, &stream)?;
    Ok((prompt, aligned, base))
}

fn opponent(model: &BaseModel, prompt: &[Token], seed: u64, i: u64) -> Result<DecodeTrace> {
    decode_base(
        model,
        prompt,
        &RandomStream::new(derive_seed(seed, OPPONENT_INDEX)).child(i),
    )
}

/// Sequence-level `KL(π ‖ π_ref)`, by enumeration or as `E[log π(y) - log π_ref(y)]`
/// over `n` decodes. Blockwise and best-of-K have no tractable likelihood; use
/// [`kl_bound_bon`] or [`kl_bound_blockwise`] for them.
pub fn estimate_kl(
    spec: &DecodePolicySpec<'_>,
    model: &BaseModel,
    prompts: &PromptSet,
    n: usize,
    mode: KlMode,
) -> Result<KlEstimate> {
    let strategy = &spec.strategy;
    strategy.validate(model)?;
    if matches!(
        strategy,
        Strategy::Blockwise { .. } | Strategy::BestOfK { .. }
    ) {
        return Err(Error::UnsupportedEstimator(format!(
            "{} policies have no tractable likelihood; use kl_bound_bon / kl_bound_blockwise",
            strategy.name()
        )));
    }
    match mode {
        KlMode::Exact => {
            let mut kl = 0.0;
            for (prompt, mu) in prompts.iter() {
                let q = exact_distribution(strategy, model, prompt)?;
                kl += mu * sequence_kl(&q, model, prompt)?;
            }
            Ok(KlEstimate {
                value: kl,
                stderr: None,
                kind: KlKind::Exact,
            })
        }
        KlMode::MonteCarlo => {
            check_n(n)?;
            let master = RandomStream::new(spec.seed);
            let samples = (0..n as u64)
                .map(|i| {
                    let stream = master.child(i);
                    let prompt = prompts.sample(&stream);
                    let t = decode_with(strategy, model, prompt, &stream)?;
                    Ok(t.aligned_logprob.expect("token-level decode") - t.base_logprob)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, se) = mean_stderr(&samples);
            Ok(KlEstimate {
                value: mean,
                stderr: Some(se),
                kind: KlKind::Mc,
            })
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    Ok(())
}

/// `log K - (K - 1) / K`.
pub fn kl_bound_bon(k: usize) -> Result<f64> {
    check_k(k)?;
    let k = k as f64;
    Ok(k.ln() - (k - 1.0) / k)
}

/// Mean over `lengths` of `kl_bound_bon(K) · ⌈L / M⌉`.
pub fn kl_bound_blockwise(k: usize, lengths: &[usize], m: usize) -> Result<f64> {
    check_k(k)?;
    if m == 0 || lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::InvalidConfig(
            "blockwise bound needs M >= 1 and nonempty lengths >= 1".into(),
        ));
    }
    let per_block = kl_bound_bon(k)?;
    let blocks: usize = lengths.iter().map(|l| l.div_ceil(m)).sum();
    Ok(per_block * blocks as f64 / lengths.len() as f64)
}

/// Monte Carlo mean terminal reward over `n` decodes, normalized by the base policy's
/// mean on the same prompts and seeds.
pub fn expected_reward(
    spec: &DecodePolicySpec<'_>,
    model: &BaseModel,
    reward: &RewardFn,
    prompts: &PromptSet,
    n: usize,
) -> Result<RewardEstimate> {
    check_n(n)?;
    spec.strategy.validate(model)?;
    let master = RandomStream::new(spec.seed);
    let mut raw = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let (prompt, a, b) = paired_draw(&spec.strategy, model, prompts, &master, i)?;
        raw.push(reward.terminal_reward(&prompt, &a.sequence)?);
        base.push(reward.terminal_reward(&prompt, &b.sequence)?);
    }
    Ok(reward_estimate(&raw, &base))
}

fn reward_estimate(raw: &[f64], base: &[f64]) -> RewardEstimate {
    let (mean, stderr) = mean_stderr(raw);
    let (base_mean, _) = mean_stderr(base);
    RewardEstimate {
        raw: mean,
        stderr,
        normalized: (base_mean != 0.0).then(|| mean / base_mean),
        base_mean,
    }
}

/// Fraction of pairs `(y ~ policy, z ~ base)` on a shared prompt with `r(y) > r(z)`.
pub fn win_rate(
    spec: &DecodePolicySpec<'_>,
    model: &BaseModel,
    reward: &RewardFn,
    prompts: &PromptSet,
    n: usize,
) -> Result<WinRate> {
    check_n(n)?;
    spec.strategy.validate(model)?;
    let master = RandomStream::new(spec.seed);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let stream = master.child(i);
        let prompt = prompts.sample(&stream).to_vec();
        let y = decode_with(&spec.strategy, model, &prompt, &stream)?;
        let z = opponent(model, &prompt, spec.seed, i)?;
        outcomes.push((
            reward.terminal_reward(&prompt, &y.sequence)?,
            reward.terminal_reward(&prompt, &z.sequence)?,
        ));
    }
    Ok(win_stats(&outcomes))
}

fn win_stats(outcomes: &[(f64, f64)]) -> WinRate {
    let wins: Vec<f64> = outcomes
        .iter()
        .map(|(a, b)| if a > b { 1.0 } else { 0.0 })
        .collect();
    let (rate, stderr) = mean_stderr(&wins);
    WinRate {
        rate,
        stderr,
        ties: outcomes.iter().filter(|(a, b)| a == b).count(),
        n: outcomes.len(),
    }
}

/// Exact distribution over complete responses of a strategy, by enumeration.
pub fn exact_distribution(
    strategy: &Strategy<'_>,
    model: &BaseModel,
    prompt: &[Token],
) -> Result<SequenceDistribution> {
    strategy.validate(model)?;
    match *strategy {
        Strategy::Base => base_distribution(model, prompt),
        Strategy::Tokenwise { lambda, scorer } => {
            tokenwise_distribution(model, scorer, lambda, prompt)
        }
        Strategy::Blockwise { k, m, scorer } => blockwise_distribution(model, scorer, k, m, prompt),
        Strategy::BestOfK { k, reward } => best_of_k_distribution(model, reward, k, prompt),
    }
}

fn point_header(strategy: &Strategy<'_>, seed: u64, n: usize) -> TradeoffPoint {
    TradeoffPoint {
        strategy: strategy.name().to_string(),
        lambda: strategy.lambda(),
        k: strategy.k(),
        m: strategy.m(),
        kl: 0.0,
        kl_kind: KlKind::Exact,
        kl_stderr: None,
        reward_raw: 0.0,
        reward_norm: None,
        win_rate: 0.0,
        n,
        seed,
        wall_ms: 0,
    }
}

/// All metrics of one strategy from `n` paired Monte Carlo draws. KL is exact zero for
/// the base policy, a Monte Carlo estimate for tokenwise policies and the analytic
/// bound (on the observed response lengths) for blockwise and best-of-K.
pub fn evaluate(
    spec: &DecodePolicySpec<'_>,
    model: &BaseModel,
    reward: &RewardFn,
    prompts: &PromptSet,
    n: usize,
) -> Result<Evaluation> {
    check_n(n)?;
    let strategy = &spec.strategy;
    strategy.validate(model)?;
    let master = RandomStream::new(spec.seed);
    let mut raw = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    let mut log_ratio = Vec::with_capacity(n);
    let mut token_kl = Vec::with_capacity(n);
    let mut lengths = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let (prompt, a, b) = paired_draw(strategy, model, prompts, &master, i)?;
        let ra = reward.terminal_reward(&prompt, &a.sequence)?;
        raw.push(ra);
        base.push(reward.terminal_reward(&prompt, &b.sequence)?);
        if let Some(lp) = a.aligned_logprob {
            log_ratio.push(lp - a.base_logprob);
        }
        if let Some(k) = a.mean_token_kl {
            token_kl.push(k);
        }
        lengths.push(a.sequence.len());
        let z = opponent(model, &prompt, spec.seed, i)?;
        outcomes.push((ra, reward.terminal_reward(&prompt, &z.sequence)?));
    }
    let mut point = point_header(strategy, spec.seed, n);
    match strategy {
        Strategy::Base => {}
        Strategy::Tokenwise { .. } => {
            let (kl, se) = mean_stderr(&log_ratio);
            point.kl = kl;
            point.kl_stderr = Some(se);
            point.kl_kind = KlKind::Mc;
        }
        Strategy::Blockwise { k, m, .. } => {
            point.kl = kl_bound_blockwise(*k, &lengths, *m)?;
            point.kl_kind = KlKind::Bound;
        }
        Strategy::BestOfK { k, .. } => {
            point.kl = kl_bound_bon(*k)?;
            point.kl_kind = KlKind::Bound;
        }
    }
    let reward_est = reward_estimate(&raw, &base);
    let win = win_stats(&outcomes);
    point.reward_raw = reward_est.raw;
    point.reward_norm = reward_est.normalized;
    point.win_rate = win.rate;
    Ok(Evaluation {
        point,
        reward: reward_est,
        win,
        mean_token_kl: (!token_kl.is_empty()).then(|| mean_stderr(&token_kl).0),
    })
}

/// All metrics of one strategy by enumerating its output distribution.
pub fn evaluate_exact(
    strategy: &Strategy<'_>,
    model: &BaseModel,
    reward: &RewardFn,
    prompts: &PromptSet,
    seed: u64,
) -> Result<Evaluation> {
    let mut kl = 0.0;
    let mut raw = 0.0;
    let mut base_mean = 0.0;
    let mut win = 0.0;
    for (prompt, mu) in prompts.iter() {
        let q = exact_distribution(strategy, model, prompt)?;
        let p = base_distribution(model, prompt)?;
        kl += mu * sequence_kl(&q, model, prompt)?;
        raw += mu * sequence_reward(&q, reward, prompt)?;
        base_mean += mu * sequence_reward(&p, reward, prompt)?;
        let rp = p
            .iter()
            .map(|(z, pz)| Ok((reward.terminal_reward(prompt, z)?, *pz)))
            .collect::<Result<Vec<_>>>()?;
        for (y, qy) in &q {
            let ry = reward.terminal_reward(prompt, y)?;
            for (rz, pz) in &rp {
                if ry > *rz {
                    win += mu * qy * pz;
                }
            }
        }
    }
    let mut point = point_header(strategy, seed, 0);
    point.kl = kl;
    point.reward_raw = raw;
    point.reward_norm = (base_mean != 0.0).then(|| raw / base_mean);
    point.win_rate = win;
    Ok(Evaluation {
        point,
        reward: RewardEstimate {
            raw,
            stderr: 0.0,
            normalized: (base_mean != 0.0).then(|| raw / base_mean),
            base_mean,
        },
        win: WinRate {
            rate: win,
            stderr: 0.0,
            ties: 0,
            n: 0,
        },
        mean_token_kl: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ValueTable;
    use crate::scorer::TabularScorer;

    fn setup() -> (BaseModel, RewardFn, TabularScorer) {
        let m = BaseModel::tiny2();
        let r = RewardFn::lexicon(m.vocab(), &[(0, 1.0)], 3).unwrap();
        let s = TabularScorer::from_value_table(
            m.vocab(),
            &ValueTable::build(&m, &r, &PromptSet::empty_prompt()).unwrap(),
        );
        (m, r, s)
    }

    #[test]
    fn bound_values() {
        assert_eq!(kl_bound_bon(1).unwrap(), 0.0);
        assert!((kl_bound_bon(4).unwrap() - 0.63629).abs() < 1e-5);
        assert!((kl_bound_bon(50).unwrap() - 2.93202).abs() < 1e-5);
        assert!((kl_bound_blockwise(4, &[10], 4).unwrap() - 1.90888).abs() < 1e-5);
        assert_eq!(kl_bound_blockwise(1, &[3, 7, 9], 2).unwrap(), 0.0);
        assert_eq!(
            kl_bound_blockwise(8, &[5], 5).unwrap(),
            kl_bound_bon(8).unwrap()
        );
        assert!(kl_bound_bon(0).is_err());
        assert!(kl_bound_blockwise(2, &[], 1).is_err());
    }

    #[test]
    fn base_metrics_are_trivial() {
        let (m, r, _) = setup();
        let spec = DecodePolicySpec {
            strategy: Strategy::Base,
            seed: 4,
        };
        let p = PromptSet::empty_prompt();
        assert_eq!(
            estimate_kl(&spec, &m, &p, 100, KlMode::MonteCarlo)
                .unwrap()
                .value,
            0.0
        );
        assert_eq!(
            estimate_kl(&spec, &m, &p, 0, KlMode::Exact).unwrap().value,
            0.0
        );
        assert_eq!(
            expected_reward(&spec, &m, &r, &p, 500).unwrap().normalized,
            Some(1.0)
        );
        let c = RewardFn::constant(m.vocab(), 2.5);
        let est = expected_reward(&spec, &m, &c, &p, 50).unwrap();
        assert_eq!((est.raw, est.stderr), (2.5, 0.0));
        assert_eq!(win_rate(&spec, &m, &c, &p, 50).unwrap().rate, 0.0);
    }

    #[test]
    fn blockwise_kl_is_refused() {
        let (m, _, s) = setup();
        let spec = DecodePolicySpec {
            strategy: Strategy::Blockwise {
                k: 2,
                m: 1,
                scorer: &s,
            },
            seed: 0,
        };
        assert!(matches!(
            estimate_kl(
                &spec,
                &m,
                &PromptSet::empty_prompt(),
                10,
                KlMode::MonteCarlo
            ),
            Err(Error::UnsupportedEstimator(_))
        ));
    }

    #[test]
    fn zero_normalizer_is_flagged() {
        let (m, _, _) = setup();
        let zero = RewardFn::constant(m.vocab(), 0.0);
        let spec = DecodePolicySpec {
            strategy: Strategy::Base,
            seed: 0,
        };
        assert_eq!(
            expected_reward(&spec, &m, &zero, &PromptSet::empty_prompt(), 10)
                .unwrap()
                .normalized,
            None
        );
    }

    #[test]
    fn evaluate_agrees_with_single_metric_ops() {
        let (m, r, s) = setup();
        let p = PromptSet::empty_prompt();
        let spec = DecodePolicySpec {
            strategy: Strategy::Tokenwise {
                lambda: 1.0,
                scorer: &s,
            },
            seed: 11,
        };
        let e = evaluate(&spec, &m, &r, &p, 300).unwrap();
        assert_eq!(
            e.point.kl,
            estimate_kl(&spec, &m, &p, 300, KlMode::MonteCarlo)
                .unwrap()
                .value
        );
        assert_eq!(e.reward, expected_reward(&spec, &m, &r, &p, 300).unwrap());
        assert_eq!(e.win, win_rate(&spec, &m, &r, &p, 300).unwrap());
    }
}
