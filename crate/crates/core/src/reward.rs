//! Terminal rewards, the induced tokenwise reward, and a Bradley-Terry reward trainer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::seqmodel::{Context, Token, Vocab};

#[derive(Clone, Debug, PartialEq)]
pub enum RewardKind {
    Constant(f64),
    /// `log(T / t_max)` where `T` counts response tokens including EOS.
    Length {
        t_max: usize,
    },
    /// Sum of per-token weights divided by a fixed horizon, so the mean is taken over
    /// the horizon rather than the (variable) response length.
    Lexicon {
        weights: Vec<f64>,
        horizon: usize,
    },
    /// 1 if `target` occurs as a contiguous run in the response, else 0.
    Pattern {
        target: Vec<Token>,
    },
    Combo(Vec<(f64, RewardFn)>),
    LearnedBt {
        featurizer: Featurizer,
        weights: Vec<f64>,
        max_len: usize,
    },
}

/// A scalar reward on completed responses (bounded above), tied to an EOS token.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardFn {
    eos: Token,
    kind: RewardKind,
}

impl RewardFn {
    pub fn constant(vocab: &Vocab, value: f64) -> Self {
        RewardFn {
            eos: vocab.eos(),
            kind: RewardKind::Constant(value),
        }
    }

    pub fn length(vocab: &Vocab, t_max: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidConfig(
                "length reward needs t_max >= 1".into(),
            ));
        }
        Ok(RewardFn {
            eos: vocab.eos(),
            kind: RewardKind::Length { t_max },
        })
    }

    pub fn lexicon(vocab: &Vocab, weights: &[(Token, f64)], horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidConfig("lexicon horizon must be >= 1".into()));
        }
        let mut w = vec![0.0; vocab.len()];
        for &(t, value) in weights {
            vocab.check(t)?;
            w[t] = value;
        }
        Ok(RewardFn {
            eos: vocab.eos(),
            kind: RewardKind::Lexicon {
                weights: w,
                horizon,
            },
        })
    }

    pub fn pattern(vocab: &Vocab, target: Vec<Token>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::InvalidConfig("pattern must be nonempty".into()));
        }
        for &t in &target {
            vocab.check(t)?;
        }
        Ok(RewardFn {
            eos: vocab.eos(),
            kind: RewardKind::Pattern { target },
        })
    }

    pub fn learned(eos: Token, featurizer: Featurizer, weights: Vec<f64>, max_len: usize) -> Self {
        RewardFn {
            eos,
            kind: RewardKind::LearnedBt {
                featurizer,
                weights,
                max_len,
            },
        }
    }

    pub fn kind(&self) -> &RewardKind {
        &self.kind
    }

    pub fn eos(&self) -> Token {
        self.eos
    }

    /// r([x, y]) for a response ending in EOS. The built-in rewards read the response only.
    pub fn terminal_reward(&self, _prompt: &[Token], response: &[Token]) -> Result<f64> {
        if response.last() != Some(&self.eos) {
            return Err(Error::Precondition(
                "reward is only defined on responses ending in EOS".into(),
            ));
        }
        Ok(self.evaluate(response))
    }

    fn evaluate(&self, response: &[Token]) -> f64 {
        match &self.kind {
            RewardKind::Constant(c) => *c,
            RewardKind::Length { t_max } => (response.len() as f64 / *t_max as f64).ln(),
            RewardKind::Lexicon { weights, horizon } => {
                response
                    .iter()
                    .map(|&t| weights.get(t).copied().unwrap_or(0.0))
                    .sum::<f64>()
                    / *horizon as f64
            }
            RewardKind::Pattern { target } => {
                if response
                    .windows(target.len())
                    .any(|w| w == target.as_slice())
                {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::Combo(terms) => terms.iter().map(|(w, r)| w * r.evaluate(response)).sum(),
            RewardKind::LearnedBt {
                featurizer,
                weights,
                ..
            } => featurizer.dot(weights, response),
        }
    }

    /// R(ctx): zero unless the context just emitted EOS, then the terminal reward.
    pub fn tokenwise_reward(&self, ctx: &Context) -> f64 {
        if ctx.is_terminated(self.eos) {
            self.evaluate(&ctx.prefix)
        } else {
            0.0
        }
    }

    /// Finite upper bound on the reward.
    pub fn bound(&self) -> f64 {
        match &self.kind {
            RewardKind::Constant(c) => *c,
            RewardKind::Length { .. } => 0.0,
            RewardKind::Lexicon { weights, .. } => weights.iter().copied().fold(0.0, f64::max),
            RewardKind::Pattern { .. } => 1.0,
            RewardKind::Combo(terms) => terms.iter().map(|(w, r)| w.abs() * r.bound()).sum(),
            RewardKind::LearnedBt {
                featurizer,
                weights,
                max_len,
            } => weights
                .iter()
                .enumerate()
                .map(|(i, w)| w.max(0.0) * featurizer.feature_cap(i, *max_len))
                .sum(),
        }
    }
}

/// `Σ w_i r_i`; bound `Σ |w_i| bound_i`.
pub fn combine_rewards(terms: Vec<(f64, RewardFn)>) -> Result<RewardFn> {
    let first = terms
        .first()
        .ok_or_else(|| Error::Empty("reward combination needs at least one term".into()))?;
    let eos = first.1.eos;
    for (w, r) in &terms {
        if !w.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "combination weight {w} is not finite"
            )));
        }
        if r.eos != eos {
            return Err(Error::InvalidConfig(
                "combined rewards disagree on EOS".into(),
            ));
        }
    }
    Ok(RewardFn {
        eos,
        kind: RewardKind::Combo(terms),
    })
}

/// Serialized reward description with symbolic tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    Constant {
        value: f64,
    },
    Length {
        t_max: usize,
    },
    Lexicon {
        weights: BTreeMap<String, f64>,
        horizon: usize,
    },
    Pattern {
        target: Vec<String>,
    },
    LinearCombo {
        terms: Vec<WeightedReward>,
    },
    LearnedBt {
        weights: BTreeMap<String, f64>,
        max_len: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedReward {
    pub weight: f64,
    pub reward: RewardSpec,
}

impl RewardSpec {
    pub fn resolve(&self, vocab: &Vocab) -> Result<RewardFn> {
        match self {
            RewardSpec::Constant { value } => Ok(RewardFn::constant(vocab, *value)),
            RewardSpec::Length { t_max } => RewardFn::length(vocab, *t_max),
            RewardSpec::Lexicon { weights, horizon } => {
                let w = weights
                    .iter()
                    .map(|(s, v)| Ok((vocab.token(s)?, *v)))
                    .collect::<Result<Vec<_>>>()?;
                RewardFn::lexicon(vocab, &w, *horizon)
            }
            RewardSpec::Pattern { target } => RewardFn::pattern(vocab, vocab.encode(target)?),
            RewardSpec::LinearCombo { terms } => combine_rewards(
                terms
                    .iter()
                    .map(|t| Ok((t.weight, t.reward.resolve(vocab)?)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            RewardSpec::LearnedBt { weights, max_len } => {
                let f = Featurizer::new(vocab.len());
                let w = f.weights_from_map(vocab, weights)?;
                Ok(RewardFn::learned(vocab.eos(), f, w, *max_len))
            }
        }
    }

    pub fn describe(reward: &RewardFn, vocab: &Vocab) -> RewardSpec {
        match &reward.kind {
            RewardKind::Constant(value) => RewardSpec::Constant { value: *value },
            RewardKind::Length { t_max } => RewardSpec::Length { t_max: *t_max },
            RewardKind::Lexicon { weights, horizon } => RewardSpec::Lexicon {
                weights: weights
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(t, w)| (vocab.symbol(t).to_string(), *w))
                    .collect(),
                horizon: *horizon,
            },
            RewardKind::Pattern { target } => RewardSpec::Pattern {
                target: vocab.decode(target),
            },
            RewardKind::Combo(terms) => RewardSpec::LinearCombo {
                terms: terms
                    .iter()
                    .map(|(w, r)| WeightedReward {
                        weight: *w,
                        reward: RewardSpec::describe(r, vocab),
                    })
                    .collect(),
            },
            RewardKind::LearnedBt {
                featurizer,
                weights,
                max_len,
            } => RewardSpec::LearnedBt {
                weights: featurizer.weights_to_map(vocab, weights),
                max_len: *max_len,
            },
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preferred {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub prompt: Vec<Token>,
    pub a: Vec<Token>,
    pub b: Vec<Token>,
    pub label: Preferred,
}

impl PreferencePair {
    pub fn new(
        prompt: Vec<Token>,
        a: Vec<Token>,
        b: Vec<Token>,
        label: Preferred,
        eos: Token,
    ) -> Result<Self> {
        if a.last() != Some(&eos) || b.last() != Some(&eos) {
            return Err(Error::Precondition(
                "both responses of a preference pair must end in EOS".into(),
            ));
        }
        Ok(PreferencePair {
            prompt,
            a,
            b,
            label,
        })
    }

    fn ordered(&self) -> (&[Token], &[Token]) {
        match self.label {
            Preferred::A => (&self.a, &self.b),
            Preferred::B => (&self.b, &self.a),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    prompt: Vec<String>,
    a: Vec<String>,
    b: Vec<String>,
    label: Preferred,
}

/// Reads JSONL preference pairs `{prompt, a, b, label}` with symbolic tokens.
pub fn read_pairs(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Vec<PreferencePair>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let rec: PairRecord = serde_json::from_str(line)?;
            PreferencePair::new(
                vocab.encode(&rec.prompt)?,
                vocab.encode(&rec.a)?,
                vocab.encode(&rec.b)?,
                rec.label,
                vocab.eos(),
            )
        })
        .collect()
}

pub fn write_pairs(path: impl AsRef<Path>, vocab: &Vocab, pairs: &[PreferencePair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        let rec = PairRecord {
            prompt: vocab.decode(&p.prompt),
            a: vocab.decode(&p.a),
            b: vocab.decode(&p.b),
            label: p.label,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(&path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BtConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of pairs held out for evaluation.
    pub holdout: f64,
}

impl Default for BtConfig {
    fn default() -> Self {
        BtConfig {
            lr: 0.1,
            epochs: 200,
            seed: 0,
            holdout: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BtReport {
    pub reward: RewardFn,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
    /// Mean logistic loss on the training split before the first epoch and after each epoch.
    pub loss_trace: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

type SparseDiff = Vec<(usize, f64)>;

fn feature_diff(f: &Featurizer, pair: &PreferencePair) -> SparseDiff {
    let (win, lose) = pair.ordered();
    let mut acc: BTreeMap<usize, f64> = f.features(win).into_iter().collect();
    for (i, v) in f.features(lose) {
        *acc.entry(i).or_default() -= v;
    }
    acc.into_iter().filter(|(_, v)| *v != 0.0).collect()
}

fn margin(w: &[f64], d: &SparseDiff) -> f64 {
    d.iter().map(|&(i, v)| w[i] * v).sum()
}

fn accuracy(w: &[f64], diffs: &[SparseDiff]) -> f64 {
    let score: f64 = diffs
        .iter()
        .map(|d| {
            let m = margin(w, d);
            if m > 0.0 {
                1.0
            } else if m == 0.0 {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    score / diffs.len() as f64
}

fn bt_loss(w: &[f64], diffs: &[SparseDiff]) -> f64 {
    diffs.iter().map(|d| softplus(-margin(w, d))).sum::<f64>() / diffs.len() as f64
}

/// Fits a linear reward `r = w·φ(response)` by full-batch gradient descent on the
/// Bradley-Terry logistic loss `-log σ(r_pref - r_other)`, starting from zero weights.
pub fn train_reward_bt(
    pairs: &[PreferencePair],
    vocab: &Vocab,
    max_len: usize,
    cfg: &BtConfig,
) -> Result<BtReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no preference pairs".into()));
    }
    if cfg.lr.is_nan() || cfg.lr <= 0.0 || !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::InvalidConfig(
            "BT training needs lr > 0 and holdout in [0, 1)".into(),
        ));
    }
    let f = Featurizer::new(vocab.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_heldout = (cfg.holdout * pairs.len() as f64).floor() as usize;
    let n_train = pairs.len() - n_heldout;
    if n_train == 0 {
        return Err(Error::InvalidConfig(
            "holdout leaves no training pairs".into(),
        ));
    }
    let train: Vec<SparseDiff> = order[..n_train]
        .iter()
        .map(|&i| feature_diff(&f, &pairs[i]))
        .collect();
    let heldout: Vec<SparseDiff> = order[n_train..]
        .iter()
        .map(|&i| feature_diff(&f, &pairs[i]))
        .collect();

    let mut w = vec![0.0; f.dim()];
    let mut trace = vec![bt_loss(&w, &train)];
    if train.iter().all(Vec::is_empty) {
        log::warn!("all preference feature differences are zero; returning zero weights");
    } else {
        let scale = 1.0 / train.len() as f64;
        for _ in 0..cfg.epochs {
            let mut grad = vec![0.0; f.dim()];
            for d in &train {
                // d/dw softplus(-m) = -σ(-m) Δφ
                let coeff = -sigmoid(-margin(&w, d)) * scale;
                for &(i, v) in d {
                    grad[i] += coeff * v;
                }
            }
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= cfg.lr * gi;
            }
            trace.push(bt_loss(&w, &train));
        }
    }
    let train_accuracy = accuracy(&w, &train);
    let heldout_accuracy = (!heldout.is_empty()).then(|| accuracy(&w, &heldout));
    Ok(BtReport {
        reward: RewardFn::learned(vocab.eos(), f, w, max_len),
        train_accuracy,
        heldout_accuracy,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::BaseModel;
    use crate::stream::RandomStream;

    fn vocab() -> Vocab {
        BaseModel::tiny2().vocab().clone()
    }

    fn count_a(v: &Vocab) -> RewardFn {
        RewardFn::lexicon(v, &[(0, 1.0)], 3).unwrap()
    }

    #[test]
    fn length_reward_values() {
        let v = vocab();
        let r = RewardFn::length(&v, 1024).unwrap();
        let mut y = vec![0; 1023];
        y.push(2);
        assert_eq!(r.terminal_reward(&[], &y).unwrap(), 0.0);
        let mut y = vec![0; 511];
        y.push(2);
        assert!((r.terminal_reward(&[], &y).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pattern_reward_values() {
        let v = vocab();
        let r = RewardFn::pattern(&v, vec![0, 0]).unwrap();
        assert_eq!(r.terminal_reward(&[], &[0, 0, 2]).unwrap(), 1.0);
        assert_eq!(r.terminal_reward(&[], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn unterminated_response_is_rejected() {
        let v = vocab();
        assert!(matches!(
            count_a(&v).terminal_reward(&[], &[0, 1]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn tokenwise_reward_cases() {
        let v = vocab();
        assert_eq!(
            count_a(&v).tokenwise_reward(&Context::new(vec![], vec![0, 1])),
            0.0
        );
        assert!(
            (count_a(&v).tokenwise_reward(&Context::new(vec![], vec![0, 2])) - 1.0 / 3.0).abs()
                < 1e-15
        );
        assert_eq!(
            RewardFn::constant(&v, 2.5).tokenwise_reward(&Context::new(vec![], vec![1, 2])),
            2.5
        );
    }

    fn all_contexts() -> Vec<Context> {
        BaseModel::tiny2().enumerate_contexts(&[]).unwrap().concat()
    }

    fn rewards(v: &Vocab) -> Vec<RewardFn> {
        vec![
            count_a(v),
            RewardFn::length(v, 3).unwrap(),
            RewardFn::pattern(v, vec![0, 1]).unwrap(),
            RewardFn::constant(v, -1.5),
        ]
    }

    #[test]
    fn tokenwise_reward_vanishes_before_eos() {
        let v = vocab();
        for r in rewards(&v) {
            for ctx in all_contexts().iter().filter(|c| !c.is_terminated(v.eos())) {
                assert_eq!(r.tokenwise_reward(ctx), 0.0);
            }
        }
    }

    #[test]
    fn tokenwise_rewards_telescope() {
        let v = vocab();
        let m = BaseModel::tiny2();
        for r in rewards(&v) {
            for (y, _) in m.enumerate_responses(&[]).unwrap() {
                let total: f64 = Context::prefixes(&[], &y)
                    .map(|c| r.tokenwise_reward(&c))
                    .sum();
                assert_eq!(total, r.terminal_reward(&[], &y).unwrap());
            }
        }
    }

    #[test]
    fn rewards_respect_bounds() {
        let v = vocab();
        let m = BaseModel::tiny2();
        let combo = combine_rewards(vec![
            (1.0, count_a(&v)),
            (2.0, RewardFn::pattern(&v, vec![0, 0]).unwrap()),
        ])
        .unwrap();
        for r in rewards(&v).into_iter().chain([combo]) {
            for (y, _) in m.enumerate_responses(&[]).unwrap() {
                assert!(r.terminal_reward(&[], &y).unwrap() <= r.bound() + 1e-12);
            }
        }
    }

    #[test]
    fn combinations() {
        let v = vocab();
        let m = BaseModel::tiny2();
        let r = count_a(&v);
        let identity = combine_rewards(vec![(1.0, r.clone())]).unwrap();
        let cancel = combine_rewards(vec![(1.0, r.clone()), (-1.0, r.clone())]).unwrap();
        for (y, _) in m.enumerate_responses(&[]).unwrap() {
            assert_eq!(
                identity.terminal_reward(&[], &y).unwrap(),
                r.terminal_reward(&[], &y).unwrap()
            );
            assert_eq!(cancel.terminal_reward(&[], &y).unwrap(), 0.0);
        }
        let mixed = combine_rewards(vec![
            (1.0, RewardFn::length(&v, 3).unwrap()),
            (2.0, RewardFn::pattern(&v, vec![0, 0]).unwrap()),
        ])
        .unwrap();
        assert_eq!(mixed.terminal_reward(&[], &[0, 0, 2]).unwrap(), 2.0);
        assert!(matches!(combine_rewards(vec![]), Err(Error::Empty(_))));
        assert_eq!(mixed.bound(), 2.0);
    }

    #[test]
    fn spec_round_trip() {
        let v = vocab();
        let combo = combine_rewards(vec![
            (0.5, count_a(&v)),
            (2.0, RewardFn::pattern(&v, vec![0, 0]).unwrap()),
        ])
        .unwrap();
        let spec = RewardSpec::describe(&combo, &v);
        let json = serde_json::to_string(&spec).unwrap();
        let back: RewardSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.resolve(&v).unwrap(), combo);
        let parsed: RewardSpec =
            serde_json::from_str(r#"{"kind":"lexicon","weights":{"a":1.0},"horizon":3}"#).unwrap();
        assert_eq!(parsed.resolve(&v).unwrap(), count_a(&v));
    }

    /// Responses over {a, b} of length 1..=4; the preferred one contains `b`, the other never.
    fn separable_pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
        let s = RandomStream::new(seed);
        let draw = |i: usize, j: usize, with_b: bool| -> Vec<Token> {
            let len = 1 + (s.uniform(i as u64, j) * 4.0) as usize;
            let mut y: Vec<Token> = vec![0; len];
            if with_b {
                let k = (s.uniform(i as u64, j + 1) * len as f64) as usize;
                y[k] = 1;
            }
            y.push(2);
            y
        };
        (0..n)
            .map(|i| {
                let good = draw(i, 0, true);
                let bad = draw(i, 2, false);
                if i % 2 == 0 {
                    PreferencePair::new(vec![], good, bad, Preferred::A, 2).unwrap()
                } else {
                    PreferencePair::new(vec![], bad, good, Preferred::B, 2).unwrap()
                }
            })
            .collect()
    }

    #[test]
    fn separable_pairs_are_learned() {
        let v = vocab();
        let pairs = separable_pairs(200, 5);
        let cfg = BtConfig {
            lr: 0.5,
            epochs: 300,
            seed: 1,
            holdout: 0.25,
        };
        let report = train_reward_bt(&pairs, &v, 5, &cfg).unwrap();
        assert_eq!(report.heldout_accuracy, Some(1.0));
        assert_eq!(report.train_accuracy, 1.0);
    }

    #[test]
    fn loss_is_monotone_at_small_lr() {
        let v = vocab();
        let cfg = BtConfig {
            lr: 1e-2,
            epochs: 200,
            seed: 3,
            holdout: 0.2,
        };
        let report = train_reward_bt(&separable_pairs(100, 9), &v, 5, &cfg).unwrap();
        for w in report.loss_trace.windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn symmetric_labels_give_zero_weights() {
        let v = vocab();
        let mut pairs = separable_pairs(40, 2);
        let mirrored: Vec<_> = pairs
            .iter()
            .map(|p| PreferencePair {
                label: match p.label {
                    Preferred::A => Preferred::B,
                    Preferred::B => Preferred::A,
                },
                ..p.clone()
            })
            .collect();
        pairs.extend(mirrored);
        let cfg = BtConfig {
            holdout: 0.0,
            ..BtConfig::default()
        };
        let report = train_reward_bt(&pairs, &v, 5, &cfg).unwrap();
        let RewardKind::LearnedBt { weights, .. } = report.reward.kind() else {
            panic!("expected learned reward")
        };
        assert!(weights.iter().all(|w| w.abs() < 1e-6));
    }

    #[test]
    fn zero_epochs_is_noop() {
        let v = vocab();
        let cfg = BtConfig {
            epochs: 0,
            ..BtConfig::default()
        };
        let report = train_reward_bt(&separable_pairs(50, 4), &v, 5, &cfg).unwrap();
        let RewardKind::LearnedBt { weights, .. } = report.reward.kind() else {
            panic!("expected learned reward")
        };
        assert!(weights.iter().all(|w| *w == 0.0));
        assert_eq!(report.train_accuracy, 0.5);
        assert_eq!(report.heldout_accuracy, Some(0.5));
    }

    #[test]
    fn degenerate_features_warn_and_stay_zero() {
        let v = vocab();
        let same = PreferencePair::new(vec![], vec![0, 2], vec![0, 2], Preferred::A, 2).unwrap();
        let report = train_reward_bt(
            &[same.clone(), same],
            &v,
            3,
            &BtConfig {
                holdout: 0.0,
                ..BtConfig::default()
            },
        )
        .unwrap();
        assert_eq!(report.reward.bound(), 0.0);
        assert!(train_reward_bt(&[], &v, 3, &BtConfig::default()).is_err());
    }

    #[test]
    fn pairs_jsonl_round_trip() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs = separable_pairs(5, 1);
        write_pairs(&path, &v, &pairs).unwrap();
        assert_eq!(read_pairs(&path, &v).unwrap(), pairs);
    }
}
