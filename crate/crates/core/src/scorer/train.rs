use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardFn;
use crate::seqmodel::{BaseModel, Context, PromptSet, Token};
use crate::stream::RandomStream;

use super::{check_vocab, Gradient, RolloutDataset, TrainableScorer};

/// How CD-Q forms its bootstrap target at non-terminal contexts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// `Σ_z π_ref(z | ctx) V_θ([ctx, z])`.
    #[default]
    Exact,
    /// `V_θ([ctx, z])` for a single `z ~ π_ref(· | ctx)`.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs between observer callbacks.
    pub eval_interval: usize,
    pub target: TargetMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            eval_interval: 1,
            target: TargetMode::Exact,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where CD-FUDGE gets its rollouts.
pub enum FudgeSource<'a> {
    /// Fresh base-model rollouts every epoch.
    OnPolicy {
        model: &'a BaseModel,
        reward: &'a RewardFn,
        prompts: &'a PromptSet,
        rollouts: usize,
    },
    /// A fixed dataset, reshuffled every epoch.
    Dataset(&'a RolloutDataset),
}

/// CD-FUDGE: regresses every prefix of every rollout onto its terminal reward.
/// Returns the mean per-sequence loss of each epoch.
pub fn train_fudge<S: TrainableScorer>(
    scorer: &mut S,
    source: FudgeSource<'_>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    train_fudge_with(scorer, source, cfg, |_, _| {})
}

/// [`train_fudge`] with an observer called after every `eval_interval` epochs.
pub fn train_fudge_with<S, F>(
    scorer: &mut S,
    source: FudgeSource<'_>,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<Vec<f64>>
where
    S: TrainableScorer,
    F: FnMut(usize, &S),
{
    cfg.validate()?;
    if let FudgeSource::OnPolicy {
        model, rollouts, ..
    } = &source
    {
        check_vocab(scorer, model.vocab())?;
        if *rollouts == 0 {
            return Err(Error::Empty(
                "on-policy training needs at least one rollout".into(),
            ));
        }
    }
    if let FudgeSource::Dataset(d) = &source {
        if d.is_empty() {
            return Err(Error::Empty("rollout dataset is empty".into()));
        }
    }
    let master = RandomStream::new(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let owned;
        let data = match &source {
            FudgeSource::OnPolicy {
                model,
                reward,
                prompts,
                rollouts,
            } => {
                owned = RolloutDataset::sample_on_policy(
                    model,
                    reward,
                    prompts,
                    *rollouts,
                    &master.child(epoch as u64),
                )?;
                &owned
            }
            FudgeSource::Dataset(d) => *d,
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = Gradient::new();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let rec = &data.records()[i];
                for ctx in Context::prefixes(&rec.prompt, &rec.response) {
                    let err = scorer.score(&ctx) - rec.reward;
                    total += 0.5 * err * err;
                    scorer.add_gradient(&ctx, scale * err, &mut grad);
                }
            }
            scorer.apply_gradient(&grad, cfg.lr);
        }
        let loss = total / data.len() as f64;
        debug!("fudge epoch {epoch}: loss {loss:.6}");
        trace.push(loss);
        if cfg.eval_interval > 0 && (epoch + 1) % cfg.eval_interval == 0 {
            observe(epoch, scorer);
        }
    }
    Ok(trace)
}

/// CD-Q: regresses `V_θ(ctx)` onto a stop-gradient one-step bootstrap of itself,
/// anchored at the terminal reward on EOS. `reward`, when given, overrides the rewards
/// stored in the dataset.
pub fn train_q<S: TrainableScorer>(
    scorer: &mut S,
    data: &RolloutDataset,
    model: &BaseModel,
    reward: Option<&RewardFn>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    train_q_with(scorer, data, model, reward, cfg, |_, _| {})
}

/// [`train_q`] with an observer called after every `eval_interval` epochs.
pub fn train_q_with<S, F>(
    scorer: &mut S,
    data: &RolloutDataset,
    model: &BaseModel,
    reward: Option<&RewardFn>,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<Vec<f64>>
where
    S: TrainableScorer,
    F: FnMut(usize, &S),
{
    cfg.validate()?;
    check_vocab(scorer, model.vocab())?;
    if data.is_empty() {
        return Err(Error::Empty("rollout dataset is empty".into()));
    }
    let eos = model.eos();
    let rewards = data
        .records()
        .iter()
        .map(|r| match reward {
            Some(f) => f.terminal_reward(&r.prompt, &r.response),
            None => Ok(r.reward),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut target_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    target_rng.set_stream(1);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = Gradient::new();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let rec = &data.records()[i];
                for ctx in Context::prefixes(&rec.prompt, &rec.response) {
                    let target = q_target(
                        scorer,
                        model,
                        &ctx,
                        eos,
                        rewards[i],
                        cfg.target,
                        &mut target_rng,
                    )?;
                    let err = scorer.score(&ctx) - target;
                    total += 0.5 * err * err;
                    scorer.add_gradient(&ctx, scale * err, &mut grad);
                }
            }
            scorer.apply_gradient(&grad, cfg.lr);
        }
        let loss = total / data.len() as f64;
        debug!("q epoch {epoch}: loss {loss:.6}");
        trace.push(loss);
        if cfg.eval_interval > 0 && (epoch + 1) % cfg.eval_interval == 0 {
            observe(epoch, scorer);
        }
    }
    Ok(trace)
}

fn q_target<S: TrainableScorer>(
    scorer: &S,
    model: &BaseModel,
    ctx: &Context,
    eos: Token,
    reward: f64,
    mode: TargetMode,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if ctx.is_terminated(eos) {
        return Ok(reward);
    }
    let dist = model.next_token_dist(ctx)?;
    Ok(match mode {
        TargetMode::Exact => {
            let next = scorer.score_all_next(ctx);
            dist.probs()
                .iter()
                .zip(&next)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, v)| p * v)
                .sum()
        }
        TargetMode::Sampled => {
            let z = dist.sample_with(rng.random::<f64>());
            scorer.score(&ctx.child(z))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exact_value;
    use crate::scorer::{LinearScorer, PrefixScorer, TabularScorer};

    fn setup() -> (BaseModel, RewardFn) {
        let m = BaseModel::tiny2();
        let r = RewardFn::lexicon(m.vocab(), &[(0, 1.0)], 3).unwrap();
        (m, r)
    }

    #[test]
    fn fudge_loss_decreases_on_fixed_data() {
        let (m, r) = setup();
        let data = RolloutDataset::enumerate(&m, &r, &PromptSet::empty_prompt()).unwrap();
        let mut s = TabularScorer::new(m.vocab());
        let cfg = TrainConfig {
            lr: 0.2,
            epochs: 30,
            batch_size: 7,
            ..Default::default()
        };
        let trace = train_fudge(&mut s, FudgeSource::Dataset(&data), &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn q_exact_converges_to_values() {
        let (m, r) = setup();
        let data = RolloutDataset::enumerate(&m, &r, &PromptSet::empty_prompt()).unwrap();
        let mut s = TabularScorer::new(m.vocab());
        let cfg = TrainConfig {
            lr: 0.5,
            epochs: 300,
            batch_size: 1,
            ..Default::default()
        };
        train_q(&mut s, &data, &m, None, &cfg).unwrap();
        for ctx in m
            .enumerate_contexts(&[])
            .unwrap()
            .concat()
            .into_iter()
            .skip(1)
        {
            assert!(
                (s.score(&ctx) - exact_value(&m, &r, &ctx).unwrap()).abs() < 1e-6,
                "{ctx}"
            );
        }
    }

    #[test]
    fn reward_override_replaces_stored_rewards() {
        let (m, r) = setup();
        let data = RolloutDataset::enumerate(
            &m,
            &RewardFn::constant(m.vocab(), 5.0),
            &PromptSet::empty_prompt(),
        )
        .unwrap();
        let cfg = TrainConfig {
            lr: 0.5,
            epochs: 300,
            batch_size: 1,
            ..Default::default()
        };
        let mut a = TabularScorer::new(m.vocab());
        train_q(&mut a, &data, &m, Some(&r), &cfg).unwrap();
        let ctx = Context::new(vec![], vec![0, 2]);
        assert!((a.score(&ctx) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, r) = setup();
        let empty = RolloutDataset::default();
        let mut s = LinearScorer::new(m.vocab());
        assert!(matches!(
            train_q(&mut s, &empty, &m, None, &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
        let data = RolloutDataset::enumerate(&m, &r, &PromptSet::empty_prompt()).unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train_q(&mut s, &data, &m, None, &bad).is_err());
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (m, r) = setup();
        let data = RolloutDataset::enumerate(&m, &r, &PromptSet::empty_prompt()).unwrap();
        let mut s = LinearScorer::new(m.vocab());
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train_q(&mut s, &data, &m, None, &cfg).unwrap().is_empty());
        assert_eq!(s, LinearScorer::new(m.vocab()));
    }
}
