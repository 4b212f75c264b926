//! Prefix scorers `V_θ(context)` and their trainers.

mod combined;
mod dataset;
mod linear;
mod tabular;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::seqmodel::{Context, Vocab};

pub use combined::{combine_scorers, CombinedScorer};
pub use dataset::{Provenance, Rollout, RolloutDataset};
pub use linear::LinearScorer;
pub use tabular::TabularScorer;
pub use train::{
    train_fudge, train_fudge_with, train_q, train_q_with, FudgeSource, TargetMode, TrainConfig,
};

/// Estimates the expected terminal reward of continuing a context under the base model.
pub trait PrefixScorer: Send + Sync {
    fn vocab_fingerprint(&self) -> &str;

    fn vocab_size(&self) -> usize;

    fn score(&self, ctx: &Context) -> f64;

    /// `V_θ([ctx, z])` for every token `z`.
    fn score_all_next(&self, ctx: &Context) -> Vec<f64> {
        (0..self.vocab_size())
            .map(|z| self.score(&ctx.child(z)))
            .collect()
    }
}

impl<T: PrefixScorer + ?Sized> PrefixScorer for &T {
    fn vocab_fingerprint(&self) -> &str {
        (**self).vocab_fingerprint()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn score(&self, ctx: &Context) -> f64 {
        (**self).score(ctx)
    }
    fn score_all_next(&self, ctx: &Context) -> Vec<f64> {
        (**self).score_all_next(ctx)
    }
}

impl<T: PrefixScorer + ?Sized> PrefixScorer for Box<T> {
    fn vocab_fingerprint(&self) -> &str {
        (**self).vocab_fingerprint()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn score(&self, ctx: &Context) -> f64 {
        (**self).score(ctx)
    }
    fn score_all_next(&self, ctx: &Context) -> Vec<f64> {
        (**self).score_all_next(ctx)
    }
}

/// Identifies one trainable parameter.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    /// A tabular entry.
    Entry(Context),
    /// A linear weight.
    Weight(usize),
}

pub type Gradient = BTreeMap<ParamId, f64>;

/// A scorer with exact parameter gradients.
pub trait TrainableScorer: PrefixScorer {
    /// Adds `scale · ∇_θ V_θ(ctx)` into `grad`.
    fn add_gradient(&self, ctx: &Context, scale: f64, grad: &mut Gradient);

    /// `θ ← θ - lr · grad`.
    fn apply_gradient(&mut self, grad: &Gradient, lr: f64);
}

pub(crate) fn check_vocab(scorer: &dyn PrefixScorer, vocab: &Vocab) -> Result<()> {
    if scorer.vocab_fingerprint() != vocab.fingerprint() {
        return Err(Error::VocabMismatch {
            expected: vocab.fingerprint(),
            found: scorer.vocab_fingerprint().to_string(),
        });
    }
    Ok(())
}

/// Either trainable scorer kind, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyScorer {
    Tabular(TabularScorer),
    Linear(LinearScorer),
}

impl PrefixScorer for AnyScorer {
    fn vocab_fingerprint(&self) -> &str {
        match self {
            AnyScorer::Tabular(s) => s.vocab_fingerprint(),
            AnyScorer::Linear(s) => s.vocab_fingerprint(),
        }
    }
    fn vocab_size(&self) -> usize {
        match self {
            AnyScorer::Tabular(s) => s.vocab_size(),
            AnyScorer::Linear(s) => s.vocab_size(),
        }
    }
    fn score(&self, ctx: &Context) -> f64 {
        match self {
            AnyScorer::Tabular(s) => s.score(ctx),
            AnyScorer::Linear(s) => s.score(ctx),
        }
    }
}

impl TrainableScorer for AnyScorer {
    fn add_gradient(&self, ctx: &Context, scale: f64, grad: &mut Gradient) {
        match self {
            AnyScorer::Tabular(s) => s.add_gradient(ctx, scale, grad),
            AnyScorer::Linear(s) => s.add_gradient(ctx, scale, grad),
        }
    }
    fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        match self {
            AnyScorer::Tabular(s) => s.apply_gradient(grad, lr),
            AnyScorer::Linear(s) => s.apply_gradient(grad, lr),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ScorerFile {
    Tabular {
        vocab_hash: String,
        #[serde(default)]
        default: f64,
        table: BTreeMap<String, f64>,
    },
    Linear {
        vocab_hash: String,
        weights: BTreeMap<String, f64>,
    },
}

impl AnyScorer {
    pub fn to_json(&self, vocab: &Vocab) -> Result<String> {
        check_vocab(self, vocab)?;
        let file = match self {
            AnyScorer::Tabular(s) => ScorerFile::Tabular {
                vocab_hash: s.vocab_fingerprint().to_string(),
                default: s.default_value(),
                table: s.entries().into_iter().map(|(c, v)| (c.key(), v)).collect(),
            },
            AnyScorer::Linear(s) => ScorerFile::Linear {
                vocab_hash: s.vocab_fingerprint().to_string(),
                weights: s.featurizer().weights_to_map(vocab, s.weights()),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str, vocab: &Vocab) -> Result<Self> {
        let file: ScorerFile = serde_json::from_str(text)?;
        let hash = match &file {
            ScorerFile::Tabular { vocab_hash, .. } | ScorerFile::Linear { vocab_hash, .. } => {
                vocab_hash
            }
        };
        if *hash != vocab.fingerprint() {
            return Err(Error::VocabMismatch {
                expected: vocab.fingerprint(),
                found: hash.clone(),
            });
        }
        Ok(match file {
            ScorerFile::Tabular { default, table, .. } => {
                let mut s = TabularScorer::with_default(vocab, default);
                for (k, v) in table {
                    s.set(Context::from_key(&k)?, v);
                }
                AnyScorer::Tabular(s)
            }
            ScorerFile::Linear { weights, .. } => {
                let f = Featurizer::new(vocab.len());
                let w = f.weights_from_map(vocab, &weights)?;
                AnyScorer::Linear(LinearScorer::with_weights(vocab, w)?)
            }
        })
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text, vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json(vocab)?).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ValueTable;
    use crate::reward::RewardFn;
    use crate::seqmodel::{BaseModel, PromptSet};

    #[test]
    fn checkpoint_round_trip() {
        let m = BaseModel::tiny2();
        let v = m.vocab();
        let r = RewardFn::lexicon(v, &[(0, 1.0)], 3).unwrap();
        let table = ValueTable::build(&m, &r, &PromptSet::empty_prompt()).unwrap();
        let tab = AnyScorer::Tabular(TabularScorer::from_value_table(v, &table));
        assert_eq!(
            AnyScorer::from_json(&tab.to_json(v).unwrap(), v).unwrap(),
            tab
        );

        let mut w = vec![0.0; Featurizer::new(3).dim()];
        w[0] = 0.25;
        w[13] = -1.0;
        let lin = AnyScorer::Linear(LinearScorer::with_weights(v, w).unwrap());
        assert_eq!(
            AnyScorer::from_json(&lin.to_json(v).unwrap(), v).unwrap(),
            lin
        );
    }

    #[test]
    fn checkpoint_rejects_other_vocab() {
        let v = BaseModel::tiny2().vocab().clone();
        let other = Vocab::new(["x", "y", "EOS"], "EOS").unwrap();
        let s = AnyScorer::Tabular(TabularScorer::new(&v));
        let json = s.to_json(&v).unwrap();
        assert!(matches!(
            AnyScorer::from_json(&json, &other),
            Err(Error::VocabMismatch { .. })
        ));
    }
}
